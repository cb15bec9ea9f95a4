"""Simulator-side physical energy model.

Learners never read this module; it only feeds measured energies into the
simulation and provides ground truth for the metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphmap import TWO_PI, DirectedEdge, Graph, PathTree, path_cost


class DegenerateGeometryError(ValueError):
    """Wind so strong that the drone cannot hold its track along the edge."""


@dataclass(frozen=True)
class Configuration:
    payload: float  # kg
    wind_speed: float  # m/s
    wind_direction: float  # radians from north

    def __post_init__(self):
        if self.payload < 0 or self.wind_speed < 0:
            raise ValueError("payload and wind speed must be nonnegative")
        d = self.wind_direction % TWO_PI
        object.__setattr__(self, "wind_direction", 0.0 if d >= TWO_PI else d)

    def unloaded(self) -> "Configuration":
        return Configuration(0.0, self.wind_speed, self.wind_direction)


@dataclass(frozen=True)
class PhysicsConstants:
    a: float = 1e-4
    b: float = 1.0
    c: float = 25.0
    d: float = 1.0
    e: float = 0.0
    drone_mass: float = 1.5
    max_speed: float = 15.0

    def __post_init__(self):
        if min(self.a, self.b, self.d, self.drone_mass, self.max_speed) <= 0 or min(self.c, self.e) < 0:
            raise ValueError("physics constants must be positive (c and e may be zero)")


def true_edge_energy(edge: DirectedEdge, config: Configuration, k: PhysicsConstants) -> float:
    rel = (config.wind_direction - edge.bearing) % TWO_PI
    s = config.wind_speed
    cross = s * math.sin(rel)
    along = k.max_speed - s * math.cos(rel)
    va2 = cross * cross + along * along
    va = math.sqrt(va2)
    if va == 0.0 or along / va <= 0.0:
        raise DegenerateGeometryError(f"edge {edge.id}: crosswind exceeds the airspeed component")
    cos_beta = along / va
    return k.a * (k.drone_mass + config.payload) * (va2 * k.b + k.c) * edge.length * k.d / cos_beta + k.e


def edge_energies(g: Graph, config: Configuration, k: PhysicsConstants) -> np.ndarray:
    """Vectorised ``true_edge_energy`` over every edge of ``g``."""
    rel = np.mod(config.wind_direction - g.bearings, TWO_PI)
    s = config.wind_speed
    cross = s * np.sin(rel)
    along = k.max_speed - s * np.cos(rel)
    va2 = cross * cross + along * along
    va = np.sqrt(va2)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_beta = along / va
    if g.n_edges and not np.all(cos_beta > 0.0):
        raise DegenerateGeometryError("crosswind exceeds the airspeed component on some edge")
    return k.a * (k.drone_mass + config.payload) * (va2 * k.b + k.c) * g.lengths * k.d / cos_beta + k.e


@dataclass
class TruthCosts:
    """Cheapest true round trips under one configuration."""

    outbound: np.ndarray  # per-edge energies with payload
    inbound: np.ndarray  # per-edge energies without payload
    out_tree: PathTree
    back_tree: PathTree
    cost: dict[int, float]  # destination -> cheapest trip energy (inf if no trip)

    def trip_edges(self, dest: int) -> tuple[tuple[int, ...], tuple[int, ...]] | None:
        a, b = self.out_tree.path(dest), self.back_tree.path(dest)
        if a is None or b is None:
            return None
        return a, b


def truth_costs(g: Graph, config: Configuration, k: PhysicsConstants) -> TruthCosts:
    w_out = edge_energies(g, config, k)
    w_back = edge_energies(g, config.unloaded(), k)
    out_tree = PathTree(g, w_out, g.base, "from")
    back_tree = PathTree(g, w_back, g.base, "to")
    cost = {}
    for dest in g.sorted_destinations():
        a, b = out_tree.path(dest), back_tree.path(dest)
        cost[dest] = math.inf if a is None or b is None else path_cost(w_out, a) + path_cost(w_back, b)
    return TruthCosts(w_out, w_back, out_tree, back_tree, cost)


def choose_budget(g: Graph, k: PhysicsConstants, config: Configuration, target_fraction: float = 0.6) -> float:
    """Smallest battery budget making at least ``target_fraction`` of destinations reachable.

    Reachable fraction is a step function of the budget that jumps exactly at
    the cheapest round-trip costs, so the answer is an order statistic of
    those costs.  Destinations without any round trip never count; if the
    target cannot be met the largest finite cost is returned.
    """
    if not (0.0 < target_fraction <= 1.0):
        raise ValueError("target_fraction must be in (0, 1]")
    costs = sorted(c for c in truth_costs(g, config, k).cost.values() if math.isfinite(c))
    if not costs:
        raise ValueError("no destination has a round trip")
    n_dest = len(g.destinations)
    need = max(1, math.ceil(target_fraction * n_dest - 1e-9))
    return costs[min(need, len(costs)) - 1]
