"""Accept/reject decisions and the trips to fly.

Every strategy that consults beliefs plans along mean-weight shortest paths:
outbound under the loaded bin, return under the unloaded bin.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .beliefmodel import EnergyBelief
from .graphmap import Graph, Path, PathTree, Trip
from .reachability import SuccessProbability, trip_success_probability
from .truthmodel import Configuration, TruthCosts

STRATEGIES = ("shortest-path", "frontier", "optimal", "random")


@dataclass(frozen=True)
class Request:
    dest: int
    payload: float
    wind_speed: float
    wind_direction: float

    @property
    def config(self) -> Configuration:
        return Configuration(self.payload, self.wind_speed, self.wind_direction)


@dataclass(frozen=True)
class Decision:
    trip: Trip | None = None
    expanded: bool = False
    probability: SuccessProbability | None = None

    @property
    def accepted(self) -> bool:
        return self.trip is not None


REJECT = Decision()


@dataclass(frozen=True)
class StrategyParams:
    phi: float = 0.95
    alpha: float = 0.0
    beta: float = 0.05

    def __post_init__(self):
        if not (0.0 <= self.phi <= 1.0):
            raise ValueError("phi must be in [0, 1]")
        if self.alpha < 0.0:
            raise ValueError("alpha must be nonnegative")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("beta must be in [0, 1]")


class MeanTrees:
    """Mean-weight shortest-path trees out of and back into the base."""

    def __init__(self, belief_out: EnergyBelief, belief_back: EnergyBelief, g: Graph):
        self.belief_out = belief_out
        self.belief_back = belief_back
        self.graph = g

    @cached_property
    def outbound(self) -> PathTree:
        return PathTree(self.graph, self.belief_out.mean_weights(), self.graph.base, "from")

    @cached_property
    def inbound(self) -> PathTree:
        return PathTree(self.graph, self.belief_back.mean_weights(), self.graph.base, "to")


def _trees(beliefs: tuple[EnergyBelief, EnergyBelief], g: Graph, trees: MeanTrees | None) -> MeanTrees:
    return trees if trees is not None else MeanTrees(beliefs[0], beliefs[1], g)


def plan_shortest_path(
    beliefs: tuple[EnergyBelief, EnergyBelief],
    g: Graph,
    request: Request,
    budget: float,
    params: StrategyParams,
    trees: MeanTrees | None = None,
) -> Decision:
    t = _trees(beliefs, g, trees)
    out, back = t.outbound.path(request.dest), t.inbound.path(request.dest)
    if out is None or back is None:
        return REJECT
    trip = Trip(request.dest, out, back)
    p = trip_success_probability(beliefs[0], beliefs[1], trip, (1.0 + params.alpha) * budget)
    return Decision(trip, False, p) if p.value >= params.phi else Decision(None, False, p)


def plan_frontier(
    beliefs: tuple[EnergyBelief, EnergyBelief],
    g: Graph,
    request: Request,
    budget: float,
    params: StrategyParams,
    rng: np.random.Generator,
    trees: MeanTrees | None = None,
) -> Decision:
    """Fly the straight trip when it is safe enough, otherwise probe next to the destination.

    The probe flies base -> v_a -> dest -> v_b -> base with v_a an in-neighbour
    and v_b an out-neighbour of dest; only the legs to v_a and from v_b enter
    the probability check.
    """
    t = _trees(beliefs, g, trees)
    r = rng.random()
    if r >= params.beta:
        straight = plan_shortest_path(beliefs, g, request, budget, params, t)
        if straight.accepted:
            return straight
    dest = request.dest
    ins, outs = g.in_neighbors(dest), g.out_neighbors(dest)
    if not ins or not outs:
        return REJECT
    for _ in range(max(len(ins), len(outs))):
        va = ins[int(rng.integers(len(ins)))]
        vb = outs[int(rng.integers(len(outs)))]
        lead, tail = t.outbound.path(va), t.inbound.path(vb)
        if lead is not None and tail is not None:
            break
    else:
        return REJECT
    p = trip_success_probability(beliefs[0], beliefs[1], (lead, tail), (1.0 + params.alpha) * budget)
    if p.value < params.phi:
        return Decision(None, True, p)
    trip = Trip(dest, lead + (g.edge_between(va, dest),), (g.edge_between(dest, vb),) + tail)
    return Decision(trip, True, p)


def plan_optimal(truth: TruthCosts, g: Graph, request: Request, budget: float) -> Decision:
    """Cheapest true trip, accepted iff it fits the budget."""
    legs = truth.trip_edges(request.dest)
    if legs is None or truth.cost[request.dest] > budget:
        return REJECT
    return Decision(Trip(request.dest, legs[0], legs[1]))


def hop_distances_to(g: Graph, target: int) -> np.ndarray:
    """Fewest edges from every node to ``target`` (inf where impossible)."""
    dist = np.full(g.n_nodes, np.inf)
    dist[target] = 0
    queue = deque([target])
    while queue:
        v = queue.popleft()
        for u in g.in_neighbors(v):
            if dist[u] == np.inf:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def _random_leg(g: Graph, start: int, target: int, rng: np.random.Generator, hop_limit: int) -> Path | None:
    dist = hop_distances_to(g, target)
    if dist[start] > hop_limit:
        return None
    path: list[int] = []
    node = start
    while node != target:
        remaining = hop_limit - len(path)
        cand = [e for e in g.out_edges(node) if dist[g.edges[e].target] <= remaining - 1]
        # at least one successor is one hop closer, so cand is never empty
        w = np.array([2.0 if dist[g.edges[e].target] < dist[node] else 1.0 for e in cand])
        e = cand[int(rng.choice(len(cand), p=w / w.sum()))]
        path.append(e)
        node = g.edges[e].target
    return tuple(path)


def plan_random(g: Graph, request: Request, rng: np.random.Generator, hop_limit: int) -> Decision:
    """Random walk out to the destination and back, each leg at most ``hop_limit`` edges.

    Successors that shorten the hop distance are twice as likely, and a
    successor is only eligible if the target stays within the remaining hops.
    """
    out = _random_leg(g, g.base, request.dest, rng, hop_limit)
    if out is None:
        return REJECT
    back = _random_leg(g, request.dest, g.base, rng, hop_limit)
    if back is None:
        return REJECT
    return Decision(Trip(request.dest, out, back))
