"""Success probabilities of paths and trips, and reachable sets.

Unknown edge energies are independent Gaussians, so the energy of a path is
its measured part plus a Gaussian whose mean and variance are the sums over
its unknown edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .beliefmodel import EnergyBelief
from .graphmap import Graph, Path, PathTree, Trip
from .truthmodel import Configuration, PhysicsConstants, truth_costs

SQRT2 = math.sqrt(2.0)
EXACT_MAX_NODES = 10
EXACT_MAX_PATHS = 200_000
# a Gaussian total never makes success certain, even where the CDF rounds to 1
BELOW_ONE = math.nextafter(1.0, 0.0)


class GraphTooLargeError(ValueError):
    """Exhaustive trip enumeration requested on a graph that is too large."""


def normal_cdf(z: float) -> float:
    if z == math.inf:
        return 1.0
    if z == -math.inf:
        return 0.0
    return 0.5 * math.erfc(-z / SQRT2)


@dataclass(frozen=True)
class SuccessProbability:
    value: float
    mu_total: float
    sigma2_total: float
    known_cost: float
    slack: float


def success_probability(budget: float, known_cost: float, mu: float, sigma2: float) -> SuccessProbability:
    """P(known + N(mu, sigma2) <= budget); a zero variance gives a step."""
    slack = budget - known_cost
    if sigma2 <= 0.0:
        value = 1.0 if mu <= slack else 0.0
    else:
        value = min(normal_cdf((slack - mu) / math.sqrt(sigma2)), BELOW_ONE)
    return SuccessProbability(value, mu, sigma2, known_cost, slack)


def leg_stats(belief: EnergyBelief, paths: Sequence[Path]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per path: summed measured energy, summed unknown means, summed unknown variances."""
    n = len(paths)
    lens = [len(p) for p in paths]
    if sum(lens) == 0:
        z = np.zeros(n)
        return z, z.copy(), z.copy()
    idx = np.fromiter((e for p in paths for e in p), dtype=np.int64, count=sum(lens))
    seg = np.repeat(np.arange(n), lens)
    known = belief.known[idx]
    kv = np.where(known, belief.known_value[idx], 0.0)
    mu = np.where(known, 0.0, belief.mu[idx])
    s2 = np.where(known, 0.0, belief.sigma2[idx])
    return (
        np.bincount(seg, weights=kv, minlength=n),
        np.bincount(seg, weights=mu, minlength=n),
        np.bincount(seg, weights=s2, minlength=n),
    )


def path_success_probability(belief: EnergyBelief, path: Path, budget: float) -> SuccessProbability:
    k, m, v = leg_stats(belief, [path])
    return success_probability(budget, float(k[0]), float(m[0]), float(v[0]))


def trip_success_probability(
    belief_out: EnergyBelief,
    belief_back: EnergyBelief,
    trip: Trip | tuple[Path, Path],
    budget: float,
) -> SuccessProbability:
    """Outbound leg judged by the loaded model, inbound leg by the unloaded one."""
    out, back = (trip.outbound, trip.inbound) if isinstance(trip, Trip) else trip
    k1, m1, v1 = leg_stats(belief_out, [out])
    k2, m2, v2 = leg_stats(belief_back, [back])
    return success_probability(budget, float(k1[0] + k2[0]), float(m1[0] + m2[0]), float(v1[0] + v2[0]))


# -- maximum reach probability ------------------------------------------------------------

def _simple_paths(g: Graph, src: int, dst: int, limit: int) -> list[Path]:
    """Every simple path src->dst in lexicographic edge-id order."""
    if src == dst:
        return [()]
    out: list[Path] = []
    stack = [(src, (), frozenset([src]))]
    while stack:
        node, path, seen = stack.pop()
        for e in reversed(g.out_edges(node)):
            t = g.edges[e].target
            if t in seen:
                continue
            if t == dst:
                out.append(path + (e,))
                if len(out) > limit:
                    raise GraphTooLargeError("too many simple paths to enumerate")
            else:
                stack.append((t, path + (e,), seen | {t}))
    out.sort()
    return out


def _surrogate_trip(belief_out: EnergyBelief, belief_back: EnergyBelief, g: Graph, dest: int) -> Trip | None:
    out = PathTree(g, belief_out.mean_weights(), g.base, "from").path(dest)
    back = PathTree(g, belief_back.mean_weights(), g.base, "to").path(dest)
    if out is None or back is None:
        return None
    return Trip(dest, out, back)


def max_reach_probability(
    belief_out: EnergyBelief,
    belief_back: EnergyBelief,
    g: Graph,
    dest: int,
    budget: float,
    mode: str = "surrogate",
) -> tuple[SuccessProbability, Trip | None]:
    """Best trip probability to ``dest``.

    ``surrogate`` scores the trip built from the two mean-weight shortest
    paths.  ``exact`` enumerates every pair of simple outbound/inbound paths
    and is meant for small graphs only.
    """
    zero = SuccessProbability(0.0, 0.0, 0.0, 0.0, budget)
    if mode == "surrogate":
        trip = _surrogate_trip(belief_out, belief_back, g, dest)
        if trip is None:
            return zero, None
        return trip_success_probability(belief_out, belief_back, trip, budget), trip
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    if g.n_nodes > EXACT_MAX_NODES:
        raise GraphTooLargeError(f"exact mode supports at most {EXACT_MAX_NODES} nodes")
    outs = _simple_paths(g, g.base, dest, EXACT_MAX_PATHS)
    backs = _simple_paths(g, dest, g.base, EXACT_MAX_PATHS)
    if not outs or not backs:
        return zero, None
    k1, m1, v1 = leg_stats(belief_out, outs)
    k2, m2, v2 = leg_stats(belief_back, backs)
    best_val, best = -1.0, (0, 0)
    chunk = max(1, 2_000_000 // len(backs))
    for start in range(0, len(outs), chunk):
        sl = slice(start, start + chunk)
        slack = budget - (k1[sl, None] + k2[None, :])
        mu = m1[sl, None] + m2[None, :]
        var = v1[sl, None] + v2[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (slack - mu) / np.sqrt(var)
        vals = np.where(var > 0, np.minimum(ndtr(z), BELOW_ONE), np.where(mu <= slack, 1.0, 0.0))
        i = int(np.argmax(vals))
        if vals.flat[i] > best_val:
            best_val = float(vals.flat[i])
            best = (start + i // len(backs), i % len(backs))
    trip = Trip(dest, outs[best[0]], backs[best[1]])
    return trip_success_probability(belief_out, belief_back, trip, budget), trip


@dataclass
class ReachableSet:
    members: frozenset[int]
    probability: dict[int, float] = field(default_factory=dict)
    trips: dict[int, Trip] = field(default_factory=dict)


def probabilistic_reachable_set(
    belief_out: EnergyBelief,
    belief_back: EnergyBelief,
    g: Graph,
    budget: float,
    phi: float,
    mode: str = "auto",
) -> ReachableSet:
    """Destinations whose maximum trip success probability is at least ``phi``.

    ``auto`` uses exhaustive enumeration on graphs of at most ten nodes and
    falls back to the surrogate when enumeration would be too large.
    """
    if not (0.0 <= phi <= 1.0):
        raise ValueError("phi must be in [0, 1]")
    dests = g.sorted_destinations()
    prob: dict[int, float] = {}
    trips: dict[int, Trip] = {}
    if mode == "auto":
        mode = "exact" if g.n_nodes <= EXACT_MAX_NODES else "surrogate"
        if mode == "exact":
            try:
                for d in dests:
                    p, t = max_reach_probability(belief_out, belief_back, g, d, budget, "exact")
                    prob[d] = p.value
                    if t is not None:
                        trips[d] = t
            except GraphTooLargeError:
                prob.clear()
                trips.clear()
                mode = "surrogate"
            else:
                return _finish(prob, trips, phi)
    if mode == "exact":
        for d in dests:
            p, t = max_reach_probability(belief_out, belief_back, g, d, budget, "exact")
            prob[d] = p.value
            if t is not None:
                trips[d] = t
        return _finish(prob, trips, phi)
    if mode != "surrogate":
        raise ValueError(f"unknown mode {mode!r}")

    out_tree = PathTree(g, belief_out.mean_weights(), g.base, "from")
    back_tree = PathTree(g, belief_back.mean_weights(), g.base, "to")
    ok = []
    for d in dests:
        a, b = out_tree.path(d), back_tree.path(d)
        if a is None or b is None:
            prob[d] = 0.0
        else:
            ok.append(d)
            trips[d] = Trip(d, a, b)
    if ok:
        k1, m1, v1 = leg_stats(belief_out, [trips[d].outbound for d in ok])
        k2, m2, v2 = leg_stats(belief_back, [trips[d].inbound for d in ok])
        for i, d in enumerate(ok):
            prob[d] = success_probability(
                budget, float(k1[i] + k2[i]), float(m1[i] + m2[i]), float(v1[i] + v2[i])
            ).value
    return _finish(prob, trips, phi)


def _finish(prob: dict[int, float], trips: dict[int, Trip], phi: float) -> ReachableSet:
    members = frozenset(d for d, p in prob.items() if p >= phi and d in trips)
    return ReachableSet(members, prob, trips)


def true_reachable_set(g: Graph, constants: PhysicsConstants, config: Configuration, budget: float) -> set[int]:
    """Destinations whose cheapest true round trip fits in ``budget``."""
    costs = truth_costs(g, config, constants).cost
    return {d for d, c in costs.items() if c <= budget}
