"""Contingency planning: abort thresholds, backup paths and reserved energy.

Positions index the outbound leg: position ``i`` is the node where outbound
edge ``i`` starts, so position 0 is the base and ``len(outbound)`` is the
destination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

from scipy.integrate import quad
from scipy.special import ndtr, ndtri

from .beliefmodel import EnergyBelief
from .graphmap import Graph, Path, PathTree, Trip
from .reachability import leg_stats, success_probability, trip_success_probability

EMPTY_CONDITIONING = 1e-12


class EmptyConditioningError(ValueError):
    """The truncation event has (numerically) zero probability."""


@dataclass(frozen=True)
class LegMoments:
    known: float
    mu: float
    sigma2: float


def _moments(belief: EnergyBelief, path: Path) -> LegMoments:
    k, m, v = leg_stats(belief, [path])
    return LegMoments(float(k[0]), float(m[0]), float(v[0]))


def suffix_moments(beliefs: tuple[EnergyBelief, EnergyBelief], trip: Trip, position: int) -> LegMoments:
    """Remaining trip from ``position``: outbound rest under payload, full return without."""
    if not (0 <= position <= len(trip.outbound)):
        raise ValueError("position is not on the outbound leg")
    a = _moments(beliefs[0], trip.outbound[position:])
    b = _moments(beliefs[1], trip.inbound)
    return LegMoments(a.known + b.known, a.mu + b.mu, a.sigma2 + b.sigma2)


def remaining_trip_probability(
    beliefs: tuple[EnergyBelief, EnergyBelief], trip: Trip, position: int, remaining_budget: float
) -> float:
    m = suffix_moments(beliefs, trip, position)
    return success_probability(remaining_budget, m.known, m.mu, m.sigma2).value


def normal_quantile(p: float) -> float:
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return NormalDist().inv_cdf(p)


def delta_from_moments(m: LegMoments, budget: float, phi: float) -> float:
    """Largest energy used so far that still leaves a success probability of ``phi``."""
    if phi <= 0.0:
        return math.inf
    if m.sigma2 <= 0.0:
        return budget - (m.known + m.mu)
    q = normal_quantile(phi)
    if math.isinf(q):
        return -q
    return budget - (q * math.sqrt(m.sigma2) + m.mu + m.known)


def compute_delta(
    beliefs: tuple[EnergyBelief, EnergyBelief], trip: Trip, position: int, budget: float, phi: float
) -> float:
    return delta_from_moments(suffix_moments(beliefs, trip, position), budget, phi)


@dataclass(frozen=True)
class TruncationContext:
    mu_x: float
    sigma2_x: float
    delta: float
    mu_y: float
    sigma2_y: float
    budget: float


def _cdf_y(ctx: TruncationContext, y: float) -> float:
    if ctx.sigma2_y <= 0.0:
        return 1.0 if ctx.mu_y <= y else 0.0
    return float(ndtr((y - ctx.mu_y) / math.sqrt(ctx.sigma2_y)))


def conditioning_probability(ctx: TruncationContext) -> float:
    """P(X > delta)."""
    if ctx.sigma2_x <= 0.0:
        return 1.0 if ctx.mu_x > ctx.delta else 0.0
    return float(ndtr((ctx.mu_x - ctx.delta) / math.sqrt(ctx.sigma2_x)))


def truncated_success_probability(ctx: TruncationContext) -> float:
    """P(X + Y <= budget | X > delta) for independent Gaussians X and Y.

    The truncated X is parametrised by its survival quantile, which keeps the
    integrand bounded on [0, 1] even when the truncation event is tiny.
    """
    z = conditioning_probability(ctx)
    if z <= EMPTY_CONDITIONING:
        raise EmptyConditioningError("P(X > delta) is numerically zero")
    if ctx.sigma2_x <= 0.0:
        return _cdf_y(ctx, ctx.budget - ctx.mu_x)
    sx = math.sqrt(ctx.sigma2_x)
    if ctx.sigma2_y <= 0.0:
        # X in (delta, budget - mu_y]
        hi = ctx.budget - ctx.mu_y
        if hi <= ctx.delta:
            return 0.0
        p = ndtr((hi - ctx.mu_x) / sx) - ndtr((ctx.delta - ctx.mu_x) / sx)
        return float(min(max(p / z, 0.0), 1.0))
    sy = math.sqrt(ctx.sigma2_y)

    def integrand(u: float) -> float:
        s = z * (1.0 - u)
        if s <= 0.0:
            return 0.0
        x = ctx.mu_x - sx * ndtri(s)
        return float(ndtr((ctx.budget - x - ctx.mu_y) / sy))

    val, _ = quad(integrand, 0.0, 1.0, epsabs=1e-10, epsrel=1e-10, limit=200)
    return float(min(max(val, 0.0), 1.0))


@dataclass(frozen=True)
class SafePlan:
    trip: Trip
    backup: dict[int, Path]  # outbound position -> path to base
    delta: dict[int, float]  # outbound position -> abort threshold
    reserved: float
    kappa: float
    phi: float
    budget: float  # planning budget, reserve excluded
    backup_probability: dict[int, float | None]  # None where the node can never abort


def build_safe_trip(
    beliefs: tuple[EnergyBelief, EnergyBelief],
    g: Graph,
    trip: Trip,
    budget: float,
    phi: float,
    kappa: float,
    e_max: float,
    backup_tree: PathTree | None = None,
) -> SafePlan | None:
    """Attach abort thresholds and backups to ``trip``, or return None if it is not safe enough.

    ``budget`` is the full battery; planning uses ``budget - 2 e_max``.
    Backups are mean-weight shortest returns with the payload still on board.
    """
    if not (0.0 <= kappa <= 1.0):
        raise ValueError("kappa must be in [0, 1]")
    if e_max <= 0.0:
        raise ValueError("e_max must be positive")
    plan_budget = budget - 2.0 * e_max
    if trip_success_probability(beliefs[0], beliefs[1], trip, plan_budget).value < kappa:
        return None
    if backup_tree is None:
        backup_tree = PathTree(g, beliefs[0].mean_weights(), g.base, "to")
    node = g.base
    backups: dict[int, Path] = {}
    deltas: dict[int, float] = {}
    probs: dict[int, float | None] = {}
    for i in range(len(trip.outbound)):
        # a negative threshold aborts at once; acceptance upstream already rules that out
        d = compute_delta(beliefs, trip, i, plan_budget, phi)
        back = backup_tree.path(node)
        if back is None:
            return None
        x = _moments(beliefs[0], trip.outbound[:i])
        y = _moments(beliefs[0], back)
        ctx = TruncationContext(x.known + x.mu, x.sigma2, d, y.known + y.mu, y.sigma2, plan_budget)
        if conditioning_probability(ctx) <= EMPTY_CONDITIONING:
            p = None
        else:
            p = truncated_success_probability(ctx)
            if p < kappa:
                return None
        backups[i], deltas[i], probs[i] = back, d, p
        node = g.edges[trip.outbound[i]].target
    return SafePlan(trip, backups, deltas, 2.0 * e_max, kappa, phi, plan_budget, probs)


def abort_check(plan: SafePlan, position: int, energy_used: float) -> Path | None:
    """Backup to divert onto, or None to continue.  No checks at or after the destination."""
    if position >= len(plan.trip.outbound):
        return None
    return plan.backup[position] if energy_used > plan.delta[position] else None


def abort_by_probability(
    beliefs: tuple[EnergyBelief, EnergyBelief], plan: SafePlan, position: int, energy_used: float
) -> bool:
    """Same decision as ``abort_check`` but evaluated from the remaining success probability."""
    if position >= len(plan.trip.outbound):
        return False
    p = remaining_trip_probability(beliefs, plan.trip, position, plan.budget - energy_used)
    return p < plan.phi


def mid_edge_turnaround(spent: float, e_max: float) -> bool:
    """True once exploring the current edge has cost strictly more than ``e_max``."""
    return spent > e_max

