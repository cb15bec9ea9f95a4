"""End-to-end delivery simulation against the physical ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .beliefmodel import N_FEATURES, BeliefBank, ConfigGrid, init_prior
from .graphmap import Graph, Path, Trip, generate_grid_map, generate_random_map, import_road_network, read_map_file
from .reachability import probabilistic_reachable_set
from .safety import SafePlan, abort_check, build_safe_trip, mid_edge_turnaround
from .strategies import (
    STRATEGIES,
    Decision,
    MeanTrees,
    Request,
    StrategyParams,
    hop_distances_to,
    plan_frontier,
    plan_optimal,
    plan_random,
    plan_shortest_path,
)
from .truthmodel import Configuration, PhysicsConstants, TruthCosts, choose_budget, truth_costs

# rng stream ids, combined with the master seed and the request counter
_REQUEST_STREAM = 1
_STRATEGY_STREAM = 2
_PRIOR_STREAM = 3
# relative slack so that a trip costing exactly the budget is not lost to summation order
_ENERGY_RTOL = 1e-12


@dataclass(frozen=True)
class Ranges:
    payload: tuple[float, float] = (0.0, 2.0)
    wind_speed: tuple[float, float] = (0.0, 5.0)
    wind_direction: tuple[float, float] = (0.0, 2.0 * math.pi)

    def __post_init__(self):
        for lo, hi in (self.payload, self.wind_speed, self.wind_direction):
            if not (0.0 <= lo <= hi):
                raise ValueError("ranges must satisfy 0 <= lo <= hi")


@dataclass(frozen=True)
class SimConfig:
    map_source: str = "random:200,5"
    strategy: str = "frontier"
    requests: int = 2000
    phi: float = 0.95
    alpha: float = 0.0
    beta: float = 0.05
    kappa: float = 0.95
    safety: bool = False
    e_max: float | None = None  # None: largest believed edge energy, recomputed per request
    budget_fraction: float = 0.6
    ranges: Ranges = Ranges()
    grid_shape: tuple[int, int, int] = (4, 5, 5)
    prior_k: float = 0.06
    w0: float = 1.0
    c1: float = 1.0
    c2: float = 0.01
    cross_bin: bool = True
    min_rows: int = N_FEATURES
    seed: int = 0
    hop_slack: int = 4
    fixed_config: Configuration | None = None
    round_robin: bool = False
    constants: PhysicsConstants = PhysicsConstants()

    def __post_init__(self):
        if self.requests < 1:
            raise ValueError("requests must be at least 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        StrategyParams(self.phi, self.alpha, self.beta)
        if not (0.0 <= self.kappa <= 1.0):
            raise ValueError("kappa must be in [0, 1]")
        if not (0.0 < self.budget_fraction <= 1.0):
            raise ValueError("budget_fraction must be in (0, 1]")
        if self.e_max is not None and self.e_max <= 0:
            raise ValueError("e_max must be positive")
        if self.ranges.wind_speed[1] >= self.constants.max_speed:
            raise ValueError("wind speeds must stay below the drone's maximum speed")

    @property
    def params(self) -> StrategyParams:
        return StrategyParams(self.phi, self.alpha, self.beta)


def load_map_source(source: str, seed: int = 0) -> Graph:
    """``file``, ``random:n,k``, ``grid:r,c`` or ``osm:file``; random maps use ``seed``."""
    kind, _, arg = source.partition(":")
    if kind == "random" and arg:
        n, _, k = arg.partition(",")
        return generate_random_map(int(n), k=int(k) if k else 5, seed=seed)
    if kind == "grid" and arg:
        r, _, c = arg.partition(",")
        return generate_grid_map(int(r), int(c or r))
    if kind == "osm" and arg:
        with open(arg, "rb") as f:
            return import_road_network(f.read())
    return read_map_file(source)


def reference_config(ranges: Ranges) -> Configuration:
    """Configuration the battery budget is calibrated under: mid payload and wind speed, wind from north."""
    return Configuration(sum(ranges.payload) / 2.0, sum(ranges.wind_speed) / 2.0, 0.0)


def generate_request(rng: np.random.Generator, g: Graph, ranges: Ranges) -> Request:
    dests = g.sorted_destinations()
    dest = dests[int(rng.integers(len(dests)))]
    return Request(
        dest,
        float(rng.uniform(*ranges.payload)),
        float(rng.uniform(*ranges.wind_speed)),
        float(rng.uniform(*ranges.wind_direction)),
    )


@dataclass
class FlightOutcome:
    accepted: bool
    success: bool = False
    aborted: bool = False
    lost: bool = False
    delivered: bool = False
    energy_used: float = 0.0
    measurements: list[tuple[int, float, bool]] = field(default_factory=list)  # (edge, energy, loaded)

    @property
    def edges_measured(self) -> set[int]:
        return {e for e, _, _ in self.measurements}


def execute_flight(
    trip: Trip,
    truth: TruthCosts,
    budget: float,
    plan: SafePlan | None = None,
    unexplored: np.ndarray | None = None,
    e_max: float | None = None,
) -> FlightOutcome:
    """Fly ``trip`` against true energies.

    With a plan, the drone checks its abort threshold at every outbound node
    and turns around inside an unexplored outbound edge once it has spent
    more than ``e_max`` on it; the retreat costs as much again.  A drone
    runs out of energy as soon as its total would exceed ``budget``.
    """
    out = FlightOutcome(accepted=True)
    limit = budget * (1.0 + _ENERGY_RTOL)

    def fly(path: Path, energies: np.ndarray, loaded: bool) -> bool:
        for e in path:
            c = float(energies[e])
            if out.energy_used + c > limit:
                out.lost = True
                out.energy_used = budget
                return False
            out.energy_used += c
            out.measurements.append((e, c, loaded))
        return True

    for i, e in enumerate(trip.outbound):
        if plan is not None:
            backup = abort_check(plan, i, out.energy_used)
            if backup is not None:
                out.aborted = True
                fly(backup, truth.outbound, True)
                return out
            c = float(truth.outbound[e])
            if unexplored is not None and unexplored[e] and mid_edge_turnaround(c, e_max):
                out.aborted = True
                if out.energy_used + 2.0 * e_max > limit:
                    out.lost = True
                    out.energy_used = budget
                    return out
                out.energy_used += 2.0 * e_max
                fly(plan.backup[i], truth.outbound, True)
                return out
        if not fly((e,), truth.outbound, True):
            return out
    out.delivered = True
    out.success = fly(trip.inbound, truth.inbound, False)
    return out


@dataclass(frozen=True)
class MetricsRow:
    request: int
    accepted: bool
    success: bool
    aborted: bool
    recall: float
    precision: float
    edge_coverage: float
    acc_rate: float
    succ_rate: float
    del_rate: float


def set_scores(predicted: set[int] | frozenset[int], truth: set[int]) -> tuple[float, float]:
    """(recall, precision) with empty denominators scoring 1."""
    hit = len(set(predicted) & set(truth))
    recall = hit / len(truth) if truth else 1.0
    precision = hit / len(predicted) if predicted else 1.0
    return recall, precision


def edge_coverage(visited: set, optimal: set) -> float:
    return len(visited & optimal) / len(optimal) if optimal else 1.0


@dataclass
class SimResult:
    config: SimConfig
    graph: Graph
    budget: float
    rows: list[MetricsRow]
    bank: BeliefBank
    outcomes: list[FlightOutcome]
    predicted: list[frozenset[int]]
    truth_sets: list[frozenset[int]]

    @property
    def lost(self) -> int:
        return sum(o.lost for o in self.outcomes)

    @property
    def flights(self) -> int:
        return sum(o.accepted for o in self.outcomes)


class _TruthCache:
    def __init__(self, g: Graph, constants: PhysicsConstants):
        self.g, self.k = g, constants
        self._cache: dict[Configuration, TruthCosts] = {}

    def __call__(self, config: Configuration) -> TruthCosts:
        t = self._cache.get(config)
        if t is None:
            if len(self._cache) > 64:
                self._cache.clear()
            t = self._cache[config] = truth_costs(self.g, config, self.k)
        return t


def optimal_edges(truth: TruthCosts, reachable: set[int]) -> set[int]:
    """Edges on the cheapest true trips to every reachable destination."""
    edges: set[int] = set()
    for d in reachable:
        a, b = truth.trip_edges(d)
        edges.update(a)
        edges.update(b)
    return edges


def run_simulation(cfg: SimConfig, graph: Graph | None = None) -> SimResult:
    """Simulate ``cfg.requests`` delivery requests; deterministic in ``cfg.seed``."""
    g = graph if graph is not None else load_map_source(cfg.map_source, cfg.seed)
    if not g.destinations:
        raise ValueError("map has no destinations")
    truth_of = _TruthCache(g, cfg.constants)
    budget = choose_budget(g, cfg.constants, reference_config(cfg.ranges), cfg.budget_fraction)
    grid = ConfigGrid.from_ranges(cfg.ranges.payload, cfg.ranges.wind_speed, *cfg.grid_shape)
    bank = init_prior(
        g, cfg.prior_k, cfg.w0, seed=(cfg.seed, _PRIOR_STREAM),
        grid=grid, c1=cfg.c1, c2=cfg.c2, cross_bin=cfg.cross_bin, min_rows=cfg.min_rows,
    )
    params = cfg.params
    dests = g.sorted_destinations()
    rows: list[MetricsRow] = []
    outcomes: list[FlightOutcome] = []
    predicted_sets: list[frozenset[int]] = []
    truth_sets: list[frozenset[int]] = []
    visited: set[int] = set()  # every edge any flight has traversed
    n_acc = n_succ = 0

    for i in range(cfg.requests):
        req_rng = np.random.default_rng((cfg.seed, _REQUEST_STREAM, i))
        strat_rng = np.random.default_rng((cfg.seed, _STRATEGY_STREAM, i))
        if cfg.fixed_config is not None:
            c = cfg.fixed_config
            dest = dests[i % len(dests)] if cfg.round_robin else dests[int(req_rng.integers(len(dests)))]
            req = Request(dest, c.payload, c.wind_speed, c.wind_direction)
        else:
            req = generate_request(req_rng, g, cfg.ranges)
            if cfg.round_robin:
                req = replace(req, dest=dests[i % len(dests)])
        config = req.config
        truth = truth_of(config)
        truth_set = frozenset(d for d, cost in truth.cost.items() if cost <= budget)
        b_l, b_0 = bank.bin_of(config), bank.bin_of(config.unloaded())
        beliefs = (bank.bin(b_l), bank.bin(b_0))

        e_max = (cfg.e_max if cfg.e_max is not None else bank.max_mean()) if cfg.safety else 0.0
        plan_budget = budget - 2.0 * e_max
        decision = _decide(cfg, g, req, beliefs, truth, budget, plan_budget, params, strat_rng)

        plan = None
        if decision.accepted and cfg.safety and cfg.strategy != "optimal":
            plan = build_safe_trip(beliefs, g, decision.trip, budget, cfg.phi, cfg.kappa, e_max)
            if plan is None:
                decision = Decision(None, decision.expanded, decision.probability)

        if decision.accepted:
            unexplored = ~beliefs[0].known if plan is not None else None
            outcome = execute_flight(decision.trip, truth, budget, plan, unexplored, e_max)
            fresh = [
                (e, v, config if loaded else config.unloaded())
                for e, v, loaded in outcome.measurements
                if not (beliefs[0] if loaded else beliefs[1]).known[e]
            ]
            bank.record_flight(fresh)
            visited.update(e for e, _, _ in outcome.measurements)
            n_acc += 1
            n_succ += outcome.success
        else:
            outcome = FlightOutcome(accepted=False)
        outcomes.append(outcome)

        if cfg.strategy == "optimal":
            predicted = truth_set
        else:
            predicted = probabilistic_reachable_set(bank.bin(b_l), bank.bin(b_0), g, budget, cfg.phi).members
        recall, precision = set_scores(predicted, truth_set)
        coverage = edge_coverage(visited, optimal_edges(truth, truth_set))
        n = i + 1
        rows.append(
            MetricsRow(
                n, outcome.accepted, outcome.success, outcome.aborted, recall, precision, coverage,
                n_acc / n, n_succ / n_acc if n_acc else 0.0, n_succ / n,
            )
        )
        predicted_sets.append(frozenset(predicted))
        truth_sets.append(truth_set)
    return SimResult(cfg, g, budget, rows, bank, outcomes, predicted_sets, truth_sets)


def _decide(
    cfg: SimConfig,
    g: Graph,
    req: Request,
    beliefs,
    truth: TruthCosts,
    budget: float,
    plan_budget: float,
    params: StrategyParams,
    rng: np.random.Generator,
) -> Decision:
    if cfg.strategy == "optimal":
        return plan_optimal(truth, g, req, budget)
    if cfg.strategy == "random":
        hops = max(hop_distances_to(g, req.dest)[g.base], hop_distances_to(g, g.base)[req.dest])
        if not math.isfinite(hops):
            return Decision()
        return plan_random(g, req, rng, int(hops) + cfg.hop_slack)
    trees = MeanTrees(beliefs[0], beliefs[1], g)
    if cfg.strategy == "shortest-path":
        return plan_shortest_path(beliefs, g, req, plan_budget, params, trees)
    return plan_frontier(beliefs, g, req, plan_budget, params, rng, trees)
