"""Learned energy models.

Each discretised configuration bin keeps a partition of the edges into
measured ("known") edges and Gaussian beliefs over the rest.  A measurement
of one edge trains a shared linear regressor; its predictions for every
still-unknown edge are then folded into that edge's running moments with a
weight that decays with distance from the measured edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graphmap import TWO_PI, Graph, _fmt
from .truthmodel import Configuration

N_FEATURES = 8
FEATURE_NAMES = (
    "payload",
    "wind_speed",
    "sin_wind_dir",
    "cos_wind_dir",
    "length",
    "sin_bearing",
    "cos_bearing",
    "intercept",
)
LENGTH_SCALE = 100.0  # metres per unit of the length feature; conditioning only


# -- configuration grid ---------------------------------------------------------------

@dataclass(frozen=True)
class ConfigGrid:
    """Bin centres; bins are indexed payload-major, then speed, then direction."""

    payloads: tuple[float, ...]
    speeds: tuple[float, ...]
    directions: tuple[float, ...]

    @classmethod
    def from_ranges(
        cls,
        payload_range: tuple[float, float] = (0.0, 2.0),
        speed_range: tuple[float, float] = (0.0, 5.0),
        n_payload: int = 4,
        n_speed: int = 5,
        n_direction: int = 5,
    ) -> "ConfigGrid":
        return cls(
            tuple(np.linspace(payload_range[0], payload_range[1], n_payload).tolist()),
            tuple(np.linspace(speed_range[0], speed_range[1], n_speed).tolist()),
            tuple((TWO_PI * np.arange(n_direction) / n_direction).tolist()),
        )

    @property
    def n_bins(self) -> int:
        return len(self.payloads) * len(self.speeds) * len(self.directions)

    def index(self, i_payload: int, i_speed: int, i_direction: int) -> int:
        return (i_payload * len(self.speeds) + i_speed) * len(self.directions) + i_direction

    def center(self, index: int) -> Configuration:
        nd, ns = len(self.directions), len(self.speeds)
        i_dir = index % nd
        i_speed = (index // nd) % ns
        i_payload = index // (nd * ns)
        return Configuration(self.payloads[i_payload], self.speeds[i_speed], self.directions[i_dir])

    def centers(self) -> list[Configuration]:
        return [self.center(i) for i in range(self.n_bins)]


def _spacing(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 1.0
    s = (values[-1] - values[0]) / (len(values) - 1)
    return s if s > 0 else 1.0


def _nearest(dist: np.ndarray) -> int:
    # ties (within rounding) go to the lowest index
    return int(np.flatnonzero(dist <= dist.min() + 1e-12)[0])


def nearest_config(grid: ConfigGrid, config: Configuration) -> int:
    """Bin minimising the spacing-normalised distance (circular in direction).

    The normalised squared distance is a sum of per-axis terms, so the
    nearest bin is the nearest centre along each axis independently.
    """
    p = np.asarray(grid.payloads)
    s = np.asarray(grid.speeds)
    d = np.asarray(grid.directions)
    dp = np.abs(config.payload - p) / _spacing(grid.payloads)
    ds = np.abs(config.wind_speed - s) / _spacing(grid.speeds)
    raw = np.abs(config.wind_direction - d) % TWO_PI
    dd = np.minimum(raw, TWO_PI - raw) / (TWO_PI / len(d))
    return grid.index(_nearest(dp), _nearest(ds), _nearest(dd))


# -- regression -----------------------------------------------------------------------

def config_features(config: Configuration) -> np.ndarray:
    f = np.zeros(N_FEATURES)
    f[0] = config.payload
    f[1] = config.wind_speed
    f[2] = math.sin(config.wind_direction)
    f[3] = math.cos(config.wind_direction)
    f[7] = 1.0
    return f


def edge_feature_matrix(g: Graph) -> np.ndarray:
    f = np.zeros((g.n_edges, N_FEATURES))
    f[:, 4] = g.lengths / LENGTH_SCALE
    f[:, 5] = np.sin(g.bearings)
    f[:, 6] = np.cos(g.bearings)
    return f


def features(config: Configuration, length: float, bearing: float) -> np.ndarray:
    f = config_features(config)
    f[4] = length / LENGTH_SCALE
    f[5] = math.sin(bearing)
    f[6] = math.cos(bearing)
    return f


class Regressor:
    """Least-squares linear model over configuration and edge features.

    The fit is kept as accumulated normal equations, so adding a row and
    refitting costs O(features^2) no matter how many rows were seen.  Rank
    deficient designs (e.g. every row from one configuration) get the
    minimum-norm solution.  Until ``min_rows`` rows arrive, predictions fall
    back to ``k * length``.
    """

    def __init__(self, k: float, min_rows: int = N_FEATURES):
        if k <= 0:
            raise ValueError("k must be positive")
        self.k = k
        self.min_rows = min_rows
        self.n_rows = 0
        self._gram = np.zeros((N_FEATURES, N_FEATURES))
        self._xty = np.zeros(N_FEATURES)
        self._coef: np.ndarray | None = None

    def add_row(self, x: np.ndarray, y: float) -> None:
        x = np.asarray(x, dtype=float)
        self._gram += np.outer(x, x)
        self._xty += x * y
        self.n_rows += 1
        self._coef = None

    @property
    def fitted(self) -> bool:
        return self.n_rows >= self.min_rows and self.n_rows > 0

    @property
    def coefficients(self) -> np.ndarray | None:
        if not self.fitted:
            return None
        if self._coef is None:
            self._coef = np.linalg.pinv(self._gram, rcond=1e-12, hermitian=True) @ self._xty
        return self._coef

    def predict_features(self, x: np.ndarray, length: float) -> float:
        c = self.coefficients
        if c is None:
            return self.k * length
        return max(0.0, float(np.asarray(x) @ c))

    def split(self, config_rows: np.ndarray, edge_rows: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Prediction = config part[b] + edge part[e] (before clamping at zero)."""
        c = self.coefficients
        if c is None:
            return np.zeros(len(config_rows)), self.k * lengths
        return config_rows @ c, edge_rows @ c


def predict_unknown(regressor: Regressor, length: float, bearing: float, config: Configuration) -> float:
    return regressor.predict_features(features(config, length, bearing), length)


def proximity_weight(g: Graph, measured: int, target: int, c1: float, c2: float) -> float:
    a, b = g.midpoints[measured], g.midpoints[target]
    return c1 * math.exp(-c2 * math.hypot(a[0] - b[0], a[1] - b[1]))


def proximity_weights(g: Graph, measured: int, c1: float, c2: float) -> np.ndarray:
    diff = g.midpoints - g.midpoints[measured]
    return c1 * np.exp(-c2 * np.hypot(diff[:, 0], diff[:, 1]))


# -- beliefs ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianBelief:
    mu: float
    eta2: float
    sigma2: float
    weight: float


@dataclass
class EnergyBelief:
    """Energy model for one configuration bin (arrays indexed by edge id)."""

    config_index: int
    center: Configuration
    known: np.ndarray
    known_value: np.ndarray
    mu: np.ndarray
    eta2: np.ndarray
    sigma2: np.ndarray
    weight: np.ndarray
    clamp_events: int = 0

    def gaussian(self, e: int) -> GaussianBelief | None:
        if self.known[e]:
            return None
        return GaussianBelief(float(self.mu[e]), float(self.eta2[e]), float(self.sigma2[e]), float(self.weight[e]))

    def mean_weights(self) -> np.ndarray:
        return np.where(self.known, self.known_value, self.mu)

    @property
    def unknown_edges(self) -> list[int]:
        return np.flatnonzero(~self.known).tolist()

    @property
    def known_edges(self) -> dict[int, float]:
        return {int(e): float(self.known_value[e]) for e in np.flatnonzero(self.known)}

    def copy(self) -> "EnergyBelief":
        return EnergyBelief(
            self.config_index,
            self.center,
            self.known.copy(),
            self.known_value.copy(),
            self.mu.copy(),
            self.eta2.copy(),
            self.sigma2.copy(),
            self.weight.copy(),
            self.clamp_events,
        )

    @classmethod
    def from_gaussians(cls, n_edges: int, beliefs: dict[int, tuple[float, float]], known: dict[int, float],
                       config_index: int = 0, center: Configuration | None = None, weight: float = 1.0) -> "EnergyBelief":
        """Small hand-built belief: ``beliefs`` maps edge -> (mu, sigma2), ``known`` edge -> energy."""
        b = cls(
            config_index,
            center or Configuration(0.0, 0.0, 0.0),
            np.zeros(n_edges, dtype=bool),
            np.zeros(n_edges),
            np.zeros(n_edges),
            np.zeros(n_edges),
            np.zeros(n_edges),
            np.full(n_edges, weight),
        )
        for e, (mu, s2) in beliefs.items():
            b.mu[e], b.sigma2[e], b.eta2[e] = mu, s2, s2 + mu * mu
        for e, v in known.items():
            b.known[e] = True
            b.known_value[e] = v
        if set(beliefs) | set(known) != set(range(n_edges)):
            raise ValueError("every edge needs either a belief or a known value")
        return b


def absorb_estimates(belief: EnergyBelief, estimates: np.ndarray, weights: np.ndarray) -> None:
    """Fold one weighted estimate per unknown edge into its running moments."""
    upd = ~belief.known
    w_old = belief.weight[upd]
    w_new = weights[upd]
    h = estimates[upd]
    total = w_old + w_new
    mu = (w_old * belief.mu[upd] + w_new * h) / total
    eta2 = (w_old * belief.eta2[upd] + w_new * h * h) / total
    s2 = eta2 - mu * mu
    belief.clamp_events += int(np.count_nonzero(s2 < 0))
    belief.mu[upd] = mu
    belief.eta2[upd] = eta2
    belief.sigma2[upd] = np.maximum(s2, 0.0)
    belief.weight[upd] = total


def record_measurement(
    belief: EnergyBelief,
    g: Graph,
    edge: int,
    measured: float,
    regressor: Regressor,
    c1: float,
    c2: float,
    config: Configuration | None = None,
) -> EnergyBelief:
    """Mark ``edge`` known, train the regressor, and update every remaining unknown.

    ``config`` is the exact configuration the measurement was taken under
    (defaults to the bin centre); the unknowns are re-estimated at the bin centre.
    """
    if measured < 0:
        raise ValueError("measured energy must be nonnegative")
    was_known = bool(belief.known[edge])
    belief.known[edge] = True
    belief.known_value[edge] = measured
    if was_known:
        return belief
    e = g.edges[edge]
    regressor.add_row(features(config or belief.center, e.length, e.bearing), measured)
    bp, ep = regressor.split(config_features(belief.center)[None, :], edge_feature_matrix(g), g.lengths)
    estimates = np.maximum(bp[0] + ep, 0.0)
    absorb_estimates(belief, estimates, proximity_weights(g, edge, c1, c2))
    return belief


# -- all bins together --------------------------------------------------------------------

@dataclass
class BeliefBank:
    """Energy models for every bin of a configuration grid, sharing one regressor."""

    graph: Graph
    grid: ConfigGrid
    regressor: Regressor
    c1: float
    c2: float
    cross_bin: bool
    known: np.ndarray  # (bins, edges) bool
    known_value: np.ndarray
    mu: np.ndarray
    eta2: np.ndarray
    sigma2: np.ndarray
    weight: np.ndarray
    clamp_events: int = 0
    _center_rows: np.ndarray = field(default=None, repr=False)
    _edge_rows: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._center_rows = np.array([config_features(c) for c in self.grid.centers()])
        self._edge_rows = edge_feature_matrix(self.graph)

    @property
    def n_bins(self) -> int:
        return self.grid.n_bins

    def bin_of(self, config: Configuration) -> int:
        return nearest_config(self.grid, config)

    def bin(self, index: int) -> EnergyBelief:
        """Belief for one bin; its arrays are views into the bank."""
        return EnergyBelief(
            index,
            self.grid.center(index),
            self.known[index],
            self.known_value[index],
            self.mu[index],
            self.eta2[index],
            self.sigma2[index],
            self.weight[index],
        )

    def max_mean(self) -> float:
        """Largest believed (or measured) energy of any edge in any bin."""
        if self.graph.n_edges == 0:
            return 0.0
        return float(np.where(self.known, self.known_value, self.mu).max())

    def record(self, edge: int, measured: float, config: Configuration) -> None:
        self.record_flight([(edge, measured, config)])

    def record_flight(self, measurements: Iterable[tuple[int, float, Configuration]]) -> None:
        """Apply a sequence of measurements in order.

        Mathematically identical to calling ``record_measurement`` once per
        measurement (in every bin when ``cross_bin``), but the weighted moment
        sums are accumulated for the whole batch first.  A prediction is
        ``config part + edge part``, so the sums reduce to small matrix
        products, corrected afterwards wherever a prediction is clamped at zero.
        """
        g = self.graph
        nb = self.n_bins
        rows_w, rows_bp, rows_ep, rows_mask = [], [], [], []
        for edge, measured, config in measurements:
            if measured < 0:
                raise ValueError("measured energy must be nonnegative")
            b = self.bin_of(config)
            was_known = bool(self.known[b, edge])
            self.known[b, edge] = True
            self.known_value[b, edge] = measured
            if was_known:
                continue
            e = g.edges[edge]
            self.regressor.add_row(features(config, e.length, e.bearing), measured)
            bp, ep = self.regressor.split(self._center_rows, self._edge_rows, g.lengths)
            mask = np.ones(nb) if self.cross_bin else np.eye(1, nb, b)[0]
            rows_w.append(proximity_weights(g, edge, self.c1, self.c2))
            rows_bp.append(bp)
            rows_ep.append(ep)
            rows_mask.append(mask)
        if not rows_w:
            return
        W = np.array(rows_w)  # (m, E)
        BP = np.array(rows_bp)  # (m, bins)
        EP = np.array(rows_ep)  # (m, E)
        M = np.array(rows_mask)  # (m, bins)
        s_w = M.T @ W
        MB = M * BP
        WE = W * EP
        s1 = MB.T @ W + M.T @ WE
        s2 = (MB * BP).T @ W + 2.0 * (MB.T @ WE) + M.T @ (WE * EP)
        # predictions below zero are clamped: remove the negative part of the linear sums
        cand = np.flatnonzero((BP.min(axis=1)[:, None] + EP).min(axis=0) < 0.0)
        if cand.size:
            neg = np.minimum(BP[:, :, None] + EP[:, None, cand], 0.0)  # (m, bins, c)
            mw = M[:, :, None] * W[:, None, cand]
            s1[:, cand] -= (mw * neg).sum(axis=0)
            s2[:, cand] -= (mw * neg * neg).sum(axis=0)
        upd = ~self.known
        total = self.weight + s_w
        mu = (self.weight * self.mu + s1) / total
        eta2 = (self.weight * self.eta2 + s2) / total
        var = eta2 - mu * mu
        self.clamp_events += int(np.count_nonzero(upd & (var < 0)))
        np.copyto(self.mu, mu, where=upd)
        np.copyto(self.eta2, eta2, where=upd)
        np.copyto(self.sigma2, np.maximum(var, 0.0), where=upd)
        np.copyto(self.weight, total, where=upd)

    def snapshot(self) -> dict:
        """JSON-ready view of every bin (numbers use the map-file formatting)."""
        bins = []
        for b in range(self.n_bins):
            c = self.grid.center(b)
            bins.append(
                {
                    "bin": b,
                    "center": [c.payload, c.wind_speed, c.wind_direction],
                    "known": {str(e): float(self.known_value[b, e]) for e in np.flatnonzero(self.known[b])},
                    "unknown": {
                        str(e): [float(self.mu[b, e]), float(self.sigma2[b, e]), float(self.weight[b, e])]
                        for e in np.flatnonzero(~self.known[b])
                    },
                }
            )
        return {"clamp_events": self.clamp_events, "regression_rows": self.regressor.n_rows, "bins": bins}

    def dumps_snapshot(self) -> str:
        def fix(o):
            if isinstance(o, float):
                return float(_fmt(o))
            if isinstance(o, dict):
                return {k: fix(v) for k, v in o.items()}
            if isinstance(o, list):
                return [fix(v) for v in o]
            return o

        return json.dumps(fix(self.snapshot()))


def init_prior(
    g: Graph,
    k: float,
    w0: float = 1.0,
    seed: int = 0,
    grid: ConfigGrid | None = None,
    c1: float = 1.0,
    c2: float = 0.01,
    cross_bin: bool = True,
    min_rows: int = N_FEATURES,
) -> BeliefBank:
    """Every edge unknown in every bin, mean uniform on [0.5kL, 1.5kL].

    The prior variance is that of the uniform interval, (0.5kL)^2 / 3.
    """
    if k <= 0 or w0 <= 0:
        raise ValueError("k and w0 must be positive")
    grid = grid or ConfigGrid.from_ranges()
    nb, ne = grid.n_bins, g.n_edges
    rng = np.random.default_rng(seed)
    kl = k * g.lengths
    mu = rng.uniform(0.5 * kl, 1.5 * kl, size=(nb, ne))
    var = np.broadcast_to((0.5 * kl) ** 2 / 3.0, (nb, ne)).copy()
    return BeliefBank(
        g,
        grid,
        Regressor(k, min_rows),
        c1,
        c2,
        cross_bin,
        np.zeros((nb, ne), dtype=bool),
        np.zeros((nb, ne)),
        mu,
        var + mu * mu,
        var,
        np.full((nb, ne), float(w0)),
    )
