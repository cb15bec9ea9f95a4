import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dronereach.beliefmodel import (
    N_FEATURES,
    BeliefBank,
    ConfigGrid,
    EnergyBelief,
    Regressor,
    absorb_estimates,
    features,
    init_prior,
    nearest_config,
    predict_unknown,
    proximity_weight,
    proximity_weights,
    record_measurement,
)
from dronereach.graphmap import build_graph, generate_grid_map, generate_random_map
from dronereach.truthmodel import Configuration, PhysicsConstants, edge_energies
from oracles import batch_moments, exp_precise

GRID = ConfigGrid.from_ranges()


def test_grid_has_100_bins():
    assert GRID.n_bins == 100
    assert len(GRID.payloads) == 4 and len(GRID.speeds) == 5 and len(GRID.directions) == 5
    assert [nearest_config(GRID, c) for c in GRID.centers()] == list(range(100))


def test_nearest_config_wraps_direction():
    c = Configuration(GRID.payloads[0], GRID.speeds[0], math.radians(359))
    assert nearest_config(GRID, c) == 0


def test_nearest_config_tie_goes_low():
    mid = 0.5 * (GRID.payloads[1] + GRID.payloads[2])
    c = Configuration(mid, GRID.speeds[0], 0.0)
    assert nearest_config(GRID, c) == GRID.index(1, 0, 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 3), st.floats(0, 8), st.floats(0, 2 * math.pi))
def test_nearest_config_is_argmin(l, s, d):
    cfg = Configuration(l, s, d)
    got = nearest_config(GRID, cfg)

    def dist(i):
        c = GRID.center(i)
        raw = abs(c.wind_direction - cfg.wind_direction) % (2 * math.pi)
        dd = min(raw, 2 * math.pi - raw) / (2 * math.pi / 5)
        return ((c.payload - l) / (2 / 3)) ** 2 + ((c.wind_speed - s) / 1.25) ** 2 + dd**2

    best = min(dist(i) for i in range(100))
    assert dist(got) <= best + 1e-9


def two_edge_graph(d):
    # edges 0 and 2 have midpoints exactly d apart
    pos = [(0.0, -1.0), (0.0, 1.0), (d, -1.0), (d, 1.0)]
    return build_graph(pos, [(0, 1), (1, 0), (2, 3), (3, 2), (0, 2), (2, 0)], base=0)


def test_proximity_weight_examples():
    g = two_edge_graph(10.0)
    e0, e2 = g.edge_between(0, 1), g.edge_between(2, 3)
    assert proximity_weight(g, e0, e0, 1.0, 0.5) == 1.0
    assert proximity_weight(g, e0, e2, 2.0, 0.1) == pytest.approx(2 * exp_precise(-1.0), rel=1e-14)
    assert proximity_weight(g, e0, e2, 3.0, 0.0) == 3.0
    assert proximity_weights(g, e0, 2.0, 0.1)[e2] == pytest.approx(2 * exp_precise(-1.0), rel=1e-14)
    assert 2 * exp_precise(-1.0) == pytest.approx(0.73576, abs=1e-5)


def test_prior_interval_and_variance():
    g = generate_grid_map(4, 4, 100.0)
    bank = init_prior(g, k=1.0, seed=5)
    assert np.all((bank.mu >= 50) & (bank.mu <= 150))
    assert np.allclose(bank.sigma2, 50.0**2 / 3)
    assert np.allclose(bank.eta2, bank.sigma2 + bank.mu**2)
    assert not bank.known.any()
    again = init_prior(g, k=1.0, seed=5)
    assert np.array_equal(bank.mu, again.mu)


@pytest.mark.parametrize("k, w0", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
def test_prior_rejects_bad_args(k, w0):
    with pytest.raises(ValueError):
        init_prior(generate_grid_map(2, 2), k=k, w0=w0)


def test_regressor_recovers_exact_linear_model():
    rng = np.random.default_rng(3)
    reg = Regressor(k=0.5)
    for _ in range(30):
        cfg = Configuration(rng.uniform(0, 2), rng.uniform(0, 5), rng.uniform(0, 2 * math.pi))
        length, bearing = rng.uniform(10, 300), rng.uniform(0, 2 * math.pi)
        reg.add_row(features(cfg, length, bearing), 2.0 * length)
    assert predict_unknown(reg, 30.0, 1.0, Configuration(1.0, 2.0, 3.0)) == pytest.approx(60.0, abs=1e-6)


def test_regressor_single_row_reproduces_it():
    reg = Regressor(k=0.5, min_rows=1)
    cfg = Configuration(0.5, 1.0, 2.0)
    reg.add_row(features(cfg, 80.0, 0.3), 42.0)
    assert predict_unknown(reg, 80.0, 0.3, cfg) == pytest.approx(42.0, rel=1e-9)


def test_regressor_falls_back_below_min_rows():
    reg = Regressor(k=0.5)
    cfg = Configuration(0.5, 1.0, 2.0)
    for i in range(N_FEATURES - 1):
        reg.add_row(features(cfg, 50.0 + i, 0.3), 7.0)
    assert predict_unknown(reg, 80.0, 0.3, cfg) == 40.0


def test_regressor_never_negative():
    reg = Regressor(k=0.5, min_rows=1)
    cfg = Configuration(0.0, 0.0, 0.0)
    reg.add_row(features(cfg, 100.0, 0.0), 0.0)
    reg.add_row(features(cfg, 200.0, 0.0), 0.0)
    assert predict_unknown(reg, 100.0, math.pi, cfg) >= 0.0


def single_unknown_belief(mu, eta2, w):
    b = EnergyBelief.from_gaussians(1, {0: (mu, eta2 - mu * mu)}, {}, weight=w)
    return b


def test_absorb_example():
    b = single_unknown_belief(10.0, 110.0, 1.0)
    absorb_estimates(b, np.array([20.0]), np.array([1.0]))
    want = batch_moments([(10.0, 110.0, 1.0), (20.0, 400.0, 1.0)])
    assert (b.mu[0], b.eta2[0], b.weight[0]) == pytest.approx(want, rel=1e-12)
    assert (b.mu[0], b.eta2[0], b.sigma2[0], b.weight[0]) == pytest.approx((15.0, 255.0, 30.0, 2.0))


def test_absorb_zero_weight_is_noop():
    b = single_unknown_belief(10.0, 110.0, 1.0)
    absorb_estimates(b, np.array([20.0]), np.array([0.0]))
    assert (b.mu[0], b.eta2[0], b.weight[0]) == (10.0, 110.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(1, 100),
    st.floats(0, 50),
    st.floats(0.1, 5),
    st.lists(st.tuples(st.floats(0, 200), st.floats(0, 3)), min_size=1, max_size=100),
)
def test_incremental_equals_batch(mu0, var0, w0, updates):
    b = single_unknown_belief(mu0, var0 + mu0 * mu0, w0)
    history = [(mu0, var0 + mu0 * mu0, w0)]
    weights = [w0]
    for h, w in updates:
        absorb_estimates(b, np.array([h]), np.array([w]))
        history.append((h, h * h, w))
        weights.append(float(b.weight[0]))
    mu, eta2, w = batch_moments(history)
    assert b.mu[0] == pytest.approx(mu, rel=1e-9, abs=1e-9)
    assert b.eta2[0] == pytest.approx(eta2, rel=1e-9, abs=1e-9)
    assert b.weight[0] == pytest.approx(w, rel=1e-12)
    assert b.sigma2[0] >= 0.0
    assert all(x <= y for x, y in zip(weights, weights[1:]))


def test_record_measurement_partition():
    g = generate_random_map(12, k=3, seed=1)
    bank = init_prior(g, k=0.06, seed=1)
    b = bank.bin(0).copy()
    reg = Regressor(0.06)
    truth = edge_energies(g, b.center, PhysicsConstants())
    for e in range(g.n_edges):
        record_measurement(b, g, e, float(truth[e]), reg, 1.0, 0.01)
        assert int(b.known.sum()) == e + 1
        assert set(b.unknown_edges) == set(range(e + 1, g.n_edges))
        assert np.all(b.sigma2[~b.known] >= 0)
    assert b.unknown_edges == []
    assert b.known_edges == pytest.approx({e: float(truth[e]) for e in range(g.n_edges)})


def test_remeasurement_overwrites_without_retraining():
    g = generate_random_map(8, k=2, seed=2)
    b = init_prior(g, k=0.06, seed=2).bin(0).copy()
    reg = Regressor(0.06)
    record_measurement(b, g, 0, 5.0, reg, 1.0, 0.01)
    mu = b.mu.copy()
    record_measurement(b, g, 0, 6.0, reg, 1.0, 0.01)
    assert b.known_value[0] == 6.0 and reg.n_rows == 1
    assert np.array_equal(b.mu, mu)


def test_negative_measurement_rejected():
    g = generate_random_map(8, k=2, seed=2)
    b = init_prior(g, k=0.06, seed=2).bin(0).copy()
    with pytest.raises(ValueError):
        record_measurement(b, g, 0, -1.0, Regressor(0.06), 1.0, 0.01)


@pytest.mark.parametrize("cross_bin", [True, False])
def test_batched_flight_matches_sequential(cross_bin):
    g = generate_random_map(30, seed=4)
    k = PhysicsConstants()
    rng = np.random.default_rng(0)
    batched = init_prior(g, k=0.06, seed=4, cross_bin=cross_bin, min_rows=3)
    seq = init_prior(g, k=0.06, seed=4, cross_bin=cross_bin, min_rows=3)
    for _ in range(6):
        cfg = Configuration(rng.uniform(0, 2), rng.uniform(0, 5), rng.uniform(0, 2 * math.pi))
        truth = edge_energies(g, cfg, k)
        edges = rng.choice(g.n_edges, size=5, replace=False)
        flight = [(int(e), float(truth[e]), cfg) for e in edges]
        batched.record_flight(flight)
        for e, v, c in flight:
            seq.record(e, v, c)
    assert np.array_equal(batched.known, seq.known)
    unk = ~batched.known
    for name in ("mu", "eta2", "sigma2", "weight"):
        a, b = getattr(batched, name)[unk], getattr(seq, name)[unk]
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9), name


def test_bank_matches_single_bin_update():
    g = generate_random_map(15, k=3, seed=6)
    bank = init_prior(g, k=0.06, seed=6, min_rows=1, cross_bin=False)
    ref = bank.bin(7).copy()
    reg = Regressor(0.06, min_rows=1)
    cfg = GRID.center(7)
    bank.record(3, 4.2, cfg)
    record_measurement(ref, g, 3, 4.2, reg, bank.c1, bank.c2, cfg)
    view = bank.bin(7)
    assert view.mu == pytest.approx(ref.mu, rel=1e-12)
    assert view.sigma2 == pytest.approx(ref.sigma2, rel=1e-9, abs=1e-12)
    other = init_prior(g, k=0.06, seed=6)
    assert np.array_equal(bank.mu[8], other.mu[8])


def test_snapshot_is_json():
    g = generate_random_map(6, k=2, seed=0)
    bank = init_prior(g, k=0.06, seed=0)
    bank.record(0, 1.5, GRID.center(0))
    doc = json.loads(bank.dumps_snapshot())
    assert doc["regression_rows"] == 1
    assert len(doc["bins"]) == 100
    assert doc["bins"][0]["known"] == {"0": 1.5}
    assert isinstance(bank, BeliefBank)
