import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from dronereach.beliefmodel import EnergyBelief, init_prior
from dronereach.graphmap import Trip, build_graph, generate_grid_map, generate_random_map
from dronereach.reachability import (
    GraphTooLargeError,
    max_reach_probability,
    normal_cdf,
    path_success_probability,
    probabilistic_reachable_set,
    success_probability,
    trip_success_probability,
    true_reachable_set,
)
from dronereach.truthmodel import Configuration, PhysicsConstants, choose_budget, edge_energies
from oracles import cheapest_round_trip, monte_carlo_sum_probability, normal_cdf_integral, simple_paths

# frozen from normal_cdf_integral (mpmath quadrature)
PHI_1 = 0.8413447460685429
PHI_M2 = 0.022750131948179195


def test_frozen_values_match_oracle():
    assert normal_cdf_integral(1.0) == pytest.approx(PHI_1, abs=1e-15)
    assert normal_cdf_integral(-2.0) == pytest.approx(PHI_M2, abs=1e-15)


@pytest.mark.parametrize("z, want", [(0.0, 0.5), (1.0, PHI_1), (-2.0, PHI_M2), (math.inf, 1.0), (-math.inf, 0.0)])
def test_normal_cdf(z, want):
    assert normal_cdf(z) == pytest.approx(want, abs=1e-7)


@pytest.mark.parametrize("z", np.linspace(-8, 8, 33).tolist())
def test_normal_cdf_against_quadrature(z):
    assert normal_cdf(z) == pytest.approx(normal_cdf_integral(z), abs=1e-7)


@settings(max_examples=200)
@given(st.floats(-40, 40), st.floats(0, 5))
def test_normal_cdf_monotone(z, dz):
    assert normal_cdf(z) <= normal_cdf(z + dz)


def line_belief(values, unknown=None):
    """Belief over edges 0..n-1: known values, or (mu, sigma2) for edges in ``unknown``."""
    unknown = unknown or {}
    known = {e: v for e, v in enumerate(values) if e not in unknown}
    return EnergyBelief.from_gaussians(len(values), unknown, known)


def test_all_known_path_is_a_step():
    b = line_belief([2.0, 3.0])
    assert path_success_probability(b, (0, 1), 10.0).value == 1.0
    b = line_belief([6.0, 6.0])
    assert path_success_probability(b, (0, 1), 10.0).value == 0.0


def test_path_with_one_unknown():
    b = line_belief([3.0, 0.0], {1: (5.0, 4.0)})
    p = path_success_probability(b, (0, 1), 10.0)
    assert p.value == pytest.approx(PHI_1, abs=1e-12)
    assert (p.known_cost, p.mu_total, p.sigma2_total, p.slack) == (3.0, 5.0, 4.0, 7.0)
    mc = monte_carlo_sum_probability(3.0, [5.0], [4.0], 10.0, 10**6, np.random.default_rng(1))
    assert p.value == pytest.approx(mc, abs=0.005)


def test_trip_examples():
    known = line_belief([1.0, 4.0])
    assert trip_success_probability(known, known, ((0,), (1,)), 10.0).value == 1.0

    out = line_belief([0.0, 0.0], {0: (5.0, 4.0)})
    back = line_belief([0.0, 3.0])
    p = trip_success_probability(out, back, ((0,), (1,)), 10.0)
    assert p.value == pytest.approx(PHI_1, abs=1e-12)

    out = line_belief([0.0, 0.0], {0: (2.0, 1.0)})
    back = line_belief([0.0, 0.0], {1: (1.0, 1.0)})
    p = trip_success_probability(out, back, Trip(1, (0,), (1,)), 3.0)
    assert p.value == 0.5
    mc = monte_carlo_sum_probability(0.0, [2.0, 1.0], [1.0, 1.0], 3.0, 10**6, np.random.default_rng(2))
    assert p.value == pytest.approx(mc, abs=0.005)


def test_against_monte_carlo_randomised():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        mus = rng.uniform(0.5, 10, n).tolist()
        vars_ = rng.uniform(0.1, 9, n).tolist()
        known = float(rng.uniform(0, 10))
        budget = known + sum(mus) + float(rng.normal(0, math.sqrt(sum(vars_))))
        analytic = success_probability(budget, known, sum(mus), sum(vars_)).value
        mc = monte_carlo_sum_probability(known, mus, vars_, budget, 10**6, rng)
        assert analytic == pytest.approx(mc, abs=0.005)


@settings(max_examples=200)
@given(st.floats(0, 100), st.floats(0, 50), st.floats(0, 30), st.floats(0, 30), st.floats(0, 20), st.floats(0, 20))
def test_monotone_in_budget_and_mean(budget, known, mu, var, db, dmu):
    p = success_probability(budget, known, mu, var).value
    assert 0.0 <= p <= 1.0
    assert success_probability(budget + db, known, mu, var).value >= p
    assert success_probability(budget, known, mu + dmu, var).value <= p


def diamond():
    # 0 -> {1, 2} -> 3 -> 0
    g = build_graph([(0, 0), (1, 1), (1, -1), (2, 0)], [(0, 1), (0, 2), (1, 3), (2, 3), (3, 0)], base=0, destinations=[3])
    e = {(s.source, s.target): s.id for s in g.edges}
    risky = {e[0, 1]: (1.0, 25.0), e[1, 3]: (1.0, 25.0)}
    safe = {e[0, 2]: (2.0, 0.01), e[2, 3]: (2.0, 0.01)}
    b = EnergyBelief.from_gaussians(g.n_edges, risky | safe, {e[3, 0]: 1.0})
    return g, b


def brute_force_max(g, b_out, b_back, dest, budget):
    pairs = [(e.source, e.target) for e in g.edges]
    best = 0.0
    for a in simple_paths(g.n_nodes, pairs, g.base, dest):
        for c in simple_paths(g.n_nodes, pairs, dest, g.base):
            known = sum(b_out.known_value[i] for i in a if b_out.known[i]) + sum(
                b_back.known_value[i] for i in c if b_back.known[i]
            )
            mu = sum(b_out.mu[i] for i in a if not b_out.known[i]) + sum(b_back.mu[i] for i in c if not b_back.known[i])
            var = sum(b_out.sigma2[i] for i in a if not b_out.known[i]) + sum(
                b_back.sigma2[i] for i in c if not b_back.known[i]
            )
            p = float(norm.cdf(budget - known, mu, math.sqrt(var))) if var > 0 else float(mu <= budget - known)
            best = max(best, p)
    return best


def test_exact_beats_surrogate_on_diamond():
    g, b = diamond()
    exact, trip = max_reach_probability(b, b, g, 3, 7.0, "exact")
    sur, strip = max_reach_probability(b, b, g, 3, 7.0, "surrogate")
    assert exact.value >= sur.value
    assert exact.value == pytest.approx(brute_force_max(g, b, b, 3, 7.0), abs=1e-12)
    assert exact.value > 0.999 and sur.value < 0.8
    assert trip.outbound != strip.outbound


def test_single_trip_modes_agree():
    g = build_graph([(0, 0), (0, 1)], [(0, 1), (1, 0)], base=0)
    b = EnergyBelief.from_gaussians(2, {0: (3.0, 1.0), 1: (2.0, 2.0)}, {})
    a = max_reach_probability(b, b, g, 1, 6.0, "exact")[0].value
    s = max_reach_probability(b, b, g, 1, 6.0, "surrogate")[0].value
    assert a == s == pytest.approx(norm.cdf(1 / math.sqrt(3)), abs=1e-12)


def test_no_return_path():
    g = build_graph([(0, 0), (0, 1), (1, 1)], [(0, 1), (1, 0), (1, 2)], base=0, destinations=[1, 2])
    b = EnergyBelief.from_gaussians(3, {}, {0: 1.0, 1: 1.0, 2: 1.0})
    for mode in ("exact", "surrogate"):
        p, t = max_reach_probability(b, b, g, 2, 100.0, mode)
        assert p.value == 0.0 and t is None
    assert probabilistic_reachable_set(b, b, g, 100.0, 0.0).members == {1}


def test_exact_mode_size_limit():
    g = generate_grid_map(4, 4)
    b = init_prior(g, 0.06).bin(0)
    with pytest.raises(GraphTooLargeError):
        max_reach_probability(b, b, g, 0, 10.0, "exact")


@pytest.mark.parametrize("seed", range(4))
def test_exact_matches_brute_force(seed):
    g = generate_random_map(7, k=2, seed=seed)
    bank = init_prior(g, 0.06, seed=seed)
    rng = np.random.default_rng(seed)
    b_out, b_back = bank.bin(60), bank.bin(10)
    for e in rng.choice(g.n_edges, 4, replace=False):
        b_out.known[e] = True
        b_out.known_value[e] = 10.0
    for dest in g.sorted_destinations():
        budget = 30.0
        got = max_reach_probability(b_out, b_back, g, dest, budget, "exact")[0].value
        assert got == pytest.approx(brute_force_max(g, b_out, b_back, dest, budget), abs=1e-12)


def line3():
    pos = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]
    return build_graph(pos, [(0, 1), (1, 0), (1, 2), (2, 1)], base=0)


def test_reachable_set_examples():
    g = line3()
    truth = EnergyBelief.from_gaussians(g.n_edges, {}, {e: 3.0 for e in range(g.n_edges)})
    assert probabilistic_reachable_set(truth, truth, g, 10.0, 0.95).members == {1}
    prior = init_prior(g, 1.0).bin(0)
    assert probabilistic_reachable_set(prior, prior, g, 0.0, 0.0).members == {1, 2}
    assert probabilistic_reachable_set(prior, prior, g, 1e6, 1.0).members == set()


def test_true_reachable_line():
    g = line3()
    k = PhysicsConstants(a=0.03, b=1, c=0, d=1, e=0, drone_mass=1, max_speed=10)
    calm = Configuration(0, 0, 0)
    assert edge_energies(g, calm, k) == pytest.approx([3.0] * 4)
    assert true_reachable_set(g, k, calm, 12.0) == {1, 2}
    assert true_reachable_set(g, k, calm, 11.0) == {1}
    assert true_reachable_set(g, k, calm, 0.0) == set()


@pytest.mark.parametrize("seed", range(3))
def test_true_reachable_matches_enumeration(seed):
    g = generate_random_map(8, k=2, seed=seed)
    k = PhysicsConstants()
    cfg = Configuration(1.5, 4.0, 0.5)
    w_out, w_back = edge_energies(g, cfg, k), edge_energies(g, cfg.unloaded(), k)
    pairs = [(e.source, e.target) for e in g.edges]
    costs = {d: cheapest_round_trip(g.n_nodes, pairs, w_out, w_back, g.base, d) for d in g.sorted_destinations()}
    for budget in sorted(costs.values()) + [0.0]:
        want = {d for d, c in costs.items() if c <= budget * (1 + 1e-12)}
        assert true_reachable_set(g, k, cfg, budget) == want


def test_budget_gives_about_sixty_percent():
    g = generate_random_map(200, seed=0)
    k = PhysicsConstants()
    cfg = Configuration(1.0, 2.5, 0.0)
    b = choose_budget(g, k, cfg, 0.6)
    frac = len(true_reachable_set(g, k, cfg, b)) / len(g.destinations)
    assert 0.6 <= frac < 0.6 + 1 / len(g.destinations)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.sampled_from([6, 30]))
def test_reachable_set_monotone_in_phi(seed, phi_a, phi_b, n):
    g = generate_random_map(n, k=3, seed=seed)
    b = init_prior(g, 0.06, seed=seed).bin(seed % 100)
    budget = 2.0 * float(np.median(g.lengths)) * 0.06 * 3
    lo, hi = sorted((phi_a, phi_b))
    assert probabilistic_reachable_set(b, b, g, budget, hi).members <= probabilistic_reachable_set(
        b, b, g, budget, lo
    ).members


def test_phi_out_of_range():
    g = line3()
    b = init_prior(g, 1.0).bin(0)
    with pytest.raises(ValueError):
        probabilistic_reachable_set(b, b, g, 1.0, 1.5)
