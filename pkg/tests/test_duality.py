import numpy as np
import pytest
from hypothesis import given, strategies as st

from sonopt.coupling import build_crosslink
from sonopt.duality import (DomainError, balanced_level, build_lambda_dl, build_lambda_phys_ul, build_lambda_ul,
                            cluster_gain_sums, downlink_interference, duality_gap, fit_per_bs, is_irreducible,
                            solve_downlink, spectral_radius, virtual_uplink_rows)
from sonopt.fpsolver import FixedPointProblem, solve_normalized
from sonopt.oracle import brute_force_downlink_assignment
from sonopt.scenario import random_instance
from sonopt.utility import UtilityConfig, capacity_interference

T2_B, T2_THETA = [0, 1], [6.0, 6.0]


def test_t2_matrices(t2):
    s, cm = t2
    lam_d = build_lambda_dl(s, cm, T2_B, T2_THETA)
    assert np.allclose(lam_d.matrix, [[0.05, 0.15], [0.15, 0.05]], rtol=1e-14)
    for mode in ("weighted", "plain"):
        assert np.allclose(build_lambda_ul(s, cm, T2_B, T2_THETA, mode=mode).matrix, lam_d.matrix, rtol=1e-14)


def test_t2_balanced_level(t2):
    s, cm = t2
    level, q = balanced_level(build_lambda_dl(s, cm, T2_B, T2_THETA))
    assert level == pytest.approx(5.0, rel=1e-12)
    assert np.allclose(q, [1.0, 1.0], rtol=1e-12)


def test_spectral_radius_examples():
    assert spectral_radius(np.eye(3), allow_reducible=True)[0] == pytest.approx(1.0, rel=1e-12)
    M = np.diag([2.0, 1.0]) + 1e-3
    assert spectral_radius(M)[0] == pytest.approx(np.max(np.abs(np.linalg.eigvals(M))), rel=1e-12)
    with pytest.raises(DomainError):
        spectral_radius(np.zeros((2, 2)))
    with pytest.raises(DomainError):
        spectral_radius(np.eye(2))
    with pytest.raises(DomainError):
        spectral_radius(-np.ones((2, 2)))
    with pytest.raises(DomainError):
        spectral_radius(np.ones((2, 3)))


def test_periodic_matrix():
    rho, x = spectral_radius(np.array([[0.0, 2.0], [0.5, 0.0]]))
    assert rho == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(x, [2 / 3, 1 / 3], rtol=1e-10)


def test_tiny_spectral_gap():
    # two nearly decoupled blocks: second eigenvalue within 1e-4 of the root
    eps = 1e-5
    M = np.array([[1.0, eps, 0.0], [eps, 1.0, 0.0], [0.0, eps, 0.9999]]) + np.array([[0, 0, eps], [0, 0, 0], [0, 0, 0]])
    rho, x = spectral_radius(M)
    assert rho == pytest.approx(np.max(np.abs(np.linalg.eigvals(M))), rel=1e-12)
    assert np.allclose(M @ x, rho * x, rtol=1e-9)


def test_irreducibility():
    assert is_irreducible([[0, 1], [1, 0]])
    assert not is_irreducible([[1, 1], [0, 1]])
    assert is_irreducible([[0.3]]) and not is_irreducible([[0.0]])


def _instance(seed, n_bs=3, n_clusters=5, n_users=11):
    rng = np.random.default_rng(seed)
    s, cm = random_instance(rng, n_bs, n_clusters, n_users=n_users, gamma_db=rng.uniform(-3, 3, n_clusters))
    b = rng.integers(0, n_bs, n_clusters)
    theta = rng.choice(s.tilt_grid_deg, n_bs)
    return s, cm, b, theta


@given(seed=st.integers(0, 2**32 - 1))
def test_weighted_virtual_uplink_has_the_downlink_root(seed):
    s, cm, b, theta = _instance(seed)
    assert duality_gap(s, cm, b, theta)["rel_gap"] <= 1e-9


def test_plain_virtual_uplink_differs_for_unequal_cluster_noise():
    gaps = [duality_gap(*_instance(seed), mode="plain")["rel_gap"] for seed in range(10)]
    assert max(gaps) > 1e-6


@given(seed=st.integers(0, 2**32 - 1))
def test_physical_uplink_level_matches_fixed_point(seed):
    s, cm, b, theta = _instance(seed)
    cl = build_crosslink(s, cm, b, theta)
    f = lambda q: cm.gamma * capacity_interference(q, cl, cm, s.noise_ul_w)  # noqa: E731
    prob = FixedPointProblem(f, lambda x: float(np.sum(x)), s.p_max_total, tol=1e-13, max_iter=200_000)
    q, tr = solve_normalized(prob, np.ones(cm.n_clusters))
    level, q_hat = balanced_level(build_lambda_phys_ul(s, cm, b, theta))
    assert tr.level[-1] == pytest.approx(level, rel=1e-9)
    assert np.allclose(q, q_hat, rtol=1e-7)


@given(seed=st.integers(0, 2**32 - 1))
def test_downlink_level_matches_fixed_point(seed):
    s, cm, b, theta = _instance(seed)
    f = downlink_interference(s, cm, b, theta, 1.0)
    prob = FixedPointProblem(f, lambda x: float(np.sum(x)), s.p_max_total, tol=1e-13, max_iter=200_000)
    _, tr = solve_normalized(prob, np.ones(cm.n_clusters))
    assert tr.level[-1] == pytest.approx(balanced_level(build_lambda_dl(s, cm, b, theta))[0], rel=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_virtual_uplink_rows(seed):
    s, cm, b, theta = _instance(seed)
    lam = build_lambda_ul(s, cm, b, theta)
    q = np.random.default_rng(seed).uniform(0.1, 1, cm.n_clusters)
    S = cluster_gain_sums(s, cm, theta)
    rows = virtual_uplink_rows(S, cm.sizes, q, cm.gamma, float(lam.noise[0] * lam.weights @ q) / lam.p_max)
    assert np.allclose(rows[b, np.arange(cm.n_clusters)], lam.matrix @ q, rtol=1e-12)


def test_t2_downlink_solution(t2):
    s, cm = t2
    sol = solve_downlink(s, cm)
    assert sol.direction == "downlink" and not sol.extras["heuristic"]
    assert sol.level == pytest.approx(5.0, rel=1e-10)
    assert sol.extras["rho_dl"] == pytest.approx(0.2, rel=1e-12)
    assert sol.extras["rho_ul"] == pytest.approx(0.2, rel=1e-12)
    assert np.allclose(sol.q, [1.0, 1.0], rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_assignment_descent_is_monotone_and_near_optimal(seed):
    s, cm, _, _ = _instance(seed, n_bs=2, n_clusters=4, n_users=6)
    sol = solve_downlink(s, cm, caps=np.full(s.n_bs, np.inf))
    trace = np.asarray(sol.extras["rho_trace"])
    assert np.all(np.diff(trace) <= 1e-12 * trace[:-1])
    _, rho_best = brute_force_downlink_assignment(s, cm, sol.theta_deg)
    assert sol.extras["rho_dl"] >= rho_best * (1 - 1e-9)
    assert sol.level == pytest.approx(1.0 / sol.extras["rho_dl"], rel=1e-9)


def test_heuristic_branch_and_per_bs_caps(t2):
    s, cm = t2
    sol = solve_downlink(s, cm, UtilityConfig(mu=0.3), caps=[0.5, 0.5])
    assert sol.extras["heuristic"]
    assert np.all(sol.r <= 0.5 * (1 + 1e-12))
    assert sol.extras["per_bs_scale"] == pytest.approx(0.5, rel=1e-9)


def test_fit_per_bs():
    q, f = fit_per_bs(np.array([1.0, 1.0, 2.0]), np.array([0, 0, 1]), np.array([1.0, 4.0]))
    assert f == 0.5 and np.allclose(q, [0.5, 0.5, 1.0])
    q, f = fit_per_bs(np.array([1.0]), np.array([0]), np.array([3.0, 0.0]))
    assert f == 1.0
