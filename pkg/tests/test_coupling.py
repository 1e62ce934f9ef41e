import numpy as np
import pytest
from hypothesis import given, strategies as st

from sonopt.coupling import (assignment_matrix, build_crosslink, channel_gain, power_transforms, sinr,
                             tilt_indices, vertical_pattern)
from sonopt.scenario import ClusterMap, Scenario, random_instance


def test_t2_crosslink(t2):
    s, cm = t2
    cl = build_crosslink(s, cm, [0, 1], [6.0, 6.0])
    assert np.allclose(cl.V, [[1.0, 0.1], [0.1, 1.0]], rtol=1e-15)
    assert np.allclose(cl.V_tilde, [[0.0, 0.1], [0.1, 0.0]], rtol=1e-15)


def test_single_user_is_interference_free():
    s = Scenario(bs_xy=[[0, 0]], azimuth_deg=[0], user_xy=[[50, 0]], gain_db=[[-3.0]],
                 elevation_deg=[[4.0]], tilt_grid_deg=[4.0], noise_dl_w=[0.5], noise_ul_w=[0.5],
                 p_max_total_dbm=30.0, p_max_per_bs_dbm=[30.0])
    cm = ClusterMap(membership=[0], home_bs=[0], gamma_db=0.0)
    cl = build_crosslink(s, cm, [0], [4.0])
    assert cl.V.shape == (1, 1) and cl.V_tilde[0, 0] == 0.0
    v = 10 ** -0.3
    assert sinr([2.0], cl, [0.5])[0] == pytest.approx(2.0 * v / 0.5, rel=1e-14)


def test_off_grid_tilt_rejected(t2):
    s, cm = t2
    with pytest.raises(ValueError, match="tilt grid"):
        build_crosslink(s, cm, [0, 1], [6.0, 7.0])
    with pytest.raises(ValueError):
        tilt_indices(s, [6.0])


def test_vertical_pattern_values():
    assert vertical_pattern(5.0, 5.0) == 1.0
    assert vertical_pattern(0.0, 10.0) == pytest.approx(10 ** -1.2, rel=1e-14)
    assert vertical_pattern(20.0, 10.0) == pytest.approx(0.0631, abs=5e-5)
    assert vertical_pattern(0.0, 12.91) == pytest.approx(0.01, rel=1e-3)
    assert vertical_pattern(0.0, 30.0) == pytest.approx(0.01, rel=1e-14)


def test_power_transforms_examples():
    q, p, _ = power_transforms([1, 1], [1, 1], np.eye(2), [1, 1], np.eye(2))
    assert np.array_equal(q, [1, 1]) and np.array_equal(p, [1, 1])
    q, _, _ = power_transforms([4.0], [0.25, 0.75], [[1, 1]], [1, 1], np.eye(2))
    assert np.allclose(q, [1, 3])
    _, p, _ = power_transforms([2.0], [1.0], [[1]], [0.5, 0.5], [[1, 1]])
    assert np.allclose(p, [1, 1])


def test_power_transforms_shape_check():
    with pytest.raises(ValueError, match="nonconformal"):
        power_transforms([1, 1], [1], np.eye(2), [1], np.eye(1))


def test_sinr_examples(t2):
    s, cm = t2
    cl = build_crosslink(s, cm, [0, 1], [6.0, 6.0])
    for d in ("uplink", "downlink"):
        assert np.allclose(sinr([1.0, 1.0], cl, s.noise_ul_w, d), [5.0, 5.0], rtol=1e-14)
    assert np.array_equal(sinr([0.0, 0.0], cl, s.noise_ul_w), [0.0, 0.0])


def _instance(seed):
    rng = np.random.default_rng(seed)
    s, cm = random_instance(rng, 3, 4, n_users=7)
    b = rng.integers(0, s.n_bs, cm.n_clusters)
    theta = rng.choice(s.tilt_grid_deg, s.n_bs)
    return rng, s, cm, b, theta


@given(seed=st.integers(0, 2**32 - 1))
def test_crosslink_invariants(seed):
    _, s, cm, b, theta = _instance(seed)
    cl = build_crosslink(s, cm, b, theta)
    assert np.all(cl.V >= 0) and np.all(np.diag(cl.V) > 0)
    assert np.all(np.diag(cl.V_tilde) == 0)
    # row l is the gain of the BS serving user l
    H = channel_gain(s, theta)
    assert np.array_equal(cl.V, H[b[cm.membership]])


@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.01, 100))
def test_sinr_scale_covariance(seed, c):
    rng, s, cm, b, theta = _instance(seed)
    cl = build_crosslink(s, cm, b, theta)
    p = rng.uniform(0.1, 1, cm.n_users)
    for d in ("uplink", "downlink"):
        assert np.allclose(sinr(c * p, cl, c * s.noise_ul_w, d), sinr(p, cl, s.noise_ul_w, d), rtol=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_symmetric_links_give_equal_directions(seed):
    rng = np.random.default_rng(seed)
    k = 4
    g = rng.uniform(-30, 0, (k, k))
    g = np.triu(g) + np.triu(g, 1).T
    s = Scenario(bs_xy=np.zeros((k, 2)), azimuth_deg=np.zeros(k), user_xy=np.zeros((k, 2)), gain_db=g,
                 elevation_deg=np.full((k, k), 5.0), tilt_grid_deg=[5.0], noise_dl_w=np.full(k, 0.01),
                 noise_ul_w=np.full(k, 0.01), p_max_total_dbm=30.0, p_max_per_bs_dbm=np.full(k, 30.0))
    cm = ClusterMap(membership=np.arange(k), home_bs=np.arange(k), gamma_db=0.0)
    cl = build_crosslink(s, cm, np.arange(k), np.full(k, 5.0))
    p = np.full(k, 0.3)
    assert np.allclose(sinr(p, cl, s.noise_ul_w, "uplink"), sinr(p, cl, s.noise_dl_w, "downlink"), rtol=1e-13)


@given(seed=st.integers(0, 2**32 - 1))
def test_tilt_closer_to_elevation_raises_gain(seed):
    _, s, cm, b, theta = _instance(seed)
    cl = build_crosslink(s, cm, b, theta)
    # aligning every BS with the user elevation maximizes the pattern factor
    a = s.antenna
    base = s.pathloss_gain[b[cm.membership]]
    assert np.all(cl.V <= base * (1 + 1e-15))
    vp = vertical_pattern(theta[b[cm.membership]][:, None], s.elevation_deg[b[cm.membership]],
                          a.theta_3db_v, a.am_v_db)
    assert np.allclose(cl.V, base * vp, rtol=1e-14)


def test_assignment_matrix_columns():
    B = assignment_matrix([2, 0, 2], 3)
    assert np.array_equal(B.sum(axis=0), [1, 1, 1])
    assert B[2, 0] == 1 and B[0, 1] == 1
