import io

import numpy as np
import pytest

from sonopt.fpsolver import (ConvergenceError, FixedPointProblem, Trace, relative_change,
                             scaled_bs_iteration, scaled_cluster_iteration, solve_normalized)
from sonopt.utility import UplinkModel

VT = np.array([[0.0, 0.1], [0.1, 0.0]])
SIGMA = np.array([0.1, 0.1])


def test_t2_normalized_fixed_point():
    prob = FixedPointProblem(f=lambda x: VT @ x + SIGMA, norm=lambda x: float(np.sum(x)), target_level=2.0,
                             tol=1e-12)
    x, trace = solve_normalized(prob, [0.3, 1.7])
    assert np.allclose(x, [1.0, 1.0], rtol=1e-11)
    assert trace.level[-1] == pytest.approx(5.0, rel=1e-11)
    assert np.allclose(x / (VT @ x + SIGMA), 5.0, rtol=1e-10)


def test_t2_cluster_iteration_is_stationary(t2):
    s, cm = t2
    model = UplinkModel(s, cm)
    q, b, trace = scaled_cluster_iteration(np.ones(2), lambda x: model.min_assignment(x, [0, 0]),
                                           cm.gamma, np.ones(2))
    assert np.allclose(q, [1.0, 1.0], rtol=1e-14) and list(b) == [0, 1]
    assert len(trace) == 1 and trace.level[-1] == pytest.approx(5.0)


def test_t2_bs_iteration_is_stationary(t2):
    s, cm = t2
    model = UplinkModel(s, cm)
    r, theta, trace = scaled_bs_iteration(np.ones(2), lambda x: model.min_tilt(x, [0, 1], np.ones(2)), 2.0)
    assert np.allclose(r, [1.0, 1.0], rtol=1e-14) and list(theta) == [0, 0]
    assert trace.level[-1] == pytest.approx(5.0)


def test_non_convergence_raises_with_trace():
    prob = FixedPointProblem(f=lambda x: VT @ x + SIGMA, norm=np.sum, target_level=2.0, tol=1e-14, max_iter=3)
    with pytest.raises(ConvergenceError) as info:
        solve_normalized(prob, [0.01, 5.0])
    assert len(info.value.trace) == 3


def test_problem_validation():
    with pytest.raises(ValueError):
        FixedPointProblem(f=abs, norm=np.sum, target_level=0.0)
    with pytest.raises(ValueError):
        solve_normalized(FixedPointProblem(f=abs, norm=np.sum, target_level=1.0), [0.0, 1.0])


def test_trace_csv():
    tr = Trace()
    tr.append(0.5, 4.0)
    tr.append(1e-9, 5.0)
    buf = io.StringIO()
    tr.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,residual,level"
    assert lines[2] == "1,1e-09,5.0"


def test_relative_change_ignores_zero_entries():
    assert relative_change(np.array([2.0, 5.0]), np.array([1.0, 0.0])) == 1.0
    assert relative_change(np.array([1.0]), np.array([0.0])) == 0.0


def test_assignment_cycle_is_frozen():
    # the argmin flips every call; the two assignments load BS 0 differently
    calls = []

    def interference(q):
        calls.append(None)
        return np.ones(2), np.array([0, 0] if len(calls) % 2 else [0, 1])

    q, b, trace = scaled_cluster_iteration(np.ones(2), interference, np.ones(2), np.ones(2),
                                           fixed_interference=lambda q, b: np.ones(2))
    assert trace.frozen_at == 4
    assert list(b) == [0, 1] and np.allclose(q, [1.0, 1.0])


def test_cycle_without_freezing_fails():
    calls = []

    def interference(q):
        calls.append(None)
        return np.ones(2), np.array([0, 0] if len(calls) % 2 else [0, 1])

    with pytest.raises(ConvergenceError):
        scaled_cluster_iteration(np.ones(2), interference, np.ones(2), np.ones(2), max_iter=50)


def test_cluster_on_bs_without_budget():
    with pytest.raises(ConvergenceError, match="without budget"):
        scaled_cluster_iteration(np.ones(1), lambda q: (np.ones(1), np.array([1])), np.ones(1),
                                 np.array([1.0, 0.0]))
