import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import disc_constrained_2d, quadratic_1d
from thinwall.optimizer import (ContinuationSchedule, History, MmaState, TerminationLimits,
                                advance_schedules, check_termination, mma_update)


def run_mma(x0, f, df, g=None, dg=None, box=(-1.0, 1.0), iters=50, move=0.2):
    state = MmaState(len(x0), move=move)
    x = np.asarray(x0, dtype=float)
    lo, hi = box
    trace = []
    for _ in range(iters):
        gv = g(x) if g else np.zeros(0)
        dgv = dg(x) if dg else np.zeros((0, len(x)))
        x_new = mma_update(state, x, f(x), df(x), gv, dgv, box=box)
        assert np.all(x_new >= lo) and np.all(x_new <= hi)
        assert np.all(np.abs(x_new - x) <= move * (hi - lo) + 1e-12)
        assert state.diagnostics["kkt_residual"] <= 1e-8
        trace.append(x_new)
        if np.max(np.abs(x_new - x)) < 1e-10:
            x = x_new
            break
        x = x_new
    return x, trace


@pytest.mark.parametrize("box,x0", [((0.0, 1.0), [0.0]), ((0.0, 1.0), [1.0]), ((-1.0, 1.0), [-0.9])])
def test_quadratic_1d_converges(box, x0):
    f, df, x_star = quadratic_1d()
    x, trace = run_mma(x0, f, df, box=box)
    assert len(trace) <= 50
    assert abs(x[0] - x_star[0]) <= 1e-4


@pytest.mark.parametrize("box,x0", [((0.0, 1.0), [0.0, 0.0]), ((0.0, 1.0), [1.0, 0.2]),
                                    ((-1.0, 1.0), [-0.5, 0.9])])
def test_disc_constrained_2d_converges(box, x0):
    f, df, g, dg, x_star = disc_constrained_2d()
    x, trace = run_mma(x0, f, df, g, dg, box=box)
    assert len(trace) <= 50
    assert np.max(np.abs(x - x_star)) <= 1e-3
    assert g(x)[0] <= 1e-3


def test_unit_box_variants():
    # (x - 0.3)^2 on [0, 1]
    x, _ = run_mma([1.0], lambda x: float((x[0] - 0.3) ** 2), lambda x: 2 * (x - 0.3), box=(0.0, 1.0))
    assert abs(x[0] - 0.3) <= 1e-4
    # linear objective with a sum constraint on [0, 1]^2: min -x1 - 2 x2 s.t. x1 + x2 <= 1
    x, _ = run_mma([0.1, 0.1], lambda x: float(-x[0] - 2 * x[1]), lambda x: np.array([-1.0, -2.0]),
                   lambda x: np.array([x[0] + x[1] - 1.0]), lambda x: np.array([[1.0, 1.0]]),
                   box=(0.0, 1.0))
    assert x == pytest.approx([0.0, 1.0], abs=1e-4)


def test_solution_on_box_bound():
    # unconstrained minimiser 2 lies outside; solution is the upper bound
    x, _ = run_mma([0.0], lambda x: float((x[0] - 2.0) ** 2), lambda x: 2 * (x - 2.0))
    assert x[0] == pytest.approx(1.0, abs=1e-9)


def test_zero_gradient_is_fixed_point():
    x = np.array([0.2, -0.4, 0.9])
    state = MmaState(3)
    x_new = mma_update(state, x, 0.0, np.zeros(3), np.array([-1.0]), np.zeros((1, 3)))
    assert np.allclose(x_new, x, atol=1e-14)


@given(st.integers(0, 2 ** 31), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_step_respects_box_move_and_kkt(seed, m):
    rng = np.random.default_rng(seed)
    n = 20
    state = MmaState(n, move=0.2)
    x = rng.uniform(-1, 1, n)
    for _ in range(4):
        g = rng.normal(size=m) * 0.1
        x_new = mma_update(state, x, 1.0, rng.normal(size=n), g, rng.normal(size=(m, n)))
        assert np.all(x_new >= -1) and np.all(x_new <= 1)
        assert np.max(np.abs(x_new - x)) <= 0.2 * 2 + 1e-12
        assert state.diagnostics["kkt_residual"] <= 1e-8
        assert np.all(state.diagnostics["multipliers"] >= 0)
        assert np.all(state.lower < x) and np.all(state.upper > x)
        x = x_new


def test_wrong_dimension_rejected():
    with pytest.raises(ValueError):
        mma_update(MmaState(3), np.zeros(2), 0.0, np.zeros(2), np.zeros(0), np.zeros((0, 2)))


def test_reset_forgets_history():
    state = MmaState(2)
    mma_update(state, np.zeros(2), 0.0, np.ones(2), np.zeros(0), np.zeros((0, 2)))
    state.reset(5)
    assert state.n == 5 and state.iteration == 0 and state.lower is None


def test_default_schedule_values():
    sched = ContinuationSchedule()
    assert advance_schedules(sched, 0) == (1.0, 1.0, 8.0)
    assert advance_schedules(sched, 9) == (1.0, 1.0, 8.0)
    assert advance_schedules(sched, 10) == pytest.approx((1 + 2 / 3, 2.0, 16.0))
    assert advance_schedules(sched, 30) == (3.0, 8.0, 64.0)
    assert advance_schedules(sched, 60) == (3.0, 64.0, 512.0)
    assert advance_schedules(sched, 1000) == (3.0, 64.0, 512.0)
    assert not sched.is_final(50) and sched.is_final(60)
    with pytest.raises(ValueError):
        advance_schedules(sched, -1)


@given(st.integers(0, 500), st.integers(0, 500), st.integers(1, 20))
def test_schedule_monotone(a, b, every):
    sched = ContinuationSchedule(step_every=every)
    lo, hi = sorted((a, b))
    assert all(u <= v for u, v in zip(sched.values(lo), sched.values(hi)))


def test_schedule_validation():
    with pytest.raises(ValueError):
        ContinuationSchedule(sharpness_start=10.0, sharpness_end=5.0)
    with pytest.raises(ValueError):
        ContinuationSchedule(step_every=0)


def test_termination_examples():
    limits = TerminationLimits(max_iterations=10, patience=3)
    h = History()
    for F in (10.0, 5.0, 4.0):
        h.record(F, 0.1)
    assert check_termination(h, limits) == "continue"
    for _ in range(3):
        h.record(4.0, 1e-4)
    assert check_termination(h, limits) == "converged"
    h2 = History()
    for F in (4.0, 4.0, 4.0, 4.0):
        h2.record(F, 0.01)
    assert check_termination(h2, limits) == "continue"
    h3 = History()
    for k in range(10):
        h3.record(10.0 - k, 0.1)
    assert check_termination(h3, limits) == "iteration-capped"
