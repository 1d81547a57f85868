import numpy as np
import pytest

from pdeddp.backward import EULER, RK2, SEMI_IMPLICIT, Scheme
from pdeddp.cost import CostSpec, total_cost
from pdeddp.errors import DivergenceError
from pdeddp.grid import BoundaryCondition, SpatialGrid, make_grid, second_difference
from pdeddp.lqr import (
    LqrProblem,
    check_ddp_equivalence,
    feedback_gain,
    lqr_backward,
    lqr_closed_loop,
    lqr_controls,
)
from pdeddp.models import HeatModel, HeatParams, StateTrajectory, rollout
from pdeddp.oracle import scalar_riccati_euler


def heat_problem(n=16, n_steps=80, tf=0.05, eps=0.08, q=3.0, q_f=7.0, r_d=0.5):
    grid = make_grid(n, 1.0)
    model = HeatModel(HeatParams(epsilon=eps), grid)
    spec = CostSpec(q=q, q_f=q_f, r_d=r_d, desired=np.zeros(n), mask=np.ones(n))
    dt = tf / n_steps
    prob = LqrProblem.from_reaching_cost(model.drift_jacobian(0.0, np.zeros(n)),
                                         model.act, spec, grid, dt, n_steps)
    return grid, model, spec, prob, dt, n_steps


def test_zero_weights_give_zero_kernel():
    grid = make_grid(8, 1.0)
    prob = LqrProblem(A=np.zeros((8, 8)), B_d=np.eye(8), q_kernel=np.zeros((8, 8)),
                      r_d=np.eye(8), terminal_kernel=np.zeros((8, 8)), grid=grid,
                      dt=0.01, n_steps=30)
    P = lqr_backward(prob).P
    assert np.all(P == 0.0)


def test_zero_dynamics_zero_actuation_accumulates_linearly():
    grid = make_grid(8, 1.0)
    Q = np.diag(np.linspace(1.0, 2.0, 8))
    P_f = np.diag(np.linspace(3.0, 4.0, 8))
    prob = LqrProblem(A=np.zeros((8, 8)), B_d=np.zeros((8, 1)), q_kernel=Q,
                      r_d=np.eye(1), terminal_kernel=P_f, grid=grid,
                      dt=0.02, n_steps=25)
    P = lqr_backward(prob).P
    for k in range(26):
        expected = P_f + Q * (25 - k) * 0.02
        assert np.allclose(P[k], expected, atol=1e-13)


def test_scalar_riccati_matches_independent_euler():
    one = SpatialGrid(1, 2.0, 1.0, BoundaryCondition())
    a, b, q, r, p_f = -0.4, 1.1, 0.9, 0.6, 2.0
    n_steps, dt = 200, 5e-4
    prob = LqrProblem(A=np.array([[a]]), B_d=np.array([[b]]), q_kernel=np.array([[q]]),
                      r_d=np.array([[r]]), terminal_kernel=np.array([[p_f]]),
                      grid=one, dt=dt, n_steps=n_steps)
    P = lqr_backward(prob).P[:, 0, 0]
    oracle = scalar_riccati_euler(a, b, q, r, p_f, dt, n_steps)
    assert np.max(np.abs(P - oracle)) <= 1e-10


def test_kernel_stays_symmetric_psd():
    grid, model, spec, prob, dt, n_steps = heat_problem()
    P = lqr_backward(prob).P
    for k in range(0, n_steps + 1, 10):
        assert np.max(np.abs(P[k] - P[k].T)) <= 1e-10
        assert np.min(np.linalg.eigvalsh(P[k])) >= -1e-8


def test_controls_trivial_cases():
    grid, model, spec, prob, dt, n_steps = heat_problem()
    P = lqr_backward(prob)
    X = np.zeros((n_steps + 1, grid.n_nodes))
    assert np.all(lqr_controls(prob, P, X) == 0.0)
    zeroP = lqr_backward(LqrProblem(prob.A, prob.B_d, np.zeros_like(prob.q_kernel),
                                    prob.r_d, np.zeros_like(prob.terminal_kernel),
                                    grid, dt, n_steps))
    X = np.ones((n_steps + 1, grid.n_nodes))
    assert np.all(lqr_controls(prob, zeroP, X) == 0.0)


def test_closed_loop_beats_open_loop():
    grid, model, spec, prob, dt, n_steps = heat_problem(tf=0.2, n_steps=200)
    X0 = np.sin(np.pi * grid.nodes())
    X_cl, U_cl, _ = lqr_closed_loop(prob, X0)
    traj_cl = StateTrajectory(times=dt * np.arange(n_steps + 1), states=X_cl)
    open_traj = rollout(model, X0, np.zeros((n_steps, grid.n_nodes)), dt, n_steps)
    J_cl = total_cost(spec, traj_cl, U_cl, grid, dt)
    J_open = total_cost(spec, open_traj, np.zeros((n_steps, grid.n_nodes)), grid, dt)
    assert J_cl < J_open


def test_factor_two_convention_scaling_is_consistent():
    # doubling (Q, R, P_f) doubles the kernel but leaves gains and controls alone
    grid, model, spec, prob, dt, n_steps = heat_problem()
    doubled = LqrProblem(prob.A, prob.B_d, 2 * prob.q_kernel, 2 * prob.r_d,
                         2 * prob.terminal_kernel, grid, dt, n_steps)
    P1 = lqr_backward(prob).P
    P2 = lqr_backward(doubled).P
    assert np.allclose(P2, 2 * P1, rtol=1e-12, atol=1e-12)
    K1 = feedback_gain(prob, P1[0])
    K2 = feedback_gain(doubled, P2[0])
    assert np.allclose(K1, K2, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("kind", [EULER, RK2, SEMI_IMPLICIT])
def test_schemes_agree_to_first_order(kind):
    grid, model, spec, prob, dt, n_steps = heat_problem()
    ref = lqr_backward(prob, Scheme(EULER, 0.0)).P[0]
    P = lqr_backward(prob, Scheme(kind, 0.0)).P[0]
    assert np.max(np.abs(P - ref)) <= 60.0 * dt * np.max(np.abs(ref))


def test_equivalence_report_detects_mismatched_weights():
    from pdeddp.backward import backward_pass

    grid, model, spec, prob, dt, n_steps = heat_problem()
    U = np.zeros((n_steps, grid.n_nodes))
    traj = rollout(model, np.sin(np.pi * grid.nodes()), U, dt, n_steps)
    values = backward_pass(traj, U, model, spec, Scheme(EULER, 0.0), grid, dt)
    matched = check_ddp_equivalence(prob, values, traj, U, Scheme(EULER, 0.0))
    assert matched["v_xx"] <= 1e-10
    wrong = LqrProblem(prob.A, prob.B_d, 2.5 * prob.q_kernel, prob.r_d,
                       prob.terminal_kernel, grid, dt, n_steps)
    report = check_ddp_equivalence(wrong, values, traj, U, Scheme(EULER, 0.0))
    assert report["v_xx"] > 1e-3


def test_riccati_divergence_guard():
    grid = make_grid(10, 1.0)
    d2, _ = second_difference(grid)
    prob = LqrProblem(A=-50.0 * d2, B_d=np.zeros((10, 1)),
                      q_kernel=1e9 * np.eye(10), r_d=np.eye(1),
                      terminal_kernel=1e9 * np.eye(10), grid=grid,
                      dt=0.05, n_steps=500)
    with pytest.raises(DivergenceError):
        lqr_backward(prob)
