import numpy as np
import pytest

from pdeddp.backward import EULER, Scheme, backward_pass
from pdeddp.cost import CostSpec, total_cost
from pdeddp.errors import DivergenceError, LineSearchError
from pdeddp.grid import make_grid
from pdeddp.lqr import LqrProblem, lqr_closed_loop
from pdeddp.models import BurgersModel, BurgersParams, HeatModel, HeatParams, StateTrajectory, rollout
from pdeddp.solver import (
    AnnealConfig,
    SolverConfig,
    anneal_solve,
    backtracking_search,
    ddp_solve,
    diagnostics,
    value_integral,
)


def lq_problem(n=16, n_steps=80, tf=0.06, eps=0.06):
    grid = make_grid(n, 1.0)
    model = HeatModel(HeatParams(epsilon=eps), grid)
    spec = CostSpec(q=4.0, q_f=8.0, r_d=0.7, desired=np.zeros(n), mask=np.ones(n))
    return grid, model, spec, np.sin(np.pi * grid.nodes()), tf / n_steps, n_steps


def small_burgers(n=24, n_steps=150, tf=0.3):
    grid = make_grid(n, 1.0)
    model = BurgersModel(BurgersParams(epsilon=0.05, bc_value=1.0), grid, n_act=5)
    grid = model.grid
    desired = np.where(grid.nodes() < 0.5, 1.5, 1.0)
    spec = CostSpec(q=8.0, q_f=8.0, r_d=0.4, desired=desired, mask=np.ones(n))
    return grid, model, spec, np.zeros(n), tf / n_steps, n_steps


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(gamma_d=0.0)
    with pytest.raises(ValueError):
        SolverConfig(gamma_d=1.5)
    with pytest.raises(ValueError):
        SolverConfig(line_search="bisect")
    with pytest.raises(ValueError):
        AnnealConfig(target_ratio=10.0, growth=1.0)


def test_backtracking_returns_first_improvement():
    calls = []

    def evaluate(g):
        calls.append(g)
        return {1.0: 5.0, 0.5: 2.0, 0.25: 1.0}[g]

    gamma, cost = backtracking_search([1.0, 0.5, 0.25], evaluate, 3.0)
    assert gamma == 0.5 and cost == 2.0
    assert calls == [1.0, 0.5]


def test_backtracking_exhaustion_and_validation():
    with pytest.raises(LineSearchError):
        backtracking_search([1.0, 0.5], lambda g: 10.0, 1.0)
    with pytest.raises(ValueError):
        backtracking_search([], lambda g: 0.0, 1.0)
    with pytest.raises(ValueError):
        backtracking_search([0.5, 1.0], lambda g: 0.0, 1.0)


def test_already_optimal_converges_first_iteration():
    grid, model, spec, _, dt, n_steps = lq_problem()
    sol = ddp_solve(model, spec, np.zeros(grid.n_nodes),
                    np.zeros((n_steps, grid.n_nodes)),
                    SolverConfig(max_iters=5, gamma_d=1.0, scheme=Scheme(EULER, 0.0)),
                    grid, dt, n_steps)
    assert sol.converged
    assert sol.history[-1].iteration == 1
    assert sol.history[-1].total_cost == 0.0


def test_lq_one_shot_optimality():
    grid, model, spec, X0, dt, n_steps = lq_problem()
    cfg = SolverConfig(max_iters=3, gamma_d=1.0, line_search="off",
                       tol_rel_cost=0.0, scheme=Scheme(EULER, 0.0))
    sol = ddp_solve(model, spec, X0, np.zeros((n_steps, grid.n_nodes)), cfg,
                    grid, dt, n_steps)
    prob = LqrProblem.from_reaching_cost(model.drift_jacobian(0.0, X0), model.act,
                                         spec, grid, dt, n_steps)
    X_cl, U_cl, _ = lqr_closed_loop(prob, X0)
    traj_cl = StateTrajectory(times=dt * np.arange(n_steps + 1), states=X_cl)
    J_lqr = total_cost(spec, traj_cl, U_cl, grid, dt)
    J_1 = sol.history[1].total_cost
    assert abs(J_1 - J_lqr) / abs(J_lqr) <= 1e-6
    # after the Newton step the update direction collapses
    assert sol.history[2].step_norm <= 1e-8 * max(1.0, sol.history[1].step_norm)


@pytest.mark.parametrize("gamma", [0.1, 0.05])
def test_fixed_small_gamma_descends_monotonically(gamma):
    grid, model, spec, X0, dt, n_steps = lq_problem()
    cfg = SolverConfig(max_iters=12, gamma_d=gamma, line_search="off",
                       tol_rel_cost=0.0, scheme=Scheme(EULER, 1e-6))
    sol = ddp_solve(model, spec, X0, np.zeros((n_steps, grid.n_nodes)), cfg,
                    grid, dt, n_steps)
    costs = [r.total_cost for r in sol.history]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    vints = [r.value_integral for r in sol.history]
    assert all(b <= a for a, b in zip(vints, vints[1:]))
    assert vints[-1] < vints[0]


def test_rk2_scheme_solves_end_to_end():
    from pdeddp.backward import RK2

    grid, model, spec, X0, dt, n_steps = lq_problem()
    cfg = SolverConfig(max_iters=15, gamma_d=1.0, line_search="backtracking",
                       tol_rel_cost=1e-8, scheme=Scheme(RK2, 0.0))
    sol = ddp_solve(model, spec, X0, np.zeros((n_steps, grid.n_nodes)), cfg,
                    grid, dt, n_steps)
    costs = [r.total_cost for r in sol.history]
    assert sol.converged
    assert costs[-1] < costs[0]


def test_burgers_line_search_improves_and_converges():
    grid, model, spec, X0, dt, n_steps = small_burgers()
    cfg = SolverConfig(max_iters=40, gamma_d=1.0, line_search="backtracking",
                       max_tries=10, tol_rel_cost=1e-8, scheme=Scheme(EULER, 1e-6))
    sol = ddp_solve(model, spec, X0, np.zeros((n_steps, model.n_act)), cfg,
                    grid, dt, n_steps)
    costs = [r.total_cost for r in sol.history]
    assert sol.converged
    assert costs[-1] < costs[0]
    assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_deterministic_histories():
    grid, model, spec, X0, dt, n_steps = small_burgers()
    cfg = SolverConfig(max_iters=6, gamma_d=0.5, line_search="backtracking",
                       scheme=Scheme(EULER, 1e-6))
    a = ddp_solve(model, spec, X0, np.zeros((n_steps, model.n_act)), cfg, grid, dt, n_steps)
    b = ddp_solve(model, spec, X0, np.zeros((n_steps, model.n_act)), cfg, grid, dt, n_steps)
    for ra, rb in zip(a.history, b.history):
        assert ra == rb
    assert np.array_equal(a.U, b.U)


def test_fused_forward_identical_to_reference():
    grid, model, spec, X0, dt, n_steps = small_burgers()
    base = dict(max_iters=5, gamma_d=0.4, line_search="off", tol_rel_cost=0.0,
                scheme=Scheme(EULER, 1e-6))
    ref = ddp_solve(model, spec, X0, np.zeros((n_steps, model.n_act)),
                    SolverConfig(**base), grid, dt, n_steps)
    fused = ddp_solve(model, spec, X0, np.zeros((n_steps, model.n_act)),
                      SolverConfig(fused_forward=True, **base), grid, dt, n_steps)
    assert np.array_equal(ref.U, fused.U)
    assert np.array_equal(ref.trajectory.states, fused.trajectory.states)
    for ra, rb in zip(ref.history, fused.history):
        assert ra == rb


def test_best_iterate_returned():
    grid, model, spec, X0, dt, n_steps = lq_problem()
    # overlong fixed-step run: final iterates cannot beat the best one
    cfg = SolverConfig(max_iters=8, gamma_d=1.0, line_search="off",
                       tol_rel_cost=0.0, scheme=Scheme(EULER, 0.0))
    sol = ddp_solve(model, spec, X0, np.zeros((n_steps, grid.n_nodes)), cfg,
                    grid, dt, n_steps)
    best = min(r.total_cost for r in sol.history)
    returned = total_cost(spec, sol.trajectory, sol.U, grid, dt)
    assert returned == pytest.approx(best, rel=1e-12)


def test_divergence_reports_iteration():
    grid, model, spec, X0, dt, n_steps = lq_problem()
    bad_dt = grid.dx**2 / (2 * 0.06) * 2.5
    with pytest.raises(DivergenceError) as err:
        ddp_solve(model, spec, np.ones(grid.n_nodes) * 1e-2,
                  np.zeros((400, grid.n_nodes)),
                  SolverConfig(max_iters=3, gamma_d=1.0, scheme=Scheme(EULER, 0.0)),
                  grid, bad_dt, 400)
    assert "iteration" in str(err.value)


def test_value_integral_and_diagnostics():
    grid, model, spec, X0, dt, n_steps = lq_problem(n=8, n_steps=100, tf=1.0)
    U = np.zeros((n_steps, 8))
    traj = rollout(model, np.zeros(8), U, dt, n_steps)
    values = backward_pass(traj, U, model, spec, Scheme(EULER, 0.0), grid, dt)
    assert value_integral(values, dt) == 0.0
    values.V[:] = 3.0
    assert value_integral(values, dt) == pytest.approx(3.0)  # constant over unit horizon
    rec = diagnostics(values, spec, traj, U, grid, dt, 4, step_norm=0.5, gamma=0.25)
    assert rec.iteration == 4 and rec.gamma == 0.25
    assert rec.total_cost == pytest.approx(rec.state_cost + rec.control_cost)


def test_anneal_requires_config_and_valid_target():
    grid, model, spec, X0, dt, n_steps = small_burgers(n_steps=40, tf=0.1)
    with pytest.raises(ValueError):
        anneal_solve(model, spec, X0, SolverConfig(), grid, dt, n_steps)
    cfg = SolverConfig(anneal=AnnealConfig(target_ratio=1.0))
    with pytest.raises(ValueError):
        anneal_solve(model, spec, X0, cfg, grid, dt, n_steps)


def test_anneal_single_round_matches_plain_solve():
    grid, model, spec, X0, dt, n_steps = small_burgers(n_steps=60, tf=0.15)
    start_ratio = spec.q / spec.r_d
    ann = AnnealConfig(target_ratio=start_ratio, growth=4.0, inner_tol=1e-5)
    cfg = SolverConfig(max_iters=10, gamma_d=1.0, line_search="backtracking",
                       scheme=Scheme(EULER, 1e-6), anneal=ann)
    plain_cfg = SolverConfig(max_iters=10, gamma_d=1.0, line_search="backtracking",
                             scheme=Scheme(EULER, 1e-6), tol_rel_cost=1e-5)
    a = anneal_solve(model, spec, X0, cfg, grid, dt, n_steps)
    b = ddp_solve(model, spec, X0, np.zeros((n_steps, model.n_act)), plain_cfg,
                  grid, dt, n_steps)
    assert np.array_equal(a.U, b.U)
    assert [r.total_cost for r in a.history] == [r.total_cost for r in b.history]


def test_anneal_reaches_target_ratio_and_improves_tracking():
    grid, model, spec, X0, dt, n_steps = small_burgers(n_steps=60, tf=0.15)
    ann = AnnealConfig(target_ratio=400.0 * spec.q / spec.r_d, growth=4.0,
                       inner_tol=1e-4)
    cfg = SolverConfig(max_iters=20, gamma_d=1.0, line_search="backtracking",
                       scheme=Scheme(EULER, 1e-6), anneal=ann)
    sol = anneal_solve(model, spec, X0, cfg, grid, dt, n_steps)
    plain = ddp_solve(model, spec, X0, np.zeros((n_steps, model.n_act)),
                      SolverConfig(max_iters=20, gamma_d=1.0,
                                   line_search="backtracking",
                                   scheme=Scheme(EULER, 1e-6)),
                      grid, dt, n_steps)
    mask = spec.mask.astype(bool)
    dev_ann = sol.trajectory.states[-1][mask] - spec.desired[mask]
    dev_plain = plain.trajectory.states[-1][mask] - spec.desired[mask]
    assert np.sqrt(np.mean(dev_ann**2)) < np.sqrt(np.mean(dev_plain**2))
    # iteration indices strictly increase across concatenated rounds
    iters = [r.iteration for r in sol.history]
    assert iters == sorted(iters) and len(set(iters)) == len(iters)
