"""Independent verification machinery.

Everything here is deliberately separate from the solver path: the costate-style
recursion ``psi`` is the exact discrete adjoint of the explicit-Euler rollout, so
its contraction with the actuation map is the exact gradient of the discrete cost
and can be cross-checked against brute-force finite differences; the scalar
reference re-implements the backward equations with plain floats for the one-node
reduction check.  Exercised by the test suite and the CLI ``verify`` subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .backward import ValueTrajectory
from .cost import CostSpec
from .grid import SpatialGrid
from .models import PdeModel, StateTrajectory


def transition_operators(traj: StateTrajectory, U_traj: np.ndarray, model: PdeModel,
                         dt: float) -> np.ndarray:
    """Per-step transition matrices ``Phi_k = I + dt F_X(t_k)`` of the linearized flow."""
    N = traj.n_steps
    n = traj.states.shape[1]
    out = np.empty((N, n, n))
    eye = np.eye(n)
    for k in range(N):
        F_X, _ = model.jacobians(traj.times[k], traj.states[k], U_traj[k])
        out[k] = eye + dt * F_X
    return out


def psi_recursion(traj: StateTrajectory, U_traj: np.ndarray, model: PdeModel,
                  spec: CostSpec, grid: SpatialGrid, dt: float) -> np.ndarray:
    """Backward costate recursion ``psi_k = dt L_X(t_k) + Phi_k^T psi_{k+1}`` with
    terminal value equal to the terminal cost gradient (field convention)."""
    N = traj.n_steps
    psi = np.empty((N + 1, grid.n_nodes))
    psi[N] = 2.0 * spec.q_f * spec.mask * (traj.states[N] - spec.desired)
    for k in range(N - 1, -1, -1):
        F_X, _ = model.jacobians(traj.times[k], traj.states[k], U_traj[k])
        L_X = 2.0 * spec.q * spec.mask * (traj.states[k] - spec.desired)
        psi[k] = dt * L_X + psi[k + 1] + dt * (F_X.T @ psi[k + 1])
    return psi


def cost_gradient_psi(traj: StateTrajectory, U_traj: np.ndarray, psi: np.ndarray,
                      model: PdeModel, spec: CostSpec, grid: SpatialGrid,
                      dt: float) -> np.ndarray:
    """Exact gradient of the discrete cost w.r.t. each control entry:
    ``g_k = dt (L_U(t_k) + dx F_U^T psi_{k+1})``."""
    N = traj.n_steps
    g = np.empty((N, model.n_act))
    for k in range(N):
        _, F_U = model.jacobians(traj.times[k], traj.states[k], U_traj[k])
        g[k] = dt * (2.0 * spec.r_d * U_traj[k] + grid.dx * (F_U.T @ psi[k + 1]))
    return g


def stationarity_residual(traj: StateTrajectory, U_traj: np.ndarray, model: PdeModel,
                          spec: CostSpec, grid: SpatialGrid, dt: float) -> float:
    """L2-in-time norm of the gradient field ``L_U + dx F_U^T psi``."""
    psi = psi_recursion(traj, U_traj, model, spec, grid, dt)
    g = cost_gradient_psi(traj, U_traj, psi, model, spec, grid, dt)
    r = g / dt
    return float(np.sqrt(np.sum(r * r) * dt))


def fd_gradient(evaluate: Callable[[np.ndarray], float], U_traj: np.ndarray,
                h: float) -> np.ndarray:
    """Central finite differences of a cost functional w.r.t. every control entry."""
    if h <= 0:
        raise ValueError("h must be positive")
    U_traj = np.asarray(U_traj, dtype=float)
    g = np.empty_like(U_traj)
    for idx in np.ndindex(U_traj.shape):
        up = U_traj.copy()
        up[idx] += h
        down = U_traj.copy()
        down[idx] -= h
        g[idx] = (evaluate(up) - evaluate(down)) / (2.0 * h)
    return g


def reconstruct_gradient_gap(traj: StateTrajectory, U_traj: np.ndarray,
                             values: ValueTrajectory, model: PdeModel,
                             spec: CostSpec, grid: SpatialGrid, dt: float) -> np.ndarray:
    """Reconstruct ``D = V_X - psi`` by its discrete backward transport.

    The gap obeys ``D_k = Phi_k^T D_{k+1} - dt Q_UX^T Q_UU^{-1} Q_U`` plus the
    explicit-scheme transport remainder of order dt^2; both terms are formed from
    the nominal quantities only, so agreement with the direct subtraction checks
    that the implemented recursions fit the transport structure.  Explicit Euler,
    distributed control, zero regularization.
    """
    if model.b_act is not None:
        raise ValueError("gap reconstruction supports distributed control only")
    N = traj.n_steps
    dx = grid.dx
    inv_w = 1.0 / (2.0 * spec.r_d)
    D = np.zeros((N + 1, grid.n_nodes))
    for k in range(N - 1, -1, -1):
        F_X, F_U = model.jacobians(traj.times[k], traj.states[k], U_traj[k])
        F_nom = model.rhs(traj.times[k], traj.states[k], U_traj[k])
        W_next = values.V_XX[k + 1]
        q_u = 2.0 * spec.r_d * U_traj[k] + dx * (F_U.T @ values.V_X[k + 1])
        WB = W_next @ F_U
        WF = W_next @ F_nom
        gain_term = dx * (WB @ (inv_w * q_u))
        remainder = dx * (F_X.T @ WF - dx * dx * (WB @ (inv_w * (F_U.T @ WF))))
        D[k] = D[k + 1] + dt * (F_X.T @ D[k + 1]) - dt * gain_term - dt * dt * remainder
    return D


@dataclass(frozen=True)
class ScalarProblem:
    """One-dimensional control problem for the reduction cross-check.

    ``f``, ``f_x``, ``f_u`` are plain scalar functions of ``(x, u)``; the cost is
    the same no-1/2-prefactor quadratic as :mod:`pdeddp.cost` with unit mask.
    """

    f: Callable[[float, float], float]
    f_x: Callable[[float, float], float]
    f_u: Callable[[float, float], float]
    q: float
    q_f: float
    r: float
    target: float
    x0: float
    dt: float
    n_steps: int
    u_traj: np.ndarray


@dataclass
class ScalarDdpResult:
    x: np.ndarray
    V: np.ndarray
    V_x: np.ndarray
    V_xx: np.ndarray
    k: np.ndarray
    K: np.ndarray


def scalar_ddp_reference(prob: ScalarProblem) -> ScalarDdpResult:
    """Plain-float implementation of the backward value equations and gains.

    Same stepping structure as the field implementation (explicit Euler, first
    order integrated through the affine offset), written entirely in scalars.
    """
    N = prob.n_steps
    dt = prob.dt
    l_xx = 2.0 * prob.q
    l_uu = 2.0 * prob.r
    x = np.empty(N + 1)
    x[0] = prob.x0
    for k in range(N):
        x[k + 1] = x[k] + dt * prob.f(x[k], prob.u_traj[k])

    V = np.empty(N + 1)
    V_x = np.empty(N + 1)
    V_xx = np.empty(N + 1)
    k_ff = np.empty(N)
    K_fb = np.empty(N)
    V[N] = prob.q_f * (x[N] - prob.target) ** 2
    V_x[N] = 2.0 * prob.q_f * (x[N] - prob.target)
    V_xx[N] = 2.0 * prob.q_f
    s = V_x[N] - V_xx[N] * x[N]
    for k in range(N - 1, -1, -1):
        u = prob.u_traj[k]
        fx = prob.f_x(x[k], u)
        fu = prob.f_u(x[k], u)
        f_val = prob.f(x[k], u)
        l_x = 2.0 * prob.q * (x[k] - prob.target)
        l_u = 2.0 * prob.r * u
        W = V_xx[k + 1]
        q_u = l_u + fu * V_x[k + 1]
        V[k] = V[k + 1] + dt * (
            prob.q * (x[k] - prob.target) ** 2 + prob.r * u * u
            - 0.5 * q_u * q_u / l_uu)
        s = s + dt * ((l_x - l_xx * x[k]) + fx * s
                      - W * fu * (fu * s) / l_uu
                      - W * fu * l_u / l_uu
                      - W * (fx * x[k] - f_val))
        V_xx[k] = W + dt * (l_xx + 2.0 * fx * W - W * fu * fu * W / l_uu)
        V_x[k] = s + V_xx[k] * x[k]
        k_ff[k] = -(l_u + fu * V_x[k]) / l_uu
        K_fb[k] = -fu * V_xx[k] / l_uu
    return ScalarDdpResult(x=x, V=V, V_x=V_x, V_xx=V_xx, k=k_ff, K=K_fb)


def scalar_riccati_euler(a: float, b: float, q: float, r: float, p_f: float,
                         dt: float, n_steps: int) -> np.ndarray:
    """Explicit Euler on the scalar Riccati equation
    ``-dp/dt = q + 2 a p - p^2 b^2 / r`` backward from ``p_f``."""
    p = np.empty(n_steps + 1)
    p[n_steps] = p_f
    for k in range(n_steps - 1, -1, -1):
        p[k] = p[k + 1] + dt * (q + 2.0 * a * p[k + 1] - p[k + 1] ** 2 * b * b / r)
    return p
