"""Backward-in-time integration of the value model (V, V_X, V_XX) along a nominal.

Discrete conventions (see :mod:`pdeddp.grid`): V_X is a field, V_XX a kernel, and
every spatial pairing carries one dx per contracted index.  In plain matrix terms
the three equations integrated backward from the terminal cost are::

    -dV_XX/dt = L_XX + F_X^T V_XX + V_XX F_X
                - dx^2 * V_XX F_U Lbar F_U^T V_XX            (per control channel)
    -dV_X/dt  = L_X + F_X^T V_X
                - dx * V_XX F_U Lbar (L_U + dx F_U^T V_X)
    -dV/dt    = L - 1/2 (L_U + dx F_U^T V_X)^T Lbar (L_U + dx F_U^T V_X)

with ``Lbar`` the actuator-space inverse of L_UU and the adjoint realized as the
matrix transpose.  A boundary-control channel enters each equation with the same
structure through its own actuation matrix and weight.

The first-order equation is not stepped in V_X directly: the pass integrates the
affine offset ``s(t) = V_X - V_XX * Xbar`` (the value-model gradient at the zero
field) and reconstructs ``V_X = s + V_XX * Xbar`` after each step.  The two forms
agree to the scheme's order; the offset form is preferred because its forcing
vanishes identically on linear-quadratic problems, so the pass reproduces the
Riccati reference exactly there instead of to O(dt).

Steppers: explicit Euler, midpoint RK2 with nominal quantities super-sampled at
interval midpoints, and a semi-implicit scheme whose linear-in-V_XX terms are
solved through a sparse Kronecker-sum system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cost import CostSpec, running_cost, terminal_cost_partials
from .errors import DivergenceError
from .grid import SpatialGrid
from .models import PdeModel, StateTrajectory

VALUE_DIVERGENCE_LIMIT = 1e12

EULER = "euler"
RK2 = "rk2"
SEMI_IMPLICIT = "semi_implicit"


@dataclass(frozen=True)
class Scheme:
    """Time-stepping selector for the backward pass.

    ``mu`` is the regularization added to V_XX after every step as ``mu/dx * I``
    (kernel convention); symmetrization is always applied.
    """

    kind: str = EULER
    mu: float = 1e-6

    def __post_init__(self):
        if self.kind not in (EULER, RK2, SEMI_IMPLICIT):
            raise ValueError(f"unknown scheme kind: {self.kind!r}")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")


@dataclass
class ValueTrajectory:
    """Time-indexed value model: V (N+1,), V_X (N+1, n), V_XX (N+1, n, n)."""

    V: np.ndarray
    V_X: np.ndarray
    V_XX: np.ndarray


@dataclass(frozen=True)
class ControlChannel:
    """One control channel's actuation matrix, weight inverse, and partials hook."""

    B: np.ndarray          # (n, m) actuation
    L_inv: np.ndarray      # (m, m) inverse of L_UU
    weight: float          # scalar weight (L_U = 2 * weight * U)


def step_second_explicit(V_XX_next: np.ndarray, F_X: np.ndarray,
                         channels: list[ControlChannel], L_XX: np.ndarray,
                         grid: SpatialGrid, dt: float) -> np.ndarray:
    """One explicit Euler step of the second-order equation (before post-processing)."""
    G = L_XX + F_X.T @ V_XX_next + V_XX_next @ F_X
    dx2 = grid.dx ** 2
    for ch in channels:
        WB = V_XX_next @ ch.B
        G = G - dx2 * (WB @ ch.L_inv @ WB.T)
    return V_XX_next + dt * G


def kron_system_matrix(F_X: np.ndarray, dt: float) -> sp.csc_matrix:
    """Semi-implicit system matrix ``I - dt * (F_X^T (+) F_X^T)`` on vec(V_XX),
    where ``(+)`` is the Kronecker sum."""
    n = F_X.shape[0]
    At = sp.csc_matrix(F_X.T)
    eye_n = sp.identity(n, format="csc")
    ksum = sp.kron(At, eye_n, format="csc") + sp.kron(eye_n, At, format="csc")
    return (sp.identity(n * n, format="csc") - dt * ksum).tocsc()


def make_kron_solver(F_X: np.ndarray, dt: float):
    """Sparse LU factorization of :func:`kron_system_matrix`, reusable across steps."""
    try:
        return splu(kron_system_matrix(F_X, dt))
    except RuntimeError as exc:
        raise RuntimeError(f"semi-implicit system factorization failed: {exc}") from exc


def step_second_semi_implicit(V_XX_next: np.ndarray, F_X: np.ndarray,
                              channels: list[ControlChannel], L_XX: np.ndarray,
                              grid: SpatialGrid, dt: float, solver=None) -> np.ndarray:
    """One semi-implicit step: linear terms implicit via the Kronecker-sum solve,
    quadratic terms evaluated at the incoming kernel."""
    n = V_XX_next.shape[0]
    dx2 = grid.dx ** 2
    G = L_XX
    for ch in channels:
        WB = V_XX_next @ ch.B
        G = G - dx2 * (WB @ ch.L_inv @ WB.T)
    rhs = V_XX_next + dt * G
    if solver is None:
        solver = make_kron_solver(F_X, dt)
    return solver.solve(rhs.ravel()).reshape(n, n)


def step_offset_explicit(s_next: np.ndarray, V_XX_next: np.ndarray, F_X: np.ndarray,
                         channels: list[ControlChannel], controls: list[np.ndarray],
                         offset_forcing: np.ndarray, transport: np.ndarray,
                         grid: SpatialGrid, dt: float) -> np.ndarray:
    """One explicit step of the first-order equation in offset form.

    Args:
        controls: nominal control per channel (defines L_U = 2 w U).
        offset_forcing: the constant ``L_X - L_XX * Xbar`` of the quadratic cost.
        transport: ``F_X @ Xbar - F(Xbar, Ubar)``, the nominal transport defect.
    """
    dx = grid.dx
    rate = offset_forcing + F_X.T @ s_next - dx * (V_XX_next @ transport)
    for ch, U in zip(channels, controls):
        WB = V_XX_next @ ch.B
        rate = rate - dx * (WB @ (ch.L_inv @ (2.0 * ch.weight * U)))
        rate = rate - dx * dx * (WB @ (ch.L_inv @ (ch.B.T @ s_next)))
    return s_next + dt * rate


def step_zeroth_explicit(V_next: float, V_X_next: np.ndarray,
                         channels: list[ControlChannel], controls: list[np.ndarray],
                         L_value: float, grid: SpatialGrid, dt: float) -> float:
    """One explicit step of the zeroth-order equation."""
    drop = 0.0
    for ch, U in zip(channels, controls):
        q_u = 2.0 * ch.weight * U + grid.dx * (ch.B.T @ V_X_next)
        drop += 0.5 * float(q_u @ (ch.L_inv @ q_u))
    return V_next + dt * (L_value - drop)


def _channels_for(model: PdeModel, spec: CostSpec, F_U: np.ndarray) -> list[ControlChannel]:
    chans = [ControlChannel(F_U, np.eye(F_U.shape[1]) / (2.0 * spec.r_d), spec.r_d)]
    if model.b_act is not None:
        m_b = model.b_act.shape[1]
        chans.append(ControlChannel(model.b_act, np.eye(m_b) / (2.0 * spec.r_b), spec.r_b))
    return chans


def backward_pass(traj: StateTrajectory, U_traj: np.ndarray, model: PdeModel,
                  spec: CostSpec, scheme: Scheme, grid: SpatialGrid, dt: float,
                  U_b_traj: np.ndarray | None = None) -> ValueTrajectory:
    """Integrate (V, V_X, V_XX) backward from the terminal cost along a nominal.

    The terminal entries equal the terminal-cost partials exactly; after every
    interior step V_XX is symmetrized and regularized by ``scheme.mu / dx * I``.

    Raises:
        DivergenceError: when any value magnitude exceeds ``1e12``.
    """
    N = traj.n_steps
    n = grid.n_nodes
    dx = grid.dx
    X = traj.states
    U_traj = np.asarray(U_traj, dtype=float)
    has_b = model.b_act is not None
    if has_b and U_b_traj is None:
        U_b_traj = np.zeros((N, model.b_act.shape[1]))

    phi, phi_X, phi_XX = terminal_cost_partials(spec, X[N], grid)
    V = np.empty(N + 1)
    V_X = np.empty((N + 1, n))
    V_XX = np.empty((N + 1, n, n))
    V[N] = phi
    V_X[N] = phi_X
    V_XX[N] = phi_XX
    s = phi_X - dx * (phi_XX @ X[N])

    L_XX = (2.0 * spec.q / dx) * np.diag(spec.mask)
    offset_forcing = -2.0 * spec.q * spec.mask * spec.desired
    mu_I = (scheme.mu / dx) * np.eye(n) if scheme.mu > 0 else None
    kron_solver = None
    first_solver = None

    def nominal(k, state):
        """Channel data and transport defect at one nominal sample."""
        t = traj.times[k]
        F_X, F_U = model.jacobians(t, state, U_traj[k])
        controls = [U_traj[k]]
        U_b = None
        if has_b:
            U_b = U_b_traj[k]
            controls.append(U_b)
        F_nom = model.rhs(t, state, U_traj[k], U_b)
        return F_X, _channels_for(model, spec, F_U), controls, F_X @ state - F_nom

    for k in range(N - 1, -1, -1):
        W_next = V_XX[k + 1]
        if scheme.kind == EULER:
            F_X, chans, controls, transport = nominal(k, X[k])
            W_new = step_second_explicit(W_next, F_X, chans, L_XX, grid, dt)
            s = step_offset_explicit(s, W_next, F_X, chans, controls,
                                     offset_forcing, transport, grid, dt)
            L_val = running_cost(spec, X[k], U_traj[k], grid,
                                 U_b_traj[k] if has_b else None)
            V[k] = step_zeroth_explicit(V[k + 1], V_X[k + 1], chans, controls,
                                        L_val, grid, dt)
        elif scheme.kind == SEMI_IMPLICIT:
            F_X, chans, controls, transport = nominal(k, X[k])
            if kron_solver is None or not model.linear:
                kron_solver = make_kron_solver(F_X, dt)
                first_solver = None
            W_new = step_second_semi_implicit(W_next, F_X, chans, L_XX, grid, dt,
                                              solver=kron_solver)
            # offset step: linear transport implicit, remaining terms explicit
            rate = offset_forcing - dx * (W_next @ transport)
            for ch, U in zip(chans, controls):
                WB = W_next @ ch.B
                rate = rate - dx * (WB @ (ch.L_inv @ (2.0 * ch.weight * U)))
                rate = rate - dx * dx * (WB @ (ch.L_inv @ (ch.B.T @ s)))
            if first_solver is None or not model.linear:
                first_solver = np.linalg.inv(np.eye(n) - dt * F_X.T)
            s = first_solver @ (s + dt * rate)
            L_val = running_cost(spec, X[k], U_traj[k], grid,
                                 U_b_traj[k] if has_b else None)
            V[k] = step_zeroth_explicit(V[k + 1], V_X[k + 1], chans, controls,
                                        L_val, grid, dt)
        elif scheme.kind == RK2:
            W_new, s, V[k] = _rk2_step(k, traj, U_traj, U_b_traj, model, spec,
                                       nominal, W_next, s, V[k + 1],
                                       L_XX, offset_forcing, grid, dt)
        else:  # pragma: no cover - guarded by Scheme validation
            raise ValueError(scheme.kind)

        W_new = 0.5 * (W_new + W_new.T)
        if mu_I is not None:
            W_new = W_new + mu_I
        V_XX[k] = W_new
        V_X[k] = s + dx * (W_new @ X[k])

        peak = max(abs(V[k]), float(np.max(np.abs(V_X[k]))), float(np.max(np.abs(W_new))))
        if not peak < VALUE_DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"backward pass diverged at step {k}: value magnitude {peak:.3e} "
                f"exceeds {VALUE_DIVERGENCE_LIMIT:.0e} (stiff step size or weights)")

    return ValueTrajectory(V=V, V_X=V_X, V_XX=V_XX)


def _rk2_step(k, traj, U_traj, U_b_traj, model, spec, nominal, W_next, s_next,
              V_next, L_XX, offset_forcing, grid, dt):
    """Midpoint RK2 step of the coupled (V_XX, s, V) system; nominal state samples
    are linearly interpolated at the interval midpoint, controls held per interval."""
    dx = grid.dx
    has_b = model.b_act is not None

    def rates(W, s, state_sample):
        F_X, chans, controls, transport = nominal(k, state_sample)
        G_W = L_XX + F_X.T @ W + W @ F_X
        G_s = offset_forcing + F_X.T @ s - dx * (W @ transport)
        V_X_stage = s + dx * (W @ state_sample)
        drop = 0.0
        for ch, U in zip(chans, controls):
            WB = W @ ch.B
            G_W = G_W - dx * dx * (WB @ ch.L_inv @ WB.T)
            G_s = G_s - dx * (WB @ (ch.L_inv @ (2.0 * ch.weight * U)))
            G_s = G_s - dx * dx * (WB @ (ch.L_inv @ (ch.B.T @ s)))
            q_u = 2.0 * ch.weight * U + dx * (ch.B.T @ V_X_stage)
            drop += 0.5 * float(q_u @ (ch.L_inv @ q_u))
        L_val = running_cost(spec, state_sample, U_traj[k], grid,
                             U_b_traj[k] if has_b else None)
        G_V = L_val - drop
        return G_W, G_s, G_V

    k1_W, k1_s, k1_V = rates(W_next, s_next, traj.states[k + 1])
    W_half = W_next + 0.5 * dt * k1_W
    s_half = s_next + 0.5 * dt * k1_s
    mid_state = 0.5 * (traj.states[k] + traj.states[k + 1])
    k2_W, k2_s, k2_V = rates(W_half, s_half, mid_state)
    return W_next + dt * k2_W, s_next + dt * k2_s, V_next + dt * k2_V
