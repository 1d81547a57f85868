"""Feedforward/feedback gains, variation dynamics rollout, and the control update.

Gains live in actuator space; all spatial quadrature from the kernel contractions
is folded into them at construction, so the update is the plain affine law
``delta_U_k = k_k + K_k @ delta_X_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backward import ValueTrajectory
from .cost import CostSpec
from .errors import DivergenceError
from .grid import SpatialGrid
from .models import DIVERGENCE_LIMIT, PdeModel, StateTrajectory


@dataclass
class GainTrajectory:
    """Per-step gains: k_d (N, m), K_d (N, m, n); boundary analogues when the
    model has a boundary channel."""

    k_d: np.ndarray
    K_d: np.ndarray
    k_b: np.ndarray | None = None
    K_b: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.k_d.shape[0]


@dataclass
class VariationTrajectory:
    """Linearized state deviation and the control update that drives it."""

    delta_X: np.ndarray
    delta_U: np.ndarray
    delta_U_b: np.ndarray | None = None


def compute_gains(values: ValueTrajectory, traj: StateTrajectory, U_traj: np.ndarray,
                  model: PdeModel, spec: CostSpec, grid: SpatialGrid,
                  U_b_traj: np.ndarray | None = None) -> GainTrajectory:
    """Per-step optimal update gains from the value model.

    ``k = -L_UU^{-1} (L_U + dx B^T V_X)`` and ``K = -L_UU^{-1} dx^2 B^T V_XX``
    for each control channel (pure-quadratic cost, no cross terms).
    """
    N = traj.n_steps
    dx = grid.dx
    has_b = model.b_act is not None
    k_d = np.empty((N, model.n_act))
    K_d = np.empty((N, model.n_act, grid.n_nodes))
    k_b = K_b = None
    if has_b:
        m_b = model.b_act.shape[1]
        k_b = np.empty((N, m_b))
        K_b = np.empty((N, m_b, grid.n_nodes))
        if U_b_traj is None:
            U_b_traj = np.zeros((N, m_b))
    inv_d = 1.0 / (2.0 * spec.r_d)
    inv_b = 1.0 / (2.0 * spec.r_b)
    for k in range(N):
        _, F_U = model.jacobians(traj.times[k], traj.states[k], U_traj[k])
        k_d[k] = -inv_d * (2.0 * spec.r_d * U_traj[k] + dx * (F_U.T @ values.V_X[k]))
        K_d[k] = -inv_d * dx * dx * (F_U.T @ values.V_XX[k])
        if has_b:
            B_b = model.b_act
            k_b[k] = -inv_b * (2.0 * spec.r_b * U_b_traj[k] + dx * (B_b.T @ values.V_X[k]))
            K_b[k] = -inv_b * dx * dx * (B_b.T @ values.V_XX[k])
    return GainTrajectory(k_d=k_d, K_d=K_d, k_b=k_b, K_b=K_b)


def variation_rollout(gains: GainTrajectory, traj: StateTrajectory, U_traj: np.ndarray,
                      model: PdeModel, grid: SpatialGrid, dt: float) -> VariationTrajectory:
    """Roll the linearized dynamics forward from a zero deviation, evaluating the
    feedback law on the fly."""
    N = gains.n_steps
    has_b = gains.k_b is not None
    delta_X = np.zeros((N + 1, grid.n_nodes))
    delta_U = np.empty((N, model.n_act))
    delta_U_b = np.empty((N, gains.k_b.shape[1])) if has_b else None
    for k in range(N):
        F_X, F_U = model.jacobians(traj.times[k], traj.states[k], U_traj[k])
        delta_U[k] = gains.k_d[k] + gains.K_d[k] @ delta_X[k]
        rate = F_X @ delta_X[k] + F_U @ delta_U[k]
        if has_b:
            delta_U_b[k] = gains.k_b[k] + gains.K_b[k] @ delta_X[k]
            rate = rate + model.b_act @ delta_U_b[k]
        delta_X[k + 1] = delta_X[k] + dt * rate
        if not np.all(np.abs(delta_X[k + 1]) < DIVERGENCE_LIMIT):
            raise DivergenceError(
                f"variation rollout diverged at step {k + 1}; "
                "the linearized closed loop is unstable at this dt")
    return VariationTrajectory(delta_X=delta_X, delta_U=delta_U, delta_U_b=delta_U_b)


def apply_update(U_traj: np.ndarray, delta_U: np.ndarray, gamma: float) -> np.ndarray:
    """Scaled control update ``U + gamma * delta_U``."""
    if U_traj.shape != delta_U.shape:
        raise ValueError(f"trajectory shapes differ: {U_traj.shape} vs {delta_U.shape}")
    return U_traj + gamma * delta_U
