"""PDE dynamics: right-hand sides, analytic Jacobians, and forward rollout.

Models expose ``rhs(t, X, U)`` returning a field and ``jacobians(t, X, U)``
returning ``(F_X, F_U)`` where ``F_X`` is the plain ``d rhs / d X`` matrix and
``F_U = d rhs / d U`` maps actuator space into fields.  An optional boundary
actuation matrix ``b_act`` adds a second control channel ``rhs += b_act @ U_b``
(used by the linear boundary-actuated test problems; the shipped heat and
Burgers experiments are distributed-control only).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .grid import (
    BoundaryCondition,
    DIRICHLET,
    SpatialGrid,
    first_difference,
    second_difference,
)

DIVERGENCE_LIMIT = 1e8


@dataclass(frozen=True)
class HeatParams:
    """Diffusion-only PDE parameters."""

    epsilon: float = 0.1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class BurgersParams:
    """Viscous advection parameters; ``bc_value`` is the Dirichlet value at both ends."""

    epsilon: float = 0.05
    bc_value: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class StateTrajectory:
    """Time-indexed states: ``times`` has ``n_steps + 1`` entries, ``states`` is
    ``(n_steps + 1, n_nodes)``."""

    times: np.ndarray
    states: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def gaussian_actuation(grid: SpatialGrid, n_act: int) -> np.ndarray:
    """Actuation map of ``n_act`` Gaussian bumps with centers equispaced in the
    open domain and width ``length / (4 n_act)``."""
    x = grid.nodes()
    centers = grid.length * np.arange(1, n_act + 1) / (n_act + 1)
    sigma = grid.length / (4.0 * n_act)
    return np.exp(-((x[:, None] - centers[None, :]) ** 2) / (2.0 * sigma**2))


class PdeModel:
    """Base for control-affine PDE models on a :class:`SpatialGrid`.

    Attributes:
        grid: spatial grid the model is discretized on.
        act: (n_nodes, n_act) distributed actuation matrix.
        b_act: optional (n_nodes, n_bact) boundary actuation matrix.
        linear: True when ``F_X`` does not depend on the state (lets the
            backward pass reuse sparse factorizations).
    """

    grid: SpatialGrid
    act: np.ndarray
    b_act: np.ndarray | None = None
    linear: bool = False

    @property
    def n_act(self) -> int:
        return self.act.shape[1]

    def drift(self, t: float, X: np.ndarray) -> np.ndarray:
        """Uncontrolled part of the right-hand side."""
        raise NotImplementedError

    def drift_jacobian(self, t: float, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rhs(self, t: float, X: np.ndarray, U: np.ndarray,
            U_b: np.ndarray | None = None) -> np.ndarray:
        X = np.asarray(X)
        U = np.asarray(U)
        if X.shape != (self.grid.n_nodes,):
            raise ValueError(f"state has shape {X.shape}, expected ({self.grid.n_nodes},)")
        if U.shape != (self.n_act,):
            raise ValueError(f"control has shape {U.shape}, expected ({self.n_act},)")
        out = self.drift(t, X) + self.act @ U
        if U_b is not None:
            if self.b_act is None:
                raise ValueError("model has no boundary actuation channel")
            out = out + self.b_act @ np.asarray(U_b)
        return out

    def jacobians(self, t: float, X: np.ndarray, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Analytic ``(F_X, F_U)`` of the right-hand side at ``(t, X, U)``."""
        return self.drift_jacobian(t, np.asarray(X)), self.act


class HeatModel(PdeModel):
    """``dX/dt = epsilon * Laplacian(X) + act @ U`` with the grid's Dirichlet data.

    Full-field actuation (identity map) unless an explicit ``act`` is given.
    """

    linear = True

    def __init__(self, params: HeatParams, grid: SpatialGrid, act: np.ndarray | None = None):
        self.params = params
        self.grid = grid
        self.act = np.eye(grid.n_nodes) if act is None else np.asarray(act, dtype=float)
        d2, off = second_difference(grid)
        self._A = params.epsilon * d2
        self._off = params.epsilon * off

    def drift(self, t, X):
        return self._A @ X + self._off

    def drift_jacobian(self, t, X):
        return self._A


class BurgersModel(PdeModel):
    """Viscous Burgers flow ``dX/dt = -X dX/dx + epsilon d2X/dx2 + act @ U`` with
    Dirichlet value ``bc_value`` at both ends."""

    linear = False

    def __init__(self, params: BurgersParams, grid: SpatialGrid, n_act: int = 5,
                 act: np.ndarray | None = None):
        if grid.bc.kind != DIRICHLET:
            raise ValueError("Burgers model requires Dirichlet boundary data")
        bc = BoundaryCondition(DIRICHLET, params.bc_value, params.bc_value)
        if (grid.bc.left, grid.bc.right) != (params.bc_value, params.bc_value):
            grid = SpatialGrid(grid.n_nodes, grid.length, grid.dx, bc)
        self.params = params
        self.grid = grid
        self.act = gaussian_actuation(grid, n_act) if act is None else np.asarray(act, dtype=float)
        d1, off1 = first_difference(grid)
        d2, off2 = second_difference(grid)
        self._D1 = d1
        self._off1 = off1
        self._A2 = params.epsilon * d2
        self._off2 = params.epsilon * off2

    def drift(self, t, X):
        dX = self._D1 @ X + self._off1
        return -X * dX + self._A2 @ X + self._off2

    def drift_jacobian(self, t, X):
        dX = self._D1 @ X + self._off1
        return self._A2 - np.diag(dX) - X[:, None] * self._D1


class LinearModel(PdeModel):
    """Generic linear model ``dX/dt = A X + act U (+ b_act U_b) + drift``; the
    vehicle for LQR cross-checks, including the boundary-actuated variant."""

    linear = True

    def __init__(self, A: np.ndarray, act: np.ndarray, grid: SpatialGrid,
                 b_act: np.ndarray | None = None, drift: np.ndarray | None = None):
        self.grid = grid
        self._A = np.asarray(A, dtype=float)
        self.act = np.asarray(act, dtype=float)
        self.b_act = None if b_act is None else np.asarray(b_act, dtype=float)
        self._drift = np.zeros(grid.n_nodes) if drift is None else np.asarray(drift, dtype=float)

    def drift(self, t, X):
        return self._A @ X + self._drift

    def drift_jacobian(self, t, X):
        return self._A


def _control_midpoint(U_traj: np.ndarray, k: int) -> np.ndarray:
    j = min(k + 1, len(U_traj) - 1)
    return 0.5 * (U_traj[k] + U_traj[j])


def rollout(model: PdeModel, X0: np.ndarray, U_traj: np.ndarray, dt: float,
            n_steps: int, method: str = "euler",
            U_b_traj: np.ndarray | None = None, t0: float = 0.0) -> StateTrajectory:
    """Integrate the model forward from ``X0`` under a control trajectory.

    Args:
        U_traj: (n_steps, n_act) controls, piecewise over time intervals.
        method: "euler" or "rk2"; RK2 samples controls at interval midpoints
            by linear interpolation.

    Raises:
        DivergenceError: when any state magnitude exceeds ``1e8``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    U_traj = np.asarray(U_traj, dtype=float)
    if U_traj.shape != (n_steps, model.n_act):
        raise ValueError(f"control trajectory has shape {U_traj.shape}, "
                         f"expected ({n_steps}, {model.n_act})")
    times = t0 + dt * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, model.grid.n_nodes))
    states[0] = X0
    for k in range(n_steps):
        t = times[k]
        Ub = None if U_b_traj is None else U_b_traj[k]
        if method == "euler":
            states[k + 1] = states[k] + dt * model.rhs(t, states[k], U_traj[k], Ub)
        elif method == "rk2":
            half = states[k] + 0.5 * dt * model.rhs(t, states[k], U_traj[k], Ub)
            Um = _control_midpoint(U_traj, k)
            Ubm = None if U_b_traj is None else _control_midpoint(U_b_traj, k)
            states[k + 1] = states[k] + dt * model.rhs(t + 0.5 * dt, half, Um, Ubm)
        else:
            raise ValueError(f"unknown rollout method: {method!r}")
        if not np.all(np.abs(states[k + 1]) < DIVERGENCE_LIMIT):
            raise DivergenceError(
                f"rollout diverged at step {k + 1}: max |X| >= {DIVERGENCE_LIMIT:.0e}; "
                "reduce dt or check the model scaling")
    return StateTrajectory(times=times, states=states)
