"""Pure-quadratic reaching cost over a desired subregion, and its exact partials.

The state penalty is a dx-weighted quadratic over the masked subregion; control
penalties are plain actuator-space quadratics (no dx weight), so a finite set of
actuators and full-field actuation share one formula.  The cost carries no 1/2
prefactor; first partials carry the factor 2.  State-control cross terms are
identically zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .grid import SpatialGrid, inner_domain
from .models import StateTrajectory


@dataclass(frozen=True)
class CostSpec:
    """Weights and target data for the reaching cost.

    Attributes:
        q: running state weight (per unit time), nonnegative.
        q_f: terminal state weight, nonnegative.
        r_d: distributed control weight (actuator space), positive.
        desired: target field on the full grid; only masked nodes are penalized.
        mask: 0/1 field selecting the desired subregion.
        r_b: boundary control weight, used only when a model has a boundary channel.
    """

    q: float
    q_f: float
    r_d: float
    desired: np.ndarray
    mask: np.ndarray
    r_b: float = 1.0

    def __post_init__(self):
        if self.r_d <= 0 or self.r_b <= 0:
            raise ValueError("control weights must be positive")
        if self.q < 0 or self.q_f < 0:
            raise ValueError("state weights must be nonnegative")
        mask = np.asarray(self.mask)
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "desired", np.asarray(self.desired, dtype=float))
        object.__setattr__(self, "mask", mask.astype(float))


@dataclass
class CostPartials:
    """Exact partial derivatives of the running cost at one point.

    ``L_XX`` follows the kernel-sample convention: contracting it with a field f
    yields ``2 q mask * f``.  The state-control cross block is identically zero.
    """

    L: float
    L_X: np.ndarray
    L_XX: np.ndarray
    L_U: np.ndarray
    L_UU: np.ndarray
    L_UU_inv: np.ndarray
    L_UX: np.ndarray = dataclass_field(default=None)  # zero by construction

    def __post_init__(self):
        if self.L_UX is None:
            self.L_UX = np.zeros((self.L_U.shape[0], self.L_X.shape[0]))


def region_fields(grid: SpatialGrid, regions: list[tuple[float, float, float]]):
    """Build (desired, mask) fields from ``(lo, hi, target)`` intervals in domain
    coordinates.  Nodes outside every interval are unpenalized (mask 0)."""
    x = grid.nodes()
    desired = np.zeros(grid.n_nodes)
    mask = np.zeros(grid.n_nodes)
    for lo, hi, target in regions:
        inside = (x >= lo) & (x <= hi)
        desired[inside] = target
        mask[inside] = 1.0
    return desired, mask


def reaching_regions(grid: SpatialGrid, outer_target: float, central_target: float,
                     outer: list[tuple[float, float]] | None = None,
                     central: list[tuple[float, float]] | None = None):
    """Default reaching-task geometry: outer bands [0, 0.25a] and [0.75a, a] at
    ``outer_target``, central band [0.4a, 0.6a] at ``central_target``."""
    a = grid.length
    if outer is None:
        outer = [(0.0, 0.25 * a), (0.75 * a, a)]
    if central is None:
        central = [(0.4 * a, 0.6 * a)]
    regions = [(lo, hi, outer_target) for lo, hi in outer]
    regions += [(lo, hi, central_target) for lo, hi in central]
    return region_fields(grid, regions)


def running_cost(spec: CostSpec, X: np.ndarray, U: np.ndarray, grid: SpatialGrid,
                 U_b: np.ndarray | None = None) -> float:
    """Masked state quadratic plus actuator-space control quadratic."""
    dev = spec.mask * (np.asarray(X) - spec.desired)
    value = spec.q * inner_domain(dev, dev, grid) + spec.r_d * float(np.dot(U, U))
    if U_b is not None:
        value += spec.r_b * float(np.dot(U_b, U_b))
    return value


def cost_partials(spec: CostSpec, X: np.ndarray, U: np.ndarray,
                  grid: SpatialGrid) -> CostPartials:
    """Exact partials of :func:`running_cost` in field/kernel convention."""
    U = np.asarray(U, dtype=float)
    dev = spec.mask * (np.asarray(X) - spec.desired)
    n_act = U.shape[0]
    return CostPartials(
        L=spec.q * inner_domain(dev, dev, grid) + spec.r_d * float(np.dot(U, U)),
        L_X=2.0 * spec.q * dev,
        L_XX=(2.0 * spec.q / grid.dx) * np.diag(spec.mask),
        L_U=2.0 * spec.r_d * U,
        L_UU=2.0 * spec.r_d * np.eye(n_act),
        L_UU_inv=np.eye(n_act) / (2.0 * spec.r_d),
    )


def terminal_cost_partials(spec: CostSpec, X_f: np.ndarray, grid: SpatialGrid):
    """Terminal cost and partials: ``(phi, phi_X, phi_XX)`` with weight ``q_f``."""
    dev = spec.mask * (np.asarray(X_f) - spec.desired)
    phi = spec.q_f * inner_domain(dev, dev, grid)
    phi_X = 2.0 * spec.q_f * dev
    phi_XX = (2.0 * spec.q_f / grid.dx) * np.diag(spec.mask)
    return phi, phi_X, phi_XX


def terminal_cost(spec: CostSpec, X_f: np.ndarray, grid: SpatialGrid) -> float:
    dev = spec.mask * (np.asarray(X_f) - spec.desired)
    return spec.q_f * inner_domain(dev, dev, grid)


def total_cost(spec: CostSpec, traj: StateTrajectory, U_traj: np.ndarray,
               grid: SpatialGrid, dt: float,
               U_b_traj: np.ndarray | None = None) -> float:
    """Terminal cost plus left-Riemann sum of the running cost."""
    acc = terminal_cost(spec, traj.states[-1], grid)
    for k in range(traj.n_steps):
        Ub = None if U_b_traj is None else U_b_traj[k]
        acc += dt * running_cost(spec, traj.states[k], U_traj[k], grid, Ub)
    return acc


def cost_components(spec: CostSpec, traj: StateTrajectory, U_traj: np.ndarray,
                    grid: SpatialGrid, dt: float,
                    U_b_traj: np.ndarray | None = None):
    """Split the total cost into (state part incl. terminal, control part)."""
    state = terminal_cost(spec, traj.states[-1], grid)
    control = 0.0
    for k in range(traj.n_steps):
        dev = spec.mask * (traj.states[k] - spec.desired)
        state += dt * spec.q * inner_domain(dev, dev, grid)
        control += dt * spec.r_d * float(np.dot(U_traj[k], U_traj[k]))
        if U_b_traj is not None:
            control += dt * spec.r_b * float(np.dot(U_b_traj[k], U_b_traj[k]))
    return state, control
