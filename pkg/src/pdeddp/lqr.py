"""Kernel Riccati reference solver for linear problems.

Solves the backward Riccati equation in the same kernel/actuator conventions as
the rest of the package::

    -dP/dt = Q + A^T P + P A - dx^2 P B rbar B^T P   (per actuation channel)

with feedback ``U = -rbar dx^2 B^T P X``.  The equation is convention-agnostic
once the weight kernels are fixed; the constructors make the convention explicit:
:meth:`LqrProblem.from_reaching_cost` doubles the scalar weights (cost written
without the 1/2 prefactor, matching :mod:`pdeddp.cost`), while the plain
constructor takes kernels as-is (the 1/2-prefactor form).  Used standalone and
as the verification oracle for the backward value pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .backward import EULER, RK2, SEMI_IMPLICIT, Scheme, ValueTrajectory
from .cost import CostSpec
from .errors import DivergenceError
from .grid import SpatialGrid
from .models import StateTrajectory

P_DIVERGENCE_LIMIT = 1e12


@dataclass
class LqrProblem:
    """Linear-quadratic data: drift operator, actuation, and weight kernels.

    ``q_kernel`` and ``terminal_kernel`` follow the kernel-sample convention;
    ``r_d`` (and ``r_b``) are plain actuator-space weight matrices.
    """

    A: np.ndarray
    B_d: np.ndarray
    q_kernel: np.ndarray
    r_d: np.ndarray
    terminal_kernel: np.ndarray
    grid: SpatialGrid
    dt: float
    n_steps: int
    B_b: np.ndarray | None = None
    r_b: np.ndarray | None = None

    @classmethod
    def from_reaching_cost(cls, A: np.ndarray, B_d: np.ndarray, spec: CostSpec,
                           grid: SpatialGrid, dt: float, n_steps: int,
                           B_b: np.ndarray | None = None) -> "LqrProblem":
        """Build the problem from no-1/2-prefactor scalar weights (factor 2
        applied here, so P matches the value-pass V_XX on the same problem)."""
        m = B_d.shape[1]
        r_b = None
        if B_b is not None:
            r_b = 2.0 * spec.r_b * np.eye(B_b.shape[1])
        return cls(
            A=np.asarray(A, dtype=float),
            B_d=np.asarray(B_d, dtype=float),
            q_kernel=(2.0 * spec.q / grid.dx) * np.diag(spec.mask),
            r_d=2.0 * spec.r_d * np.eye(m),
            terminal_kernel=(2.0 * spec.q_f / grid.dx) * np.diag(spec.mask),
            grid=grid, dt=float(dt), n_steps=int(n_steps),
            B_b=B_b, r_b=r_b)

    def channels(self):
        out = [(self.B_d, np.linalg.inv(self.r_d))]
        if self.B_b is not None:
            out.append((self.B_b, np.linalg.inv(self.r_b)))
        return out


@dataclass
class RiccatiTrajectory:
    """Time-indexed Riccati kernels P, shape (n_steps + 1, n, n)."""

    P: np.ndarray


def _riccati_rate(prob: LqrProblem, P: np.ndarray) -> np.ndarray:
    dx2 = prob.grid.dx ** 2
    G = prob.q_kernel + prob.A.T @ P + P @ prob.A
    for B, r_inv in prob.channels():
        PB = P @ B
        G = G - dx2 * (PB @ r_inv @ PB.T)
    return G


def lqr_backward(prob: LqrProblem, scheme: Scheme | None = None) -> RiccatiTrajectory:
    """Integrate the Riccati kernel backward from the terminal weight.

    Supports the same scheme menu as the value pass so cross-checks can run
    scheme-matched; each step is symmetrized.
    """
    if scheme is None:
        scheme = Scheme(kind=EULER, mu=0.0)
    N = prob.n_steps
    n = prob.A.shape[0]
    dt = prob.dt
    P = np.empty((N + 1, n, n))
    P[N] = prob.terminal_kernel
    kron_solver = None
    for k in range(N - 1, -1, -1):
        if scheme.kind == EULER:
            new = P[k + 1] + dt * _riccati_rate(prob, P[k + 1])
        elif scheme.kind == RK2:
            half = P[k + 1] + 0.5 * dt * _riccati_rate(prob, P[k + 1])
            new = P[k + 1] + dt * _riccati_rate(prob, half)
        elif scheme.kind == SEMI_IMPLICIT:
            if kron_solver is None:
                At = sp.csc_matrix(prob.A.T)
                eye_n = sp.identity(n, format="csc")
                M = sp.identity(n * n, format="csc") - dt * (
                    sp.kron(At, eye_n, format="csc") + sp.kron(eye_n, At, format="csc"))
                kron_solver = splu(M.tocsc())
            dx2 = prob.grid.dx ** 2
            G = prob.q_kernel
            for B, r_inv in prob.channels():
                PB = P[k + 1] @ B
                G = G - dx2 * (PB @ r_inv @ PB.T)
            rhs = P[k + 1] + dt * G
            new = kron_solver.solve(rhs.ravel()).reshape(n, n)
        else:
            raise ValueError(scheme.kind)
        new = 0.5 * (new + new.T)
        P[k] = new
        if not float(np.max(np.abs(new))) < P_DIVERGENCE_LIMIT:
            raise DivergenceError(f"Riccati integration diverged at step {k}")
    return RiccatiTrajectory(P=P)


def feedback_gain(prob: LqrProblem, P: np.ndarray, boundary: bool = False) -> np.ndarray:
    """Feedback matrix ``-rbar dx^2 B^T P`` for one channel."""
    dx2 = prob.grid.dx ** 2
    if boundary:
        return -dx2 * np.linalg.solve(prob.r_b, prob.B_b.T @ P)
    return -dx2 * np.linalg.solve(prob.r_d, prob.B_d.T @ P)


def lqr_controls(prob: LqrProblem, P_traj: RiccatiTrajectory,
                 X_traj: np.ndarray) -> np.ndarray:
    """Optimal distributed controls ``U_k = -rbar dx^2 B^T P_k X_k`` along given states."""
    X_traj = np.asarray(X_traj)
    N = prob.n_steps
    U = np.empty((N, prob.B_d.shape[1]))
    for k in range(N):
        U[k] = feedback_gain(prob, P_traj.P[k]) @ X_traj[k]
    return U


def lqr_closed_loop(prob: LqrProblem, X0: np.ndarray,
                    P_traj: RiccatiTrajectory | None = None):
    """Roll the closed loop forward under the Riccati feedback (explicit Euler).

    Returns:
        ``(states, U, U_b)``: states (N+1, n), distributed controls (N, m), and
        boundary controls when the problem has a boundary channel.
    """
    if P_traj is None:
        P_traj = lqr_backward(prob)
    N = prob.n_steps
    n = prob.A.shape[0]
    X = np.empty((N + 1, n))
    X[0] = X0
    U = np.empty((N, prob.B_d.shape[1]))
    U_b = np.empty((N, prob.B_b.shape[1])) if prob.B_b is not None else None
    for k in range(N):
        U[k] = feedback_gain(prob, P_traj.P[k]) @ X[k]
        rate = prob.A @ X[k] + prob.B_d @ U[k]
        if U_b is not None:
            U_b[k] = feedback_gain(prob, P_traj.P[k], boundary=True) @ X[k]
            rate = rate + prob.B_b @ U_b[k]
        X[k + 1] = X[k] + prob.dt * rate
    return X, U, U_b


def _rel_dev(candidate: np.ndarray, reference: np.ndarray) -> float:
    scale = float(np.max(np.abs(reference))) + 1e-300
    return float(np.max(np.abs(candidate - reference))) / scale


def check_ddp_equivalence(prob: LqrProblem, values: ValueTrajectory,
                          traj: StateTrajectory, U_traj: np.ndarray,
                          scheme: Scheme | None = None,
                          U_b_traj: np.ndarray | None = None) -> dict:
    """Max relative deviations between a solve's value quantities and the
    Riccati reference on the matched linear problem.

    Reported keys: ``v_xx`` (kernel vs P), ``feedback`` (update feedback law),
    ``control`` (controls vs the Riccati feedback evaluated along the same
    trajectory), ``closed_loop_control`` (vs an independent closed-loop rollout
    from the same initial state), plus boundary analogues when present.
    """
    P_traj = lqr_backward(prob, scheme)
    N = prob.n_steps
    dx2 = prob.grid.dx ** 2
    report = {
        "v_xx": max(_rel_dev(values.V_XX[k], P_traj.P[k]) for k in range(N + 1)),
        "feedback": max(
            _rel_dev(-dx2 * np.linalg.solve(prob.r_d, prob.B_d.T @ values.V_XX[k]),
                     feedback_gain(prob, P_traj.P[k]))
            for k in range(N)),
        "control": _rel_dev(U_traj, lqr_controls(prob, P_traj, traj.states)),
    }
    X_cl, U_cl, U_b_cl = lqr_closed_loop(prob, traj.states[0], P_traj)
    report["closed_loop_control"] = _rel_dev(U_traj, U_cl)
    report["closed_loop_state"] = _rel_dev(traj.states, X_cl)
    if prob.B_b is not None:
        report["boundary_feedback"] = max(
            _rel_dev(-dx2 * np.linalg.solve(prob.r_b, prob.B_b.T @ values.V_XX[k]),
                     feedback_gain(prob, P_traj.P[k], boundary=True))
            for k in range(N))
        if U_b_traj is not None:
            report["boundary_control"] = _rel_dev(U_b_traj, U_b_cl)
    return report
