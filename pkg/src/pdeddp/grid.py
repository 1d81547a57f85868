"""Uniform 1D interior-node grid, discrete inner products, and difference operators.

Conventions used throughout the package:

* A *field* is a plain ``numpy`` array of length ``n_nodes`` holding samples on the
  interior nodes ``x_j = j * dx``, ``j = 1..n_nodes``.  Dirichlet boundary values are
  not part of the state; they enter difference operators through affine offset fields.
* A *kernel* is an ``(n_nodes, n_nodes)`` array of samples ``W(x_i, x_j)``.  It acts on
  a field by the dx-weighted contraction :func:`contract_kernel`, the discrete analogue
  of integrating the kernel against a function.  With this convention the discrete
  delta kernel is ``identity / dx``.
* Difference operators (:func:`second_difference`, :func:`first_difference`) are plain
  matrices applied by ordinary matrix-vector products, no quadrature weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary descriptor: Dirichlet with end values, or homogeneous Neumann."""

    kind: str = DIRICHLET
    left: float = 0.0
    right: float = 0.0

    def __post_init__(self):
        if self.kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary condition kind: {self.kind!r}")


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid of interior nodes on (0, length).

    ``dx = length / (n_nodes + 1)`` so that the two boundary points sit one spacing
    outside the first and last interior node (Dirichlet layout).
    """

    n_nodes: int
    length: float
    dx: float
    bc: BoundaryCondition

    def nodes(self) -> np.ndarray:
        """Coordinates of the interior nodes."""
        return self.dx * np.arange(1, self.n_nodes + 1)


def make_grid(n_nodes: int, length: float, bc: BoundaryCondition | None = None) -> SpatialGrid:
    """Build a uniform interior-node grid.

    Args:
        n_nodes: number of interior nodes, at least 3.
        length: domain length, positive.
        bc: boundary condition; defaults to homogeneous Dirichlet.

    Returns:
        A :class:`SpatialGrid` with ``dx = length / (n_nodes + 1)``.
    """
    if n_nodes < 3:
        raise ValueError(f"n_nodes must be >= 3, got {n_nodes}")
    if length <= 0:
        raise ValueError(f"length must be positive, got {length}")
    if bc is None:
        bc = BoundaryCondition()
    return SpatialGrid(n_nodes=int(n_nodes), length=float(length),
                       dx=float(length) / (n_nodes + 1), bc=bc)


def inner_domain(f: np.ndarray, g: np.ndarray, grid: SpatialGrid) -> float:
    """Discrete L2 inner product over the domain: ``sum_j f_j g_j dx``."""
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape != (grid.n_nodes,) or g.shape != (grid.n_nodes,):
        raise ValueError(
            f"field length mismatch: {f.shape} vs {g.shape} on {grid.n_nodes} nodes")
    return float(np.dot(f, g) * grid.dx)


def contract_kernel(W: np.ndarray, f: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Apply a two-point kernel to a field: ``(W f)_i = sum_j W_ij f_j dx``."""
    W = np.asarray(W)
    f = np.asarray(f)
    if W.shape != (grid.n_nodes, grid.n_nodes) or f.shape != (grid.n_nodes,):
        raise ValueError(
            f"dimension mismatch: kernel {W.shape}, field {f.shape} on {grid.n_nodes} nodes")
    return (W @ f) * grid.dx


def second_difference(grid: SpatialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Second-difference operator with the grid's boundary condition folded in.

    Returns:
        ``(op, offset)``: ``op`` is the (n, n) stencil matrix with rows
        ``(1, -2, 1) / dx^2`` and ``offset`` the constant field carrying the
        contribution of nonhomogeneous Dirichlet values, so that the discrete
        second derivative of a field ``f`` is ``op @ f + offset``.
    """
    n = grid.n_nodes
    inv2 = 1.0 / grid.dx**2
    op = np.zeros((n, n))
    idx = np.arange(n)
    op[idx, idx] = -2.0 * inv2
    op[idx[:-1], idx[:-1] + 1] = inv2
    op[idx[1:], idx[1:] - 1] = inv2
    offset = np.zeros(n)
    if grid.bc.kind == DIRICHLET:
        offset[0] = grid.bc.left * inv2
        offset[-1] = grid.bc.right * inv2
    else:
        # zero-flux mirror: ghost node equals the adjacent interior node
        op[0, 0] = -inv2
        op[-1, -1] = -inv2
    return op, offset


def first_difference(grid: SpatialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Central first-difference operator, same return convention as
    :func:`second_difference`."""
    n = grid.n_nodes
    inv = 1.0 / (2.0 * grid.dx)
    op = np.zeros((n, n))
    idx = np.arange(n)
    op[idx[:-1], idx[:-1] + 1] = inv
    op[idx[1:], idx[1:] - 1] = -inv
    offset = np.zeros(n)
    if grid.bc.kind == DIRICHLET:
        offset[0] = -grid.bc.left * inv
        offset[-1] = grid.bc.right * inv
    else:
        op[0, 1] = inv
        op[0, 0] = -inv
        op[-1, -1] = inv
        op[-1, -2] = -inv
    return op, offset


def check_symmetric(W: np.ndarray, tol: float = 1e-10) -> None:
    """Raise if a kernel is not symmetric to within ``tol`` (max-norm)."""
    dev = float(np.max(np.abs(W - W.T))) if W.size else 0.0
    if dev > tol:
        raise ValueError(f"kernel not symmetric: max |W - W^T| = {dev:.3e} > {tol:.1e}")
