"""Flux-form finite-difference assembly of the divergence-form operator.

The diagonal part is assembled as -E^T diag(b_mid) E with E the edge
difference matrix and b sampled at edge midpoints, so the discrete bilinear
form ``b_pairing`` below satisfies summation by parts against the assembled
matrix exactly (no boundary remainder under Dirichlet data). The optional
off-diagonal 2D entry uses centered node differences, which keeps the matrix
symmetric because the centered difference matrix is skew-symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .coefficients import CoefficientSet
from .errors import PreconditionError
from .fields import edge_differences
from .grids import SpatialGrid


def edge_midpoints(grid: SpatialGrid, axis: int) -> np.ndarray:
    """Coordinates of the n+1 edge midpoints along ``axis``."""
    h = grid.spacings[axis]
    n = grid.interior_points[axis]
    return (np.arange(n + 1) + 0.5) * h


def _edge_matrix(n: int, h: float) -> sp.csr_matrix:
    """(n+1) x n difference matrix with implicit Dirichlet end values."""
    rows, cols, vals = [], [], []
    for e in range(n + 1):
        if e < n:
            rows.append(e)
            cols.append(e)
            vals.append(1.0 / h)
        if e >= 1:
            rows.append(e)
            cols.append(e - 1)
            vals.append(-1.0 / h)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _centered_matrix(n: int, h: float) -> sp.csr_matrix:
    """n x n centered difference matrix with zero-padded Dirichlet ends."""
    off = np.full(n - 1, 1.0 / (2.0 * h))
    return sp.diags([-off, off], offsets=[-1, 1], format="csr")


def _axis_edge_coords(grid: SpatialGrid, axis: int) -> list[np.ndarray]:
    """Meshed coordinates over (edges along ``axis``) x (interior elsewhere)."""
    axes = []
    for a in range(grid.dimension):
        axes.append(edge_midpoints(grid, a) if a == axis else grid.axis_nodes(a))
    if grid.dimension == 1:
        return [axes[0]]
    return list(np.meshgrid(*axes, indexing="ij"))


def edge_diffusion_values(
    grid: SpatialGrid, coeffs: CoefficientSet, t: float, axis: int
) -> np.ndarray:
    """Diagonal diffusion entry sampled at the edge midpoints of ``axis``."""
    coords = _axis_edge_coords(grid, axis)
    return coeffs.diffusion_at(axis, t, coords)


@dataclass(frozen=True)
class EllipticOperator:
    """Assembled operator y -> sum_ij (b^ij y_xi)_xj at one fixed time."""

    grid: SpatialGrid
    t: float
    matrix: sp.csr_matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Matrix action; trailing axes beyond the grid shape are batched."""
        values = np.asarray(values, dtype=float)
        spatial = self.grid.shape
        extra = values.shape[self.grid.dimension:]
        flat = values.reshape(self.grid.size, -1)
        out = self.matrix @ flat
        return out.reshape(spatial + extra)

    def symmetry_defect(self) -> float:
        d = self.matrix - self.matrix.T
        return float(np.max(np.abs(d.toarray()))) if d.nnz else 0.0

    def gershgorin_upper_bound(self) -> float:
        """Upper bound on eigenvalues; <= 0 certifies negative semidefiniteness."""
        dense_abs = np.abs(self.matrix.toarray())
        diag = self.matrix.diagonal()
        radii = dense_abs.sum(axis=1) - np.abs(diag)
        return float(np.max(diag + radii))


def assemble_elliptic(grid: SpatialGrid, coeffs: CoefficientSet, t: float) -> EllipticOperator:
    if coeffs.dimension != grid.dimension:
        raise PreconditionError("coefficient dimension does not match grid")
    parts = []
    if grid.dimension == 1:
        e = _edge_matrix(grid.interior_points[0], grid.spacings[0])
        b = edge_diffusion_values(grid, coeffs, t, 0)
        parts.append(-(e.T @ sp.diags(b) @ e))
    else:
        n1, n2 = grid.interior_points
        e1 = sp.kron(_edge_matrix(n1, grid.spacings[0]), sp.identity(n2), format="csr")
        e2 = sp.kron(sp.identity(n1), _edge_matrix(n2, grid.spacings[1]), format="csr")
        b1 = edge_diffusion_values(grid, coeffs, t, 0).reshape(-1)
        b2 = edge_diffusion_values(grid, coeffs, t, 1).reshape(-1)
        parts.append(-(e1.T @ sp.diags(b1) @ e1))
        parts.append(-(e2.T @ sp.diags(b2) @ e2))
        if coeffs.diffusion_cross is not None:
            d1 = sp.kron(_centered_matrix(n1, grid.spacings[0]), sp.identity(n2), format="csr")
            d2 = sp.kron(sp.identity(n1), _centered_matrix(n2, grid.spacings[1]), format="csr")
            b12 = sp.diags(coeffs.cross_at(t, grid.meshgrid()).reshape(-1))
            parts.append(d2 @ b12 @ d1 + d1 @ b12 @ d2)
    matrix = sp.csr_matrix(sum(parts))
    return EllipticOperator(grid=grid, t=float(t), matrix=matrix)


def b_pairing(
    u: np.ndarray,
    v: np.ndarray,
    grid: SpatialGrid,
    coeffs: CoefficientSet,
    t: float,
) -> np.ndarray | float:
    """Bilinear form sum_ij int b^ij u_xi v_xj with the assembly's sampling.

    Satisfies ``b_pairing(u, v) == -inner(assemble_elliptic(...).apply(u), v)``
    exactly (round-off) for interior-node arrays. Trailing axes are batched.
    """
    extra = np.asarray(u).ndim - grid.dimension
    total = 0.0
    for axis in range(grid.dimension):
        du = edge_differences(u, grid, axis)
        dv = edge_differences(v, grid, axis)
        b = edge_diffusion_values(grid, coeffs, t, axis)
        b = b.reshape(b.shape + (1,) * extra)
        total = total + grid.cell_volume * np.sum(
            b * du * dv, axis=tuple(range(grid.dimension))
        )
    if coeffs.diffusion_cross is not None:
        from .fields import dirichlet_gradient

        b12 = coeffs.cross_at(t, grid.meshgrid())
        b12 = b12.reshape(b12.shape + (1,) * extra)
        gu = dirichlet_gradient(u, grid)
        gv = dirichlet_gradient(v, grid)
        mixed = b12 * (gu[0] * gv[1] + gu[1] * gv[0])
        total = total + grid.cell_volume * np.sum(mixed, axis=tuple(range(grid.dimension)))
    return total


def b_pairing_time_rate(
    u: np.ndarray,
    v: np.ndarray,
    grid: SpatialGrid,
    coeffs: CoefficientSet,
    t: float,
    dt: float,
) -> np.ndarray | float:
    """Same pairing against the time derivative of the diffusion entries.

    Uses the analytic derivative when the coefficient set provides one and a
    forward difference over one step otherwise; identically zero for
    time-constant diffusion.
    """
    if not coeffs.diffusion_time_dependent:
        u = np.asarray(u)
        extra_shape = u.shape[grid.dimension:]
        return np.zeros(extra_shape) if extra_shape else 0.0
    extra = np.asarray(u).ndim - grid.dimension
    total = 0.0
    for axis in range(grid.dimension):
        du = edge_differences(u, grid, axis)
        dv = edge_differences(v, grid, axis)
        coords = _axis_edge_coords(grid, axis)
        if coeffs.diffusion_dt is not None:
            bt = np.broadcast_to(
                np.asarray(coeffs.diffusion_dt[axis](t, *coords), dtype=float),
                du.shape[: grid.dimension],
            )
        else:
            bt = (
                coeffs.diffusion_at(axis, t + dt, coords)
                - coeffs.diffusion_at(axis, t, coords)
            ) / dt
        bt = bt.reshape(bt.shape + (1,) * extra)
        total = total + grid.cell_volume * np.sum(
            bt * du * dv, axis=tuple(range(grid.dimension))
        )
    return total
