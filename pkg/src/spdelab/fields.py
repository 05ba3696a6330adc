"""Scalar fields on Dirichlet grids: norms, discrete gradients, quadratures.

Conventions used throughout the package:

* Fields live on interior nodes; boundary values are implicitly zero.
* The L2 norm is the trapezoid rule, which for Dirichlet data reduces to
  ``sqrt(cell_volume * sum(v**2))``.
* The H1 seminorm squares edge (midpoint) differences, including the two
  edges touching the boundary. This is the quadrature under which discrete
  summation by parts against the flux-form elliptic operator is exact.
* ``dirichlet_gradient`` pads with the known boundary zeros and uses centered
  differences everywhere; ``sample_gradient`` assumes nothing about the
  boundary and falls back to second-order one-sided differences at the first
  and last interior node (for data such as g that need not vanish on the
  boundary).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .grids import SpatialGrid


@dataclass(frozen=True)
class ScalarField:
    """Nodal values of one time slice on the interior of a grid."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise PreconditionError(
                f"value shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("field values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: SpatialGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: SpatialGrid, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(*grid.meshgrid()), dtype=float))

    def l2(self) -> float:
        return l2_norm(self)

    def h1_semi(self) -> float:
        return h1_seminorm(self)

    def h1(self) -> float:
        return float(np.sqrt(self.l2() ** 2 + self.h1_semi() ** 2))


def l2_norm(field: ScalarField) -> float:
    """Trapezoidal L2 norm (boundary contributions vanish under Dirichlet)."""
    return float(np.sqrt(sq_l2(field.values, field.grid)))


def h1_seminorm(field: ScalarField) -> float:
    """Midpoint-quadrature norm of the edge-difference gradient."""
    return float(np.sqrt(sq_h1(field.values, field.grid)))


def sq_l2(values: np.ndarray, grid: SpatialGrid) -> np.ndarray | float:
    """Squared L2 norm; spatial axes lead, extra trailing axes are batched."""
    axes = tuple(range(grid.dimension))
    return grid.cell_volume * np.sum(np.square(values), axis=axes)


def sq_h1(values: np.ndarray, grid: SpatialGrid) -> np.ndarray | float:
    """Squared H1 seminorm from edge differences (Dirichlet-padded)."""
    total = 0.0
    for axis in range(grid.dimension):
        d = edge_differences(values, grid, axis)
        total = total + grid.cell_volume * np.sum(np.square(d), axis=tuple(range(grid.dimension)))
    return total


def edge_differences(values: np.ndarray, grid: SpatialGrid, axis: int) -> np.ndarray:
    """Difference quotients (v[i+1]-v[i])/h on the n+1 edges along ``axis``.

    Boundary values are the Dirichlet zeros, so the first and last edges are
    the one-sided quotients v[0]/h and -v[-1]/h.
    """
    h = grid.spacings[axis]
    padded = _pad_zero(values, grid, axis)
    return np.diff(padded, axis=axis) / h


def dirichlet_gradient(values: np.ndarray, grid: SpatialGrid) -> tuple[np.ndarray, ...]:
    """Centered-difference gradient at interior nodes using boundary zeros."""
    out = []
    for axis in range(grid.dimension):
        h = grid.spacings[axis]
        padded = _pad_zero(values, grid, axis)
        n = grid.interior_points[axis]
        upper = _take(padded, axis, 2, n + 2)
        lower = _take(padded, axis, 0, n)
        out.append((upper - lower) / (2.0 * h))
    return tuple(out)


def sample_gradient(values: np.ndarray, grid: SpatialGrid, axis: int) -> np.ndarray:
    """Gradient of a sampled field with no boundary information.

    Centered differences where both neighbours exist; second-order one-sided
    stencils at the first and last interior node.
    """
    n = grid.interior_points[axis]
    h = grid.spacings[axis]
    if n < 3:
        raise PreconditionError("sample_gradient needs at least 3 interior nodes")
    out = np.empty_like(np.asarray(values, dtype=float))
    centered = (_take(values, axis, 2, n) - _take(values, axis, 0, n - 2)) / (2.0 * h)
    _assign(out, axis, 1, n - 1, centered)
    first = (
        -3.0 * _take(values, axis, 0, 1)
        + 4.0 * _take(values, axis, 1, 2)
        - _take(values, axis, 2, 3)
    ) / (2.0 * h)
    _assign(out, axis, 0, 1, first)
    last = (
        3.0 * _take(values, axis, n - 1, n)
        - 4.0 * _take(values, axis, n - 2, n - 1)
        + _take(values, axis, n - 3, n - 2)
    ) / (2.0 * h)
    _assign(out, axis, n - 1, n, last)
    return out


def inner(u: np.ndarray, v: np.ndarray, grid: SpatialGrid) -> np.ndarray | float:
    """Trapezoidal L2 inner product over the spatial axes."""
    axes = tuple(range(grid.dimension))
    return grid.cell_volume * np.sum(u * v, axis=axes)


def trapezoid_weights(count: int, dt: float) -> np.ndarray:
    """Composite trapezoid weights for ``count`` nodes at spacing ``dt``."""
    if count < 1:
        raise PreconditionError("need at least one node")
    w = np.full(count, dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _pad_zero(values: np.ndarray, grid: SpatialGrid, axis: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    pad = [(0, 0)] * values.ndim
    pad[axis] = (1, 1)
    return np.pad(values, pad)


def _take(values: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
    index = [slice(None)] * np.asarray(values).ndim
    index[axis] = slice(start, stop)
    return np.asarray(values)[tuple(index)]


def _assign(target: np.ndarray, axis: int, start: int, stop: int, payload) -> None:
    index = [slice(None)] * target.ndim
    index[axis] = slice(start, stop)
    target[tuple(index)] = payload
