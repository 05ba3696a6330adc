"""Coefficient bundles for the forward equation and their sanity checks.

Coefficient callables take ``(t, *coords)`` where ``coords`` are broadcastable
coordinate arrays (one per axis) and return an array broadcast against them.
All coefficients are deterministic functions of (t, x); randomness enters the
dynamics only through the driving Brownian path.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EllipticityError, PreconditionError
from .grids import SpatialGrid, TimeGrid

Coefficient = Callable[..., np.ndarray]


def constant(value: float) -> Coefficient:
    def fn(t, *coords):
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords)) if coords else ()
        return np.full(shape, float(value))
    return fn


def _eval(fn: Optional[Coefficient], t: float, coords) -> np.ndarray:
    shape = np.broadcast_shapes(*(np.shape(c) for c in coords)) if coords else ()
    if fn is None:
        return np.zeros(shape)
    return np.broadcast_to(np.asarray(fn(t, *coords), dtype=float), shape).copy()


@dataclass(frozen=True)
class CoefficientSet:
    """Diffusion matrix, lower-order terms, data, and their sup-norm metadata.

    ``diffusion`` holds the diagonal entries (one callable per axis; a single
    callable in 1D); ``diffusion_cross`` is the optional off-diagonal entry of
    the symmetric 2x2 matrix in 2D. ``drift`` pairs with the gradient,
    ``reaction`` multiplies the state, ``forcing`` is the deterministic source,
    ``noise_scale``/``noise_forcing`` scale and shift the Brownian increment.

    Sup-norm metadata feeds the r1 aggregate: ``drift_sup`` bounds |a1| in the
    Euclidean norm, ``reaction_sup`` bounds |a2|, and ``noise_scale_w1inf``
    bounds max(|a3|, |grad a3|).
    """

    diffusion: tuple[Coefficient, ...]
    sigma: float
    diffusion_cross: Optional[Coefficient] = None
    diffusion_time_dependent: bool = False
    diffusion_dt: Optional[tuple[Coefficient, ...]] = None
    drift: Optional[tuple[Coefficient, ...]] = None
    reaction: Optional[Coefficient] = None
    forcing: Optional[Coefficient] = None
    noise_scale: Optional[Coefficient] = None
    noise_forcing: Optional[Coefficient] = None
    drift_sup: float = 0.0
    reaction_sup: float = 0.0
    noise_scale_w1inf: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise PreconditionError("ellipticity constant sigma must be positive")
        if not self.diffusion:
            raise PreconditionError("diffusion needs one diagonal callable per axis")
        if self.drift is not None and len(self.drift) != len(self.diffusion):
            raise PreconditionError("drift needs one component per axis")
        if self.diffusion_cross is not None and len(self.diffusion) != 2:
            raise PreconditionError("off-diagonal diffusion only makes sense in 2D")

    @property
    def dimension(self) -> int:
        return len(self.diffusion)

    def diffusion_at(self, axis: int, t: float, coords) -> np.ndarray:
        return _eval(self.diffusion[axis], t, coords)

    def cross_at(self, t: float, coords) -> Optional[np.ndarray]:
        if self.diffusion_cross is None:
            return None
        return _eval(self.diffusion_cross, t, coords)

    def drift_at(self, axis: int, t: float, coords) -> np.ndarray:
        if self.drift is None:
            return np.zeros(np.broadcast_shapes(*(np.shape(c) for c in coords)))
        return _eval(self.drift[axis], t, coords)

    def reaction_at(self, t: float, coords) -> np.ndarray:
        return _eval(self.reaction, t, coords)

    def forcing_at(self, t: float, coords) -> np.ndarray:
        return _eval(self.forcing, t, coords)

    def noise_scale_at(self, t: float, coords) -> np.ndarray:
        return _eval(self.noise_scale, t, coords)

    def noise_forcing_at(self, t: float, coords) -> np.ndarray:
        return _eval(self.noise_forcing, t, coords)

    def has_noise(self) -> bool:
        return self.noise_scale is not None or self.noise_forcing is not None


def source_free(coeffs: CoefficientSet) -> CoefficientSet:
    """Same dynamics with f and g dropped (the homogeneous-equation setting,
    under which the solve is exactly linear in the initial data)."""
    from dataclasses import replace

    return replace(coeffs, forcing=None, noise_forcing=None)


def compute_r1(coeffs: CoefficientSet) -> float:
    """Aggregate squared sup-norms of the lower-order coefficients, plus one."""
    return (
        coeffs.drift_sup**2
        + coeffs.reaction_sup**2
        + coeffs.noise_scale_w1inf**2
        + 1.0
    )


@dataclass(frozen=True)
class EllipticityReport:
    passed: bool
    margin: float
    worst_time: float
    worst_node: tuple[float, ...]
    worst_direction: tuple[float, ...]

    def raise_if_failed(self) -> None:
        if not self.passed:
            raise EllipticityError(
                f"ellipticity margin {self.margin:.3e} < 0 at t={self.worst_time:.6g}, "
                f"x={self.worst_node}, xi={self.worst_direction}"
            )


def probe_directions(dimension: int) -> tuple[tuple[float, ...], ...]:
    """Axis unit vectors plus normalized diagonals."""
    if dimension == 1:
        return ((1.0,),)
    r = 1.0 / np.sqrt(2.0)
    return ((1.0, 0.0), (0.0, 1.0), (r, r), (r, -r))


def check_ellipticity(
    coeffs: CoefficientSet,
    grid: SpatialGrid,
    timegrid: TimeGrid,
    probes: Sequence[tuple[float, ...]] | None = None,
) -> EllipticityReport:
    """Verify b(t,x) xi.xi >= sigma |xi|^2 on all nodes, times and probes.

    Returns the worst margin; the report's ``raise_if_failed`` names the
    violating (t, x, xi) triple.
    """
    if grid.dimension != coeffs.dimension:
        raise PreconditionError("coefficient dimension does not match grid")
    if probes is None:
        probes = probe_directions(grid.dimension)
    coords = grid.meshgrid(include_boundary=True)
    flat = [c.reshape(-1) for c in coords]
    best = None
    times = timegrid.times if timegrid.steps > 0 else np.array([0.0])
    for t in times:
        diag = [coeffs.diffusion_at(a, float(t), flat) for a in range(grid.dimension)]
        cross = coeffs.cross_at(float(t), flat)
        for xi in probes:
            quad = sum(d * x * x for d, x in zip(diag, xi))
            if cross is not None:
                quad = quad + 2.0 * cross * xi[0] * xi[1]
            norm2 = sum(x * x for x in xi)
            margin = quad - coeffs.sigma * norm2
            idx = int(np.argmin(margin))
            value = float(np.min(margin))
            if best is None or value < best[0]:
                node = tuple(float(f[idx]) for f in flat)
                best = (value, float(t), node, xi)
    margin, t_bad, node, xi = best
    return EllipticityReport(
        passed=margin >= -1e-12,
        margin=margin,
        worst_time=t_bad,
        worst_node=node,
        worst_direction=tuple(xi),
    )
