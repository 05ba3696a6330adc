"""Separated-source forward problems, boundary flux observation, the
y -> z -> u -> w transformation chain, and discriminability witnesses.

The geometry is an interval (source depends on t only) or a rectangle
(source depends on t and the transverse coordinate); the source never
depends on the first coordinate, which is what the derivative substitution
u = z_x1 exploits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .brownian import BrownianPath
from .coefficients import CoefficientSet, constant
from .errors import DegenerateBasisError, PreconditionError
from .fields import (
    ScalarField,
    dirichlet_gradient,
    edge_differences,
    inner,
    sample_gradient,
    trapezoid_weights,
)
from .grids import SpatialGrid, TimeGrid
from .solver import SpdeTrajectory, solve_forward


@dataclass(frozen=True)
class SourceSpec:
    """Nodal source values independent of the first coordinate.

    ``values`` has shape (steps+1,) in time-only mode and (steps+1, n2) in
    time-transverse mode; the type cannot represent x1 dependence.
    """

    timegrid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim not in (1, 2) or vals.shape[0] != self.timegrid.steps + 1:
            raise PreconditionError("source values need one row per time node")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("source values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def transverse(self) -> bool:
        return self.values.ndim == 2

    @classmethod
    def from_time_function(cls, fn: Callable[[float], float], timegrid: TimeGrid) -> "SourceSpec":
        vals = np.asarray([float(fn(t)) for t in timegrid.times])
        return cls(timegrid, vals)

    def at_index(self, k: int) -> np.ndarray | float:
        return self.values[k]

    def at_time(self, t: float):
        return self.values[self.timegrid.index_of(t)]

    def scaled(self, factor: float) -> "SourceSpec":
        return SourceSpec(self.timegrid, factor * self.values)

    def plus(self, other: "SourceSpec") -> "SourceSpec":
        return SourceSpec(self.timegrid, self.values + other.values)


def source_inner(a: SourceSpec, b: SourceSpec, t0: float, transverse_spacing: float = 1.0) -> float:
    """L2 inner product of two sources over [0, t0] (x transverse nodes)."""
    tg = a.timegrid
    k0 = tg.index_of(t0)
    w = trapezoid_weights(k0 + 1, tg.dt)
    prod = a.values[: k0 + 1] * b.values[: k0 + 1]
    if a.transverse:
        return float(w @ prod.sum(axis=1) * transverse_spacing)
    return float(w @ prod)


def source_norm(h: SourceSpec, t0: float, transverse_spacing: float = 1.0) -> float:
    return float(np.sqrt(source_inner(h, h, t0, transverse_spacing)))


@dataclass(frozen=True)
class ModulatorR:
    """Strictly nonvanishing modulator with evaluable derivatives.

    ``grad``/``second`` hold one callable per axis (first and pure second
    spatial derivatives); ``time_derivative`` is dR/dt. ``rho`` is the
    positivity floor |R| >= rho on [0, t0] x closure(G), checked on the grid.
    """

    value: Callable[..., np.ndarray]
    grad: tuple[Callable[..., np.ndarray], ...]
    second: tuple[Callable[..., np.ndarray], ...]
    time_derivative: Callable[..., np.ndarray]
    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise PreconditionError("positivity floor rho must be positive")

    def check_floor(self, grid: SpatialGrid, timegrid: TimeGrid, t0: float) -> float:
        """Smallest |R| over [0, t0] x grid closure; raises below rho."""
        coords = grid.meshgrid(include_boundary=True)
        k0 = timegrid.index_of(t0)
        worst = np.inf
        for k in range(k0 + 1):
            r = np.abs(np.asarray(self.value(k * timegrid.dt, *coords), dtype=float))
            worst = min(worst, float(np.min(r)))
        if worst < self.rho - 1e-12:
            raise PreconditionError(
                f"|R| dips to {worst:.6g} below the declared floor {self.rho}"
            )
        return worst

    @classmethod
    def identity(cls, dimension: int) -> "ModulatorR":
        one = constant(1.0)
        zero = constant(0.0)
        return cls(
            value=one,
            grad=(zero,) * dimension,
            second=(zero,) * dimension,
            time_derivative=zero,
            rho=1.0,
        )


@dataclass(frozen=True)
class CutoffChi:
    """Smooth cutoff: 1 up to t1, 0 from t2 on, C-infinity bump in between."""

    t1: float
    t2: float

    def __post_init__(self):
        if not (self.t1 < self.t2):
            raise PreconditionError("need t1 < t2")

    @staticmethod
    def _q(x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    def value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        xi = (self.t2 - t) / (self.t2 - self.t1)
        xi = np.clip(xi, 0.0, 1.0)
        a = self._q(xi)
        b = self._q(1.0 - xi)
        with np.errstate(invalid="ignore"):
            out = np.where(a + b > 0, a / np.where(a + b > 0, a + b, 1.0), 0.0)
        return out if out.shape else float(out)

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        xi = (self.t2 - t) / (self.t2 - self.t1)
        inside = (xi > 0) & (xi < 1)
        out = np.zeros_like(t, dtype=float)
        x = xi[inside]
        a = self._q(x)
        b = self._q(1.0 - x)
        qa = a / x**2
        qb = b / (1.0 - x) ** 2
        ds_dxi = (qa * b + a * qb) / (a + b) ** 2
        out[inside] = ds_dxi * (-1.0 / (self.t2 - self.t1))
        return out if out.shape else float(out)


@dataclass(frozen=True)
class FluxObservation:
    """Normal-derivative samples on the boundary for t in [0, t0].

    ``values`` has shape (k0+1, n_sites); ``site_weights`` carry the boundary
    quadrature (counting measure for the two interval endpoints, transverse
    trapezoid weights on rectangle faces).
    """

    timegrid: TimeGrid
    t0: float
    site_labels: tuple[str, ...]
    values: np.ndarray
    site_weights: np.ndarray

    def inner(self, other: "FluxObservation") -> float:
        if self.values.shape != other.values.shape:
            raise PreconditionError("flux observations are not comparable")
        k0 = self.values.shape[0] - 1
        w = trapezoid_weights(k0 + 1, self.timegrid.dt)
        per_time = (self.values * other.values) @ self.site_weights
        return float(w @ per_time)

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))


def forward_source(
    h: SourceSpec,
    modulator: ModulatorR,
    coeffs: CoefficientSet,
    path: BrownianPath,
    grid: SpatialGrid,
) -> SpdeTrajectory:
    """Solve the source problem: Laplacian diffusion, forcing h(t,x')R(t,x),
    zero initial data; affine in h along a fixed path."""
    if h.transverse and grid.dimension != 2:
        raise PreconditionError("transverse sources need a 2D grid")
    modulator.check_floor(grid, path.timegrid, path.timegrid.horizon)

    def forcing(t, *coords):
        hv = h.at_time(t)
        r = modulator.value(t, *coords)
        if h.transverse:
            return hv[None, :] * r
        return hv * r

    source_coeffs = CoefficientSet(
        diffusion=coeffs.diffusion,
        sigma=coeffs.sigma,
        drift=coeffs.drift,
        reaction=coeffs.reaction,
        forcing=forcing,
        noise_scale=coeffs.noise_scale,
        noise_forcing=None,
        drift_sup=coeffs.drift_sup,
        reaction_sup=coeffs.reaction_sup,
        noise_scale_w1inf=coeffs.noise_scale_w1inf,
    )
    y0 = np.zeros(grid.shape)
    return solve_forward(y0, source_coeffs, path, grid)


def normal_flux(
    traj: SpdeTrajectory, t0: float, faces: Optional[Sequence[str]] = None
) -> FluxObservation:
    """Outward normal derivative on the boundary, one-sided second order.

    Convention: flux = grad(y) . nu with nu the outer normal, so a field
    rising away from the wall has negative flux there; for y = sin(pi*x) on
    (0,1) both endpoint fluxes equal -pi.
    ``faces`` optionally restricts the observed boundary subset.
    """
    grid = traj.grid
    tg = traj.timegrid
    k0 = tg.index_of(t0)
    slices = traj.values[: k0 + 1]
    cols: list[np.ndarray] = []
    labels: list[str] = []
    weights: list[np.ndarray] = []
    if grid.dimension == 1:
        h = grid.spacings[0]
        wanted = faces if faces is not None else ("x1=0", "x1=l")
        if "x1=0" in wanted:
            cols.append(-(4.0 * slices[:, 0] - slices[:, 1]) / (2.0 * h))
            labels.append("x1=0")
            weights.append(np.array([1.0]))
        if "x1=l" in wanted:
            cols.append((slices[:, -2] - 4.0 * slices[:, -1]) / (2.0 * h))
            labels.append("x1=l")
            weights.append(np.array([1.0]))
        values = np.stack(cols, axis=1)
    else:
        h1, h2 = grid.spacings
        n1, n2 = grid.interior_points
        wanted = faces if faces is not None else ("x1=0", "x1=l", "x2=0", "x2=l")
        parts = []
        if "x1=0" in wanted:
            parts.append((-(4.0 * slices[:, 0, :] - slices[:, 1, :]) / (2.0 * h1),
                          "x1=0", np.full(n2, h2)))
        if "x1=l" in wanted:
            parts.append(((slices[:, -2, :] - 4.0 * slices[:, -1, :]) / (2.0 * h1),
                          "x1=l", np.full(n2, h2)))
        if "x2=0" in wanted:
            parts.append((-(4.0 * slices[:, :, 0] - slices[:, :, 1]) / (2.0 * h2),
                          "x2=0", np.full(n1, h1)))
        if "x2=l" in wanted:
            parts.append(((slices[:, :, -2] - 4.0 * slices[:, :, -1]) / (2.0 * h2),
                          "x2=l", np.full(n1, h1)))
        for block, face, w in parts:
            cols.append(block)
            labels.extend(f"{face}@{j}" for j in range(block.shape[1]))
            weights.append(w)
        values = np.concatenate(cols, axis=1)
    return FluxObservation(
        timegrid=tg,
        t0=tg.snap(t0),
        site_labels=tuple(labels),
        values=values,
        site_weights=np.concatenate(weights),
    )


def _derivative_x1_full(z: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """x1 derivative of a Dirichlet slice, including the two boundary values.

    Interior nodes use centered differences with the boundary zeros;
    the boundary values themselves come from one-sided second-order stencils.
    Output gains two extra rows along axis 0.
    """
    h = grid.spacings[0]
    n1 = grid.interior_points[0]
    padded_shape = (n1 + 2,) + z.shape[1:]
    out = np.empty(padded_shape)
    zp = np.concatenate([np.zeros((1,) + z.shape[1:]), z, np.zeros((1,) + z.shape[1:])], axis=0)
    out[1:-1] = (zp[2:] - zp[:-2]) / (2.0 * h)
    out[0] = (4.0 * z[0] - z[1]) / (2.0 * h)
    out[-1] = (z[-2] - 4.0 * z[-1]) / (2.0 * h)
    return out


def _laplacian_full_x1(w_full: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Laplacian at interior nodes of a slice carrying x1-boundary values.

    Along x1 the stencil uses the stored boundary rows; along x2 the slice is
    Dirichlet (pad with zeros).
    """
    h1 = grid.spacings[0]
    out = (w_full[2:] - 2.0 * w_full[1:-1] + w_full[:-2]) / h1**2
    if grid.dimension == 2:
        h2 = grid.spacings[1]
        interior = w_full[1:-1]
        zp = np.concatenate(
            [np.zeros(interior.shape[:-1] + (1,)), interior,
             np.zeros(interior.shape[:-1] + (1,))], axis=-1)
        out = out + (zp[..., 2:] - 2.0 * zp[..., 1:-1] + zp[..., :-2]) / h2**2
    return out


@dataclass(frozen=True)
class ChainResult:
    z_values: np.ndarray
    u_values: np.ndarray
    w_values: np.ndarray
    residual_z: float
    residual_w: float


def _grad_full_x1(w_full: np.ndarray, grid: SpatialGrid) -> tuple[np.ndarray, ...]:
    """Gradient at interior nodes of a slice with explicit x1 boundary rows."""
    h1 = grid.spacings[0]
    gx1 = (w_full[2:] - w_full[:-2]) / (2.0 * h1)
    if grid.dimension == 1:
        return (gx1,)
    interior = w_full[1:-1]
    h2 = grid.spacings[1]
    zp = np.concatenate(
        [np.zeros(interior.shape[:-1] + (1,)), interior,
         np.zeros(interior.shape[:-1] + (1,))], axis=-1)
    gx2 = (zp[..., 2:] - zp[..., :-2]) / (2.0 * h2)
    return gx1, gx2


def transform_chain(
    traj: SpdeTrajectory,
    modulator: ModulatorR,
    chi: CutoffChi,
    t0: float,
    coeffs: CoefficientSet,
    h: SourceSpec,
    test_field: Optional[ScalarField] = None,
) -> ChainResult:
    """Form z = y/R, u = z_x1 (with boundary values), w = chi*u, and measure
    the weak residuals of the transformed equations on [0, t0].

    The z-equation residual is evaluated exactly like the solver's weak
    residual; the w-equation residual additionally carries the cutoff
    commutator -chi' u and the x1-differentiated coefficients (sampled-field
    gradients; constant drift coefficients contribute nothing).
    """
    grid = traj.grid
    tg = traj.timegrid
    k0 = tg.index_of(t0)
    modulator.check_floor(grid, tg, t0)
    coords = grid.meshgrid()
    if test_field is None:
        profile = np.ones(grid.shape)
        for axis in range(grid.dimension):
            x = grid.axis_nodes(axis)
            shape = [1] * grid.dimension
            shape[axis] = -1
            profile = profile * np.sin(np.pi * x / grid.lengths[axis]).reshape(shape)
        test_field = ScalarField(grid, profile)
    p = test_field.values

    times = tg.times
    chi_vals = np.asarray(chi.value(times), dtype=float)
    chi_der = np.asarray(chi.derivative(times), dtype=float)

    n1 = grid.interior_points[0]
    z_values = np.empty((k0 + 1,) + grid.shape)
    u_values = np.empty((k0 + 1, n1 + 2) + grid.shape[1:])
    w_values = np.empty_like(u_values)
    r_cache = []
    for k in range(k0 + 1):
        t = times[k]
        r = np.asarray(modulator.value(t, *coords), dtype=float)
        r_cache.append(r)
        z_values[k] = traj.values[k] / r
        u_values[k] = _derivative_x1_full(z_values[k], grid)
        w_values[k] = chi_vals[k] * u_values[k]

    def modulator_fields(k: int):
        # zero-order coefficient of the substituted equation; the gradient
        # cross terms cancel exactly when y = R z is expanded, leaving
        # b2 + (Lap R)/R - R_t/R + (grad R / R, b1)
        t = times[k]
        r = r_cache[k]
        grads = [np.asarray(g(t, *coords), dtype=float) for g in modulator.grad]
        lap = sum(np.asarray(s(t, *coords), dtype=float) for s in modulator.second)
        rt = np.asarray(modulator.time_derivative(t, *coords), dtype=float)
        drift_extra = [2.0 * g / r for g in grads]
        b1 = [np.asarray(coeffs.drift_at(a, t, coords), dtype=float)
              for a in range(grid.dimension)]
        zero_coeff = (
            np.asarray(coeffs.reaction_at(t, coords), dtype=float)
            + lap / r
            - rt / r
            + sum(g / r * b for g, b in zip(grads, b1))
        )
        return b1, drift_extra, zero_coeff

    # weak residual of the z-equation
    total_z = inner(z_values[k0], p, grid) - inner(z_values[0], p, grid)
    dt = tg.dt
    for k in range(k0):
        t = times[k]
        z_k = z_values[k]
        b1, drift_extra, zero_coeff = modulator_fields(k)
        lap_pair = -sum(
            grid.cell_volume * np.sum(
                edge_differences(z_k, grid, a) * edge_differences(p, grid, a),
                axis=tuple(range(grid.dimension)))
            for a in range(grid.dimension)
        )
        gz = dirichlet_gradient(z_k, grid)
        drift = sum((b1[a] + drift_extra[a]) * gz[a] for a in range(grid.dimension))
        hk = h.at_index(k)
        h_field = hk[None, :] * np.ones(grid.shape) if h.transverse else hk * np.ones(grid.shape)
        payload = drift + zero_coeff * z_k + h_field
        total_z -= dt * (lap_pair + inner(payload, p, grid))
        b3 = coeffs.noise_scale_at(t, coords)
        total_z -= inner(b3 * z_k, p, grid) * traj.path.increments[k]
    residual_z = float(abs(total_z))

    # weak residual of the w-equation
    total_w = inner(w_values[k0][1:-1], p, grid) - inner(w_values[0][1:-1], p, grid)
    for k in range(k0):
        t = times[k]
        w_full = w_values[k]
        w_int = w_full[1:-1]
        z_k = z_values[k]
        u_int = u_values[k][1:-1]
        b1, drift_extra, zero_coeff = modulator_fields(k)
        lap_pair = inner(_laplacian_full_x1(w_full, grid), p, grid)
        gw = _grad_full_x1(w_full, grid)
        gz = dirichlet_gradient(z_k, grid)
        drift = sum((b1[a] + drift_extra[a]) * gw[a] for a in range(grid.dimension))
        extra_x1 = [sample_gradient(b1[a] + drift_extra[a], grid, 0)
                    for a in range(grid.dimension)]
        drift += sum(chi_vals[k] * extra_x1[a] * gz[a] for a in range(grid.dimension))
        zero_x1 = sample_gradient(zero_coeff, grid, 0)
        payload = drift + zero_coeff * w_int + zero_x1 * chi_vals[k] * z_k
        # dw = chi du + chi' u dt, so the cutoff commutator enters with +
        payload = payload + chi_der[k] * u_int
        total_w -= dt * (lap_pair + inner(payload, p, grid))
        b3 = coeffs.noise_scale_at(t, coords)
        noise_payload = b3 * w_int + sample_gradient(b3, grid, 0) * chi_vals[k] * z_k
        total_w -= inner(noise_payload, p, grid) * traj.path.increments[k]
    residual_w = float(abs(total_w))

    return ChainResult(
        z_values=z_values,
        u_values=u_values,
        w_values=w_values,
        residual_z=residual_z,
        residual_w=residual_w,
    )


def volterra_identity_check(
    z_values: np.ndarray,
    w_values: np.ndarray,
    chi: CutoffChi,
    grid: SpatialGrid,
    timegrid: TimeGrid,
    t0: float,
) -> float:
    """Largest defect of chi*z = integral of w along x1 from the wall.

    ``w_values`` carries the x1 boundary rows (the integrand at the wall);
    z vanishes at x1 = 0 by the Dirichlet data, which the identity needs.
    """
    k0 = timegrid.index_of(t0)
    h1 = grid.spacings[0]
    worst = 0.0
    for k in range(k0 + 1):
        chi_k = float(np.asarray(chi.value(timegrid.times[k])))
        w_full = w_values[k]
        cum = np.cumsum(0.5 * h1 * (w_full[1:] + w_full[:-1]), axis=0)[:-1]
        defect = np.max(np.abs(chi_k * z_values[k] - cum))
        worst = max(worst, float(defect))
    return worst


@dataclass(frozen=True)
class GramResult:
    gram: np.ndarray
    eigenvalues: np.ndarray
    min_eigenvalue: float
    source_gram: np.ndarray
    kappa_min: float
    flux_norms: tuple[float, ...]


def discriminability_gram(
    basis: Sequence[SourceSpec],
    modulator: ModulatorR,
    coeffs: CoefficientSet,
    path: BrownianPath,
    grid: SpatialGrid,
    t0: float,
    faces: Optional[Sequence[str]] = None,
    require_independent: bool = True,
) -> GramResult:
    """Gram matrix of the source-to-flux images of a source basis.

    A strictly positive smallest eigenvalue witnesses injectivity of the
    discretized source-to-flux map on the basis span; ``kappa_min`` is the
    square root of the smallest generalized eigenvalue against the source
    Gram, i.e. the constant in |F(h)| >= kappa_min |h| on the span.
    """
    if not basis:
        raise PreconditionError("empty source basis")
    tspace = grid.spacings[1] if grid.dimension == 2 else 1.0
    m = len(basis)
    source_gram = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            source_gram[i, j] = source_inner(basis[i], basis[j], t0, tspace)
    src_eigs = np.linalg.eigvalsh(source_gram)
    degenerate = src_eigs[0] <= 1e-12 * max(src_eigs[-1], 1e-300)
    if degenerate and require_independent:
        raise DegenerateBasisError(
            f"source basis is dependent: eigenvalue ratio {src_eigs[0]:.3e}/{src_eigs[-1]:.3e}"
        )
    fluxes = []
    for h in basis:
        traj = forward_source(h, modulator, coeffs, path, grid)
        fluxes.append(normal_flux(traj, t0, faces=faces))
    gram = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            gram[i, j] = gram[j, i] = fluxes[i].inner(fluxes[j])
    eigs = np.linalg.eigvalsh(gram)
    if degenerate:
        kappa = 0.0
    else:
        gen = sla.eigh(gram, source_gram, eigvals_only=True)
        kappa = float(np.sqrt(max(gen[0], 0.0)))
    return GramResult(
        gram=gram,
        eigenvalues=eigs,
        min_eigenvalue=float(eigs[0]),
        source_gram=source_gram,
        kappa_min=kappa,
        flux_norms=tuple(f.norm() for f in fluxes),
    )


@dataclass(frozen=True)
class FluxBoundProbe:
    flux_norm: float
    source_norm: float
    kappa_min: float
    bound: float
    passed: bool
    vacuous: bool


def zero_flux_implies_zero_source_probe(
    h: SourceSpec,
    modulator: ModulatorR,
    coeffs: CoefficientSet,
    path: BrownianPath,
    grid: SpatialGrid,
    t0: float,
    gram: GramResult,
    slack: float = 0.1,
    faces: Optional[Sequence[str]] = None,
) -> FluxBoundProbe:
    """Contrapositive witness: flux norm >= (1 - slack) kappa_min |h|.

    For h = 0 the verdict is a vacuous pass (zero source forces zero flux).
    Valid for h in the span of the Gram experiment's basis.
    """
    tspace = grid.spacings[1] if grid.dimension == 2 else 1.0
    hn = source_norm(h, t0, tspace)
    traj = forward_source(h, modulator, coeffs, path, grid)
    fn = normal_flux(traj, t0, faces=faces).norm()
    if hn == 0.0:
        return FluxBoundProbe(fn, 0.0, gram.kappa_min, 0.0, passed=fn <= 1e-10, vacuous=True)
    bound = (1.0 - slack) * gram.kappa_min * hn
    return FluxBoundProbe(
        flux_norm=fn,
        source_norm=hn,
        kappa_min=gram.kappa_min,
        bound=bound,
        passed=fn >= bound,
        vacuous=False,
    )


def least_squares_source_recovery(
    target: SourceSpec,
    basis: Sequence[SourceSpec],
    modulator: ModulatorR,
    coeffs: CoefficientSet,
    path: BrownianPath,
    grid: SpatialGrid,
    t0: float,
    faces: Optional[Sequence[str]] = None,
) -> tuple[SourceSpec, float]:
    """Demo reconstruction: project the target's flux onto the basis fluxes.

    Returns the recovered source and the relative source-space misfit. This
    is a demonstration only; the uniqueness witness of this module is the
    Gram minimum eigenvalue, and nothing quantitative is asserted here.
    """
    obs = normal_flux(forward_source(target, modulator, coeffs, path, grid), t0,
                      faces=faces)
    fluxes = [normal_flux(forward_source(h, modulator, coeffs, path, grid), t0,
                          faces=faces) for h in basis]
    m = len(basis)
    gram = np.empty((m, m))
    rhs = np.empty(m)
    for i in range(m):
        rhs[i] = fluxes[i].inner(obs)
        for j in range(i, m):
            gram[i, j] = gram[j, i] = fluxes[i].inner(fluxes[j])
    coefs = np.linalg.solve(gram, rhs)
    recovered = SourceSpec(
        target.timegrid,
        sum(c * h.values for c, h in zip(coefs, basis)),
    )
    tspace = grid.spacings[1] if grid.dimension == 2 else 1.0
    diff = SourceSpec(target.timegrid, recovered.values - target.values)
    scale = source_norm(target, t0, tspace)
    misfit = source_norm(diff, t0, tspace) / scale if scale > 0 else 0.0
    return recovered, float(misfit)


def orthonormal_time_basis(timegrid: TimeGrid, t0: float, size: int) -> list[SourceSpec]:
    """Fourier-flavoured time sources, orthonormalized in the discrete
    L2(0, t0) inner product (so source norms of coefficient vectors are exact)."""
    if size < 1:
        raise PreconditionError("basis size must be positive")
    t = timegrid.times
    raw = [np.ones_like(t)]
    mode = 1
    while len(raw) < size:
        raw.append(np.cos(mode * np.pi * t / t0))
        if len(raw) < size:
            raw.append(np.sin(mode * np.pi * t / t0))
        mode += 1
    basis: list[SourceSpec] = []
    for vec in raw[:size]:
        h = SourceSpec(timegrid, vec.copy())
        for prev in basis:
            coef = source_inner(h, prev, t0)
            h = SourceSpec(timegrid, h.values - coef * prev.values)
        norm = source_norm(h, t0)
        if norm <= 1e-12:
            raise DegenerateBasisError("orthonormalization collapsed a basis vector")
        basis.append(SourceSpec(timegrid, h.values / norm))
    return basis
