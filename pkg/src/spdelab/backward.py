"""Backward-in-time machinery: interpolation ratios, conditional-stability
bounds, per-path solution operators, and Tikhonov reconstruction."""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .brownian import BrownianPath, OBSERVATION_STREAM, path_generator
from .coefficients import CoefficientSet
from .errors import PreconditionError
from .fields import ScalarField, sq_l2, trapezoid_weights
from .grids import SpatialGrid, TimeGrid
from .solver import EnsembleTrace
from .weights import HolderExponent

#: dense column-by-column operator builds are refused above this size
OPERATOR_BUDGET = 512


@dataclass(frozen=True)
class InterpolationResult:
    num: float
    den: float
    ratio: float
    theta: float
    mid_norm: float
    terminal_h1: float


def interpolation_ratio(
    trace: EnsembleTrace, t0: float, theta_h: HolderExponent | float
) -> InterpolationResult:
    """Ratio of |y(t0)| against the interpolated mid/terminal norms.

    num is the mean-square L2 norm at t0; den multiplies the space-time L2
    norm to the power 1-theta with the terminal H1 norm to the power theta.
    A zero denominator with a positive numerator is flagged as an
    inequality-relevant anomaly (it would contradict backward uniqueness).
    """
    theta = theta_h.theta if isinstance(theta_h, HolderExponent) else float(theta_h)
    if not (0.0 < theta < 1.0):
        raise PreconditionError("theta must lie in (0,1)")
    tg = trace.timegrid
    k0 = tg.index_of(t0)
    if k0 == 0:
        raise PreconditionError("t0 must be a marked time in (0, T]")
    num = float(np.sqrt(np.mean(trace.sq_l2[k0])))
    w = trapezoid_weights(tg.steps + 1, tg.dt)
    mid = float(np.sqrt(np.mean(w @ trace.sq_l2)))
    terminal = float(np.sqrt(np.mean(trace.sq_l2[-1] + trace.sq_h1[-1])))
    den = mid ** (1.0 - theta) * terminal**theta
    if den == 0.0:
        if num > 0.0:
            raise PreconditionError(
                "zero denominator with positive |y(t0)|: backward-uniqueness anomaly"
            )
        return InterpolationResult(0.0, 0.0, 0.0, theta, mid, terminal)
    return InterpolationResult(num, den, num / den, theta, mid, terminal)


def theta_from_formula(lam3: float, t0: float, t1: float, c_abs: float) -> HolderExponent:
    """Closed-form interpolation exponent 2(e^{l*t0}-e^{l*t1})/(C+same)."""
    if not (0.0 < t1 < t0):
        raise PreconditionError("need 0 < t1 < t0")
    if lam3 <= 0 or c_abs <= 0:
        raise PreconditionError("lam3 and C must be positive")
    gap = 2.0 * (np.exp(lam3 * t0) - np.exp(lam3 * t1))
    return HolderExponent(theta=gap / (c_abs + gap), provenance="formula")


def beta_bound(m_prior: float, theta: float, c_emp: float, obs_norm: float) -> float:
    """Conditional-stability modulus C * M^(1-theta) * x^theta.

    Strictly increasing in the observation norm and vanishing at zero, the
    properties required of an admissible stability modulus.
    """
    if obs_norm < 0 or m_prior <= 0:
        raise PreconditionError("need obs_norm >= 0 and M > 0")
    return float(c_emp * m_prior ** (1.0 - theta) * obs_norm**theta)


@dataclass(frozen=True)
class PathSolutionOperator:
    """Dense linear maps y0 -> y(T) and y0 -> y(t0) for one Brownian path."""

    grid: SpatialGrid
    timegrid: TimeGrid
    t0: float
    map_terminal: np.ndarray
    map_t0: np.ndarray

    def smallest_singular_value(self) -> float:
        return float(np.linalg.svd(self.map_terminal, compute_uv=False)[-1])

    def eigenvalues_terminal(self) -> np.ndarray:
        return np.linalg.eigvals(self.map_terminal)


def build_path_operator(
    coeffs: CoefficientSet,
    path: BrownianPath,
    grid: SpatialGrid,
    t0: float,
) -> PathSolutionOperator:
    """Column-by-column dense build of the pathwise solution operator.

    Column j is the forward solve from the j-th unit vector along the given
    path; the equation must be source-free (f = g = 0), which makes the map
    exactly linear per path.
    """
    if grid.size > OPERATOR_BUDGET:
        raise PreconditionError(
            f"interior size {grid.size} exceeds the dense build budget {OPERATOR_BUDGET}"
        )
    if coeffs.forcing is not None or coeffs.noise_forcing is not None:
        raise PreconditionError("path operators require source-free dynamics (f = g = 0)")
    from .solver import advance_block

    n = grid.size
    timegrid = path.timegrid
    k0 = timegrid.index_of(t0)
    basis = np.eye(n).reshape(grid.shape + (n,))
    inc = np.broadcast_to(path.increments[:, None], (timegrid.steps, n)).copy()
    map_t0 = basis.reshape(n, n).copy() if k0 == 0 else None
    terminal = basis
    for k, _, y_next, _ in advance_block(basis, coeffs, grid, timegrid, inc):
        if k + 1 == k0:
            map_t0 = y_next.reshape(n, n).copy()
        terminal = y_next
    if map_t0 is None:
        map_t0 = basis.reshape(n, n)
    return PathSolutionOperator(
        grid=grid,
        timegrid=timegrid,
        t0=timegrid.snap(t0),
        map_terminal=terminal.reshape(n, n),
        map_t0=map_t0,
    )


@dataclass(frozen=True)
class ObservationAtT:
    """Observed (possibly perturbed) terminal slice with its driving path."""

    terminal: ScalarField
    delta_noise: float
    path: BrownianPath

    def __post_init__(self):
        if self.delta_noise < 0:
            raise PreconditionError("noise level must be nonnegative")


def make_observation(
    traj, delta_noise: float, seed: int, obs_index: int = 0
) -> ObservationAtT:
    """Terminal slice plus a random perturbation of exact L2 size delta_noise."""
    grid = traj.grid
    terminal = traj.values[-1].copy()
    if delta_noise > 0.0:
        gen = path_generator(seed, OBSERVATION_STREAM + obs_index)
        direction = gen.standard_normal(grid.shape)
        norm = np.sqrt(sq_l2(direction, grid))
        if norm == 0.0:
            raise PreconditionError("degenerate perturbation draw")
        terminal = terminal + (delta_noise / norm) * direction
    return ObservationAtT(
        terminal=ScalarField(grid, terminal),
        delta_noise=delta_noise,
        path=traj.path,
    )


@dataclass(frozen=True)
class TikhonovResult:
    initial_estimate: ScalarField
    at_t0: ScalarField
    alpha: float
    condition_number: float
    ill_conditioned: bool


def tikhonov_backward(
    op: PathSolutionOperator,
    obs: ObservationAtT,
    alpha: float,
    condition_threshold: float = 1e12,
) -> TikhonovResult:
    """Regularized least-squares reconstruction of y(t0) from y(T).

    Solves (A^T A + alpha I) y0 = A^T y_T by normal equations and maps the
    minimizer to t0. An ill-conditioned normal system is reported via the
    condition number but the result is still returned.
    """
    if alpha <= 0:
        raise PreconditionError("alpha must be positive")
    a = op.map_terminal
    n = a.shape[0]
    normal = a.T @ a + alpha * np.eye(n)
    rhs = a.T @ obs.terminal.values.reshape(-1)
    y0 = np.linalg.solve(normal, rhs)
    cond = float(np.linalg.cond(normal))
    at_t0 = op.map_t0 @ y0
    return TikhonovResult(
        initial_estimate=ScalarField(op.grid, y0.reshape(op.grid.shape)),
        at_t0=ScalarField(op.grid, at_t0.reshape(op.grid.shape)),
        alpha=alpha,
        condition_number=cond,
        ill_conditioned=cond > condition_threshold,
    )


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float
    endpoint_slope: float


def fit_holder_rate(pairs: list[tuple[float, float]]) -> RateFit:
    """Least-squares slope of log(error) against log(noise level).

    Needs at least four pairs spanning two decades of noise levels. The
    endpoint slope (first-to-last secant) is reported alongside to expose
    curvature of the power law.
    """
    if len(pairs) < 4:
        raise PreconditionError("need at least 4 (noise, error) pairs")
    noise = np.asarray([p[0] for p in pairs], dtype=float)
    err = np.asarray([p[1] for p in pairs], dtype=float)
    if np.any(noise <= 0) or np.any(err <= 0):
        raise PreconditionError("pairs must be positive for a log-log fit")
    span = np.max(noise) / np.min(noise)
    if span < 100.0:
        raise PreconditionError(f"noise levels span {span:.3g}x, need >= 2 decades")
    lx = np.log(noise)
    ly = np.log(err)
    slope, intercept = np.polyfit(lx, ly, 1)
    fitted = slope * lx + intercept
    residual = float(np.sqrt(np.mean((ly - fitted) ** 2)))
    i_min = int(np.argmin(noise))
    i_max = int(np.argmax(noise))
    endpoint = float((ly[i_max] - ly[i_min]) / (lx[i_max] - lx[i_min]))
    return RateFit(slope=float(slope), intercept=float(intercept),
                   residual=residual, endpoint_slope=endpoint)
