"""Semi-implicit time stepping for the forward stochastic parabolic equation.

Scheme per step (left-endpoint noise sampling, diffusion implicit):

    (I - dt*A(t_{k+1})) y_{k+1} = y_k + dt*[(a1 . grad_h y_k) + a2 y_k + f(t_k)]
                                  + (a3(t_k) y_k + g(t_k)) dB_k

Dirichlet rows are exact because only interior nodes are unknowns. The noise
enters with the increment of the attached Brownian path, so slice k depends
only on increments with index < k (adaptedness by construction).

Ensembles advance in fixed-size path blocks; the block layout and the merge
order are independent of the worker count, so reports are bit-stable under
any parallel schedule.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .brownian import BrownianPath, sample_increment_block
from .coefficients import CoefficientSet, compute_r1
from .errors import LinearSolveError, PreconditionError, StabilityError
from .fields import ScalarField, dirichlet_gradient, inner, sq_h1, sq_l2, trapezoid_weights
from .grids import SpatialGrid, TimeGrid
from .operators import EllipticOperator, assemble_elliptic, b_pairing

#: paths per block; fixed per run so results do not depend on the worker count
BLOCK_SIZE = 256

#: relative residual above which a time-step solve is distrusted
SOLVE_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class SpdeTrajectory:
    """All time slices of one forward solve plus the driving path."""

    grid: SpatialGrid
    timegrid: TimeGrid
    values: np.ndarray
    path: BrownianPath

    def __post_init__(self):
        expected = (self.timegrid.steps + 1,) + self.grid.shape
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != expected:
            raise PreconditionError(f"expected trajectory shape {expected}, got {vals.shape}")
        object.__setattr__(self, "values", vals)

    def slice_field(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[k])

    def at_time(self, t: float) -> ScalarField:
        return self.slice_field(self.timegrid.index_of(t))


class _ImplicitFactor:
    """Reusable solver for (I - dt*A(t)) x = rhs with residual checking."""

    def __init__(self, grid: SpatialGrid, operator: EllipticOperator, dt: float):
        self.grid = grid
        self.operator = operator
        self.matrix = (sp.identity(grid.size, format="csr") - dt * operator.matrix).tocsr()
        if grid.dimension == 1:
            n = grid.size
            ab = np.zeros((3, n))
            ab[0, 1:] = self.matrix.diagonal(1)
            ab[1, :] = self.matrix.diagonal(0)
            ab[2, :-1] = self.matrix.diagonal(-1)
            self._ab = ab
            self._lu = None
        else:
            self._ab = None
            self._lu = spla.splu(self.matrix.tocsc())

    def solve(self, rhs: np.ndarray, check: bool = True) -> np.ndarray:
        flat = rhs.reshape(self.grid.size, -1)
        if self._ab is not None:
            out = sla.solve_banded((1, 1), self._ab, flat)
        else:
            out = self._lu.solve(flat)
        if check:
            defect = np.max(np.abs(self.matrix @ out - flat))
            scale = max(1.0, float(np.max(np.abs(flat))))
            if defect > SOLVE_RESIDUAL_TOL * scale:
                raise LinearSolveError(
                    f"time-step solve residual {defect:.3e} exceeds {SOLVE_RESIDUAL_TOL:.1e}"
                )
        return out.reshape(rhs.shape)


def check_stability(coeffs: CoefficientSet, grid: SpatialGrid, timegrid: TimeGrid) -> None:
    """Budget for the explicitly treated lower-order terms."""
    if timegrid.steps == 0:
        return
    h_min = min(grid.spacings)
    budget = timegrid.dt * (coeffs.reaction_sup + coeffs.drift_sup / h_min)
    if budget > 1.0:
        raise StabilityError(
            f"dt*(|a2| + |a1|/h) = {budget:.3g} > 1; shrink dt or the drift terms"
        )


def explicit_terms(
    coeffs: CoefficientSet,
    grid: SpatialGrid,
    t: float,
    y: np.ndarray,
    coords: tuple[np.ndarray, ...],
) -> np.ndarray:
    """Drift payload (a1 . grad_h y) + a2 y + f at the left endpoint."""
    extra = y.ndim - grid.dimension
    out = np.zeros_like(y)
    if coeffs.drift is not None:
        grads = dirichlet_gradient(y, grid)
        for axis in range(grid.dimension):
            a = coeffs.drift_at(axis, t, coords)
            out += a.reshape(a.shape + (1,) * extra) * grads[axis]
    if coeffs.reaction is not None:
        a2 = coeffs.reaction_at(t, coords)
        out += a2.reshape(a2.shape + (1,) * extra) * y
    if coeffs.forcing is not None:
        f = coeffs.forcing_at(t, coords)
        out += f.reshape(f.shape + (1,) * extra)
    return out


def noise_terms(
    coeffs: CoefficientSet,
    grid: SpatialGrid,
    t: float,
    y: np.ndarray,
    coords: tuple[np.ndarray, ...],
) -> np.ndarray:
    """Diffusion payload a3 y + g sampled at the left endpoint."""
    extra = y.ndim - grid.dimension
    out = np.zeros_like(y)
    if coeffs.noise_scale is not None:
        a3 = coeffs.noise_scale_at(t, coords)
        out += a3.reshape(a3.shape + (1,) * extra) * y
    if coeffs.noise_forcing is not None:
        g = coeffs.noise_forcing_at(t, coords)
        out += g.reshape(g.shape + (1,) * extra)
    return out


def step(
    yk: np.ndarray,
    coeffs: CoefficientSet,
    grid: SpatialGrid,
    timegrid: TimeGrid,
    k: int,
    dB: float | np.ndarray,
    factor: Optional[_ImplicitFactor] = None,
    check: bool = True,
) -> np.ndarray:
    """Advance one step from t_k; ``dB`` broadcasts over trailing path axes."""
    dt = timegrid.dt
    t_k = k * dt
    coords = grid.meshgrid()
    if factor is None:
        factor = _ImplicitFactor(grid, assemble_elliptic(grid, coeffs, t_k + dt), dt)
    rhs = yk + dt * explicit_terms(coeffs, grid, t_k, yk, coords)
    if coeffs.has_noise():
        rhs = rhs + noise_terms(coeffs, grid, t_k, yk, coords) * np.asarray(dB)
    return factor.solve(rhs, check=check)


def advance_block(
    y0: np.ndarray,
    coeffs: CoefficientSet,
    grid: SpatialGrid,
    timegrid: TimeGrid,
    increments: np.ndarray,
) -> Iterator[tuple[int, np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (k, y_k, y_{k+1}, dB_k) for one block of paths.

    ``y0`` has shape (spatial..., m) and ``increments`` (steps, m); the block
    shares factorizations across steps when the diffusion is time-constant.
    """
    check_stability(coeffs, grid, timegrid)
    dt = timegrid.dt
    factor = None
    y = np.array(y0, dtype=float)
    for k in range(timegrid.steps):
        if factor is None or coeffs.diffusion_time_dependent:
            factor = _ImplicitFactor(
                grid, assemble_elliptic(grid, coeffs, (k + 1) * dt), dt
            )
        y_next = step(y, coeffs, grid, timegrid, k, increments[k], factor=factor)
        yield k, y, y_next, increments[k]
        y = y_next


def solve_forward(
    y0: ScalarField | np.ndarray,
    coeffs: CoefficientSet,
    path: BrownianPath,
    grid: SpatialGrid,
) -> SpdeTrajectory:
    """Forward solve along one Brownian path, storing every slice."""
    y0_values = y0.values if isinstance(y0, ScalarField) else np.asarray(y0, dtype=float)
    timegrid = path.timegrid
    values = np.empty((timegrid.steps + 1,) + grid.shape)
    values[0] = y0_values
    block0 = y0_values[..., None]
    inc = path.increments[:, None]
    for k, _, y_next, _ in advance_block(block0, coeffs, grid, timegrid, inc):
        values[k + 1] = y_next[..., 0]
    return SpdeTrajectory(grid=grid, timegrid=timegrid, values=values, path=path)


def run_blocks(
    n_paths: int,
    block_fn: Callable[[range], object],
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> list:
    """Apply ``block_fn`` to fixed path-index blocks; results in index order."""
    blocks = [range(start, min(start + block_size, n_paths))
              for start in range(0, n_paths, block_size)]
    if workers <= 1 or len(blocks) <= 1:
        return [block_fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(block_fn, blocks))


@dataclass(frozen=True)
class EnsembleTrace:
    """Per-path, per-time squared norms: everything the weighted functionals need."""

    grid: SpatialGrid
    timegrid: TimeGrid
    sq_l2: np.ndarray
    sq_h1: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.sq_l2.shape[1]


def ensemble_trace(
    y0: ScalarField | np.ndarray,
    coeffs: CoefficientSet,
    grid: SpatialGrid,
    timegrid: TimeGrid,
    seed: int,
    n_paths: int,
    workers: int = 1,
) -> EnsembleTrace:
    """Solve ``n_paths`` forward problems, keeping squared L2/H1 time series."""
    y0_values = y0.values if isinstance(y0, ScalarField) else np.asarray(y0, dtype=float)
    if grid.dimension == 2:
        workers = 1  # sparse LU solves are not shared across threads

    def block_fn(indices: range):
        inc = sample_increment_block(seed, indices, timegrid)
        m = len(indices)
        block0 = np.broadcast_to(y0_values[..., None], y0_values.shape + (m,)).copy()
        l2 = np.empty((timegrid.steps + 1, m))
        h1 = np.empty((timegrid.steps + 1, m))
        l2[0] = sq_l2(block0, grid)
        h1[0] = sq_h1(block0, grid)
        for k, _, y_next, _ in advance_block(block0, coeffs, grid, timegrid, inc):
            l2[k + 1] = sq_l2(y_next, grid)
            h1[k + 1] = sq_h1(y_next, grid)
        return l2, h1

    results = run_blocks(n_paths, block_fn, workers=workers)
    sq_l2_all = np.hstack([r[0] for r in results])
    sq_h1_all = np.hstack([r[1] for r in results])
    return EnsembleTrace(grid=grid, timegrid=timegrid, sq_l2=sq_l2_all, sq_h1=sq_h1_all)


def ensemble_mean_std(
    y0: ScalarField | np.ndarray,
    coeffs: CoefficientSet,
    grid: SpatialGrid,
    timegrid: TimeGrid,
    seed: int,
    n_paths: int,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Nodewise ensemble mean and standard deviation of the trajectory."""
    y0_values = y0.values if isinstance(y0, ScalarField) else np.asarray(y0, dtype=float)
    if grid.dimension == 2:
        workers = 1

    def block_fn(indices: range):
        inc = sample_increment_block(seed, indices, timegrid)
        m = len(indices)
        block0 = np.broadcast_to(y0_values[..., None], y0_values.shape + (m,)).copy()
        total = np.zeros((timegrid.steps + 1,) + grid.shape)
        total_sq = np.zeros_like(total)
        total[0] = m * block0[..., 0]
        total_sq[0] = m * block0[..., 0] ** 2
        for k, _, y_next, _ in advance_block(block0, coeffs, grid, timegrid, inc):
            total[k + 1] = y_next.sum(axis=-1)
            total_sq[k + 1] = np.square(y_next).sum(axis=-1)
        return total, total_sq

    results = run_blocks(n_paths, block_fn, workers=workers)
    total = sum(r[0] for r in results)
    total_sq = sum(r[1] for r in results)
    mean = total / n_paths
    var = np.maximum(total_sq / n_paths - mean**2, 0.0)
    return mean, np.sqrt(var)


def weak_residual(
    traj: SpdeTrajectory,
    p: ScalarField,
    t: float,
    coeffs: CoefficientSet,
) -> float:
    """Absolute defect of the variational identity against one test function.

    Evaluates, at the grid node closest to ``t``,

        <y(t),p> - <y0,p> - sum_k dt*[-B(y_k,p) + <(a1.grad y_k)+a2 y_k+f_k, p>]
                          - sum_k <a3 y_k + g_k, p> dB_k

    with B the same edge-sampled diffusion pairing the solver's operator uses.
    Test functions are interior-node fields, hence vanish on the boundary by
    construction.
    """
    grid = traj.grid
    timegrid = traj.timegrid
    if p.grid != grid:
        raise PreconditionError("test function must live on the trajectory grid")
    k_end = timegrid.index_of(t)
    coords = grid.meshgrid()
    pv = p.values
    total = inner(traj.values[k_end], pv, grid) - inner(traj.values[0], pv, grid)
    dt = timegrid.dt
    for k in range(k_end):
        t_k = k * dt
        y_k = traj.values[k]
        pairing = -b_pairing(y_k, pv, grid, coeffs, t_k)
        drift = inner(explicit_terms(coeffs, grid, t_k, y_k, coords), pv, grid)
        total -= dt * (pairing + drift)
        total -= inner(noise_terms(coeffs, grid, t_k, y_k, coords), pv, grid) * \
            traj.path.increments[k]
    return float(abs(total))


@dataclass(frozen=True)
class EnergyReport:
    """Monte Carlo estimates for the initial-data energy bound."""

    lhs_sup: float
    lhs_l2: float
    rhs: float
    ratio_sup: float
    ratio_total: float
    r1: float


def energy_bound_check(
    trace: EnsembleTrace,
    y0: ScalarField,
    coeffs: CoefficientSet,
) -> EnergyReport:
    """Compare sup-in-time and time-integrated solution norms against r1*|y0|."""
    if trace.n_paths == 0:
        raise PreconditionError("empty ensemble")
    sup_sq = np.max(trace.sq_l2, axis=0)
    lhs_sup = float(np.sqrt(np.mean(sup_sq)))
    w = trapezoid_weights(trace.timegrid.steps + 1, trace.timegrid.dt)
    h1_time = w @ trace.sq_h1
    lhs_l2 = float(np.sqrt(np.mean(h1_time)))
    r1 = compute_r1(coeffs)
    rhs = r1 * y0.l2()
    if rhs == 0.0:
        return EnergyReport(lhs_sup, lhs_l2, rhs, 0.0, 0.0, r1)
    return EnergyReport(
        lhs_sup=lhs_sup,
        lhs_l2=lhs_l2,
        rhs=rhs,
        ratio_sup=lhs_sup / rhs,
        ratio_total=(lhs_sup + lhs_l2) / rhs,
        r1=r1,
    )


TRAJECTORY_CSV_HEADER_1D = "path_index,k,t,node_index,x,value"
TRAJECTORY_CSV_HEADER_2D = "path_index,k,t,node_index,x1,x2,value"


def write_trajectory_csv(traj: SpdeTrajectory, path_index: int, fileobj) -> None:
    """Dump a trajectory as CSV (per-node rows; 2D grids get x1,x2 columns)."""
    grid = traj.grid
    coords = grid.meshgrid()
    flat_coords = [c.reshape(-1) for c in coords]
    if grid.dimension == 1:
        fileobj.write(TRAJECTORY_CSV_HEADER_1D + "\n")
    else:
        fileobj.write(TRAJECTORY_CSV_HEADER_2D + "\n")
    dt = traj.timegrid.dt
    for k in range(traj.timegrid.steps + 1):
        flat = traj.values[k].reshape(-1)
        for node in range(grid.size):
            xs = ",".join(f"{c[node]:.17g}" for c in flat_coords)
            fileobj.write(
                f"{path_index},{k},{k * dt:.17g},{node},{xs},{flat[node]:.17g}\n"
            )
