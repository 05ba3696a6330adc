"""Weighted-identity ledger and the two sides of the weighted energy bound.

The integrated identity is evaluated term by term in its discrete form:
stochastic integrals sample integrands at the left endpoint, every dt-term
uses left-endpoint rectangles (this keeps the step algebra exact whenever the
weight is time-constant), the quadratic-variation terms use raw squared
per-step increments, and the time-boundary term is the telescoped difference
of its integrand at the last and first retained slices. Expectations are
Monte Carlo means over the path ensemble with index-ordered reductions.

The inequality functionals exploit that the weight is independent of space:
every weighted space-time integral factors into a weight profile in t times
the per-slice squared norms collected in an :class:`~spdelab.solver.EnsembleTrace`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet
from .errors import PreconditionError, WeightOverflowError
from .fields import edge_differences, inner, sq_l2, trapezoid_weights
from .grids import SpatialGrid, TimeGrid
from .operators import assemble_elliptic, b_pairing, b_pairing_time_rate
from .solver import advance_block, noise_terms, run_blocks, EnsembleTrace
from .brownian import sample_increment_block
from .weights import CarlemanWeight

#: exponent cap for exp() in combined-log evaluations
_EXP_CAP = 700.0


def _combine_exponent(log_weight: np.ndarray, values: np.ndarray, weight: CarlemanWeight,
                      times: np.ndarray) -> np.ndarray:
    """exp(log_weight) * values with the exponents combined before exp().

    ``values`` must be nonnegative. Raises on true overflow of the combined
    exponent, naming the worst (s, lambda, t).
    """
    values = np.asarray(values, dtype=float)
    log_weight = np.broadcast_to(np.asarray(log_weight, dtype=float), values.shape)
    out = np.zeros_like(values)
    positive = values > 0.0
    combined = log_weight[positive] + np.log(values[positive])
    if combined.size and np.max(combined) > _EXP_CAP:
        flat_times = np.broadcast_to(times, values.shape)[positive]
        worst = float(flat_times.reshape(-1)[int(np.argmax(combined))])
        raise WeightOverflowError(weight.s, weight.lam, worst, float(np.max(combined)))
    out[positive] = np.exp(combined)
    return out


@dataclass(frozen=True)
class IdentityLedger:
    """Named accumulators of the integrated weighted identity.

    ``boundary_divergence`` is the discrete summation-by-parts defect of the
    divergence term; it is zero to round-off for Dirichlet fields. The
    ``sto_*`` columns are the Monte Carlo means of the martingale pairings,
    which vanish in expectation and act as Ito-sampling bug detectors.
    """

    lhs_main: float
    lhs_low: float
    boundary_divergence: float
    time_boundary: float
    gradient_energy: float
    zero_order: float
    square_term: float
    sto_main_mean: float
    sto_main_stderr: float
    sto_low_mean: float
    sto_low_stderr: float
    residual: float
    scale: float
    n_paths: int

    @property
    def lhs(self) -> float:
        return self.lhs_main + self.lhs_low

    @property
    def rhs(self) -> float:
        return (
            self.boundary_divergence
            + self.time_boundary
            + self.gradient_energy
            + self.zero_order
            + self.square_term
        )


def integrated_identity_residual(
    y0: np.ndarray,
    coeffs: CoefficientSet,
    weight: CarlemanWeight,
    grid: SpatialGrid,
    timegrid: TimeGrid,
    delta: float,
    seed: int,
    n_paths: int,
    workers: int = 1,
) -> IdentityLedger:
    """Evaluate every term of the expectation-integrated weighted identity.

    The ensemble is produced by the package solver; v = theta*u is formed
    slice-wise. The relative residual |LHS - RHS| / max term magnitude is
    O(dt) in general and round-off-exact for time-constant weights over
    time-constant diffusion.
    """
    weight.check_budget(timegrid.times)
    k0 = timegrid.index_of(delta)
    if k0 >= timegrid.steps:
        raise PreconditionError("delta must leave at least one step up to T")
    dt = timegrid.dt
    times = timegrid.times
    theta = weight.theta(times)
    mu = np.broadcast_to(weight.rate(times), times.shape)
    mu_t = np.broadcast_to(weight.rate_t(times), times.shape)
    lam = weight.lam
    coords = grid.meshgrid()
    if grid.dimension == 2:
        workers = 1

    operators = {}

    def operator_at(k: int):
        key = k if coeffs.diffusion_time_dependent else 0
        if key not in operators:
            operators[key] = assemble_elliptic(grid, coeffs, key * dt)
        return operators[key]

    names = (
        "lhs_main", "lhs_low", "divergence", "gradient", "zero", "square",
        "sto_main", "sto_low", "e_start", "e_end",
    )
    fast = coeffs.diffusion_cross is None
    spatial_axes = tuple(range(grid.dimension))

    def edge_weights(k: int) -> list[np.ndarray]:
        from .operators import edge_diffusion_values

        return [edge_diffusion_values(grid, coeffs, k * dt, axis)[..., None]
                for axis in range(grid.dimension)]

    def block_fn_fast(indices: range):
        # all pairings reduce to theta-weighted combinations of unweighted
        # u-quantities; edge differences, L2 sums and A-applications are
        # carried over from the previous step instead of recomputed
        inc = sample_increment_block(seed, indices, timegrid)
        m = len(indices)
        block0 = np.broadcast_to(y0[..., None], y0.shape + (m,)).copy()
        acc = {name: np.zeros(m) for name in names}
        vol = grid.cell_volume
        b_edges = edge_weights(0)
        edges_k = None
        q_uu = None
        ge_uu = None
        for k, u_k, u_next, dB in advance_block(block0, coeffs, grid, timegrid, inc):
            if k < k0:
                continue
            t_k = k * dt
            if coeffs.diffusion_time_dependent:
                b_edges = edge_weights(k)
            if edges_k is None:
                edges_k = [edge_differences(u_k, grid, a) for a in spatial_axes]
                q_uu = vol * np.sum(u_k * u_k, axis=spatial_axes)
                ge_uu = sum(vol * np.sum(b * e * e, axis=spatial_axes)
                            for b, e in zip(b_edges, edges_k))
            edges_n = [edge_differences(u_next, grid, a) for a in spatial_axes]
            ge_un = sum(vol * np.sum(b * ek * en, axis=spatial_axes)
                        for b, ek, en in zip(b_edges, edges_k, edges_n))
            ge_nn = sum(vol * np.sum(b * en * en, axis=spatial_axes)
                        for b, en in zip(b_edges, edges_n))
            au = operator_at(k).apply(u_k)
            r_uu = vol * np.sum(au * u_k, axis=spatial_axes)
            r_un = vol * np.sum(au * u_next, axis=spatial_axes)
            s_aa = vol * np.sum(au * au, axis=spatial_axes)
            q_un = vol * np.sum(u_k * u_next, axis=spatial_axes)
            q_nn = vol * np.sum(u_next * u_next, axis=spatial_axes)
            th2 = theta[k] * theta[k]
            d_au = (r_un - r_uu) - dt * s_aa          # <au, du - au dt>
            d_u = (q_un - q_uu) - dt * r_uu           # <u, du - au dt>
            acc["lhs_main"] += -th2 * (d_au + mu[k] * d_u)
            acc["lhs_low"] += 0.25 * lam * th2 * d_u
            # summation-by-parts defect of the divergence term (0 to round-off)
            acc["divergence"] += theta[k] * (
                theta[k + 1] * (r_un + ge_un) - theta[k] * (r_uu + ge_uu)
            )
            acc["divergence"] += 0.25 * lam * dt * th2 * (r_uu + ge_uu)
            gb_dvdv = (theta[k + 1] ** 2 * ge_nn - 2.0 * theta[k] * theta[k + 1] * ge_un
                       + th2 * ge_uu)
            acc["gradient"] += -(
                0.5 * gb_dvdv
                + 0.5 * dt * th2 * b_pairing_time_rate(u_k, u_k, grid, coeffs, t_k, dt)
                - 0.25 * lam * dt * th2 * ge_uu
            )
            qv = theta[k + 1] ** 2 * q_nn - 2.0 * theta[k] * theta[k + 1] * q_un + th2 * q_uu
            acc["zero"] += (
                (0.5 * mu_t[k] - 0.25 * lam * mu[k]) * th2 * q_uu * dt
                + (0.5 * mu[k] - 0.125 * lam) * qv
            )
            acc["square"] += th2 * (s_aa + 2.0 * mu[k] * r_uu + mu[k] ** 2 * q_uu) * dt
            if k == k0:
                acc["e_start"] = th2 * (ge_uu + (0.25 * lam - mu[k]) * q_uu)
            if coeffs.has_noise():
                noise = noise_terms(coeffs, grid, t_k, u_k, coords)
                n_au = vol * np.sum(au * noise, axis=spatial_axes)
                n_u = vol * np.sum(u_k * noise, axis=spatial_axes)
                acc["sto_main"] += -th2 * (n_au + mu[k] * n_u) * dB
                acc["sto_low"] += 0.25 * lam * th2 * n_u * dB
            if k == timegrid.steps - 1:
                th2_end = theta[k + 1] ** 2
                acc["e_end"] = th2_end * (ge_nn + (0.25 * lam - mu[k + 1]) * q_nn)
            edges_k, q_uu, ge_uu = edges_n, q_nn, ge_nn
        return acc

    def block_fn_general(indices: range):
        inc = sample_increment_block(seed, indices, timegrid)
        m = len(indices)
        block0 = np.broadcast_to(y0[..., None], y0.shape + (m,)).copy()
        acc = {name: np.zeros(m) for name in names}
        for k, u_k, u_next, dB in advance_block(block0, coeffs, grid, timegrid, inc):
            if k < k0:
                continue
            t_k = k * dt
            a_op = operator_at(k)
            au_k = a_op.apply(u_k)
            v_k = theta[k] * u_k
            av_k = theta[k] * au_k
            v_next = theta[k + 1] * u_next
            dv = v_next - v_k
            d_k = (u_next - u_k) - au_k * dt
            main_factor = -(av_k + mu[k] * v_k)
            acc["lhs_main"] += inner(main_factor, theta[k] * d_k, grid)
            acc["lhs_low"] += inner(0.25 * lam * v_k, theta[k] * d_k, grid)
            acc["divergence"] += inner(av_k, dv, grid) + b_pairing(v_k, dv, grid, coeffs, t_k)
            acc["divergence"] += 0.25 * lam * dt * (
                inner(av_k, v_k, grid) + b_pairing(v_k, v_k, grid, coeffs, t_k)
            )
            if k == k0:
                acc["e_start"] = (
                    b_pairing(v_k, v_k, grid, coeffs, t_k)
                    - mu[k] * sq_l2(v_k, grid)
                    + 0.25 * lam * sq_l2(v_k, grid)
                )
            acc["gradient"] += -(
                0.5 * b_pairing(dv, dv, grid, coeffs, t_k)
                + 0.5 * dt * b_pairing_time_rate(v_k, v_k, grid, coeffs, t_k, dt)
                - 0.25 * lam * dt * b_pairing(v_k, v_k, grid, coeffs, t_k)
            )
            qv = sq_l2(dv, grid)
            acc["zero"] += (
                0.5 * mu_t[k] * sq_l2(v_k, grid) * dt
                - 0.25 * lam * mu[k] * sq_l2(v_k, grid) * dt
                + 0.5 * mu[k] * qv
                - 0.125 * lam * qv
            )
            acc["square"] += sq_l2(av_k + mu[k] * v_k, grid) * dt
            if coeffs.has_noise():
                noise = noise_terms(coeffs, grid, t_k, u_k, coords)
                acc["sto_main"] += inner(main_factor, theta[k] * noise, grid) * dB
                acc["sto_low"] += inner(0.25 * lam * v_k, theta[k] * noise, grid) * dB
            if k == timegrid.steps - 1:
                t_end = (k + 1) * dt
                acc["e_end"] = (
                    b_pairing(v_next, v_next, grid, coeffs, t_end)
                    - mu[k + 1] * sq_l2(v_next, grid)
                    + 0.25 * lam * sq_l2(v_next, grid)
                )
        return acc

    block_fn = block_fn_fast if fast else block_fn_general
    blocks = run_blocks(n_paths, block_fn, workers=workers, block_size=1024)
    merged = {name: np.concatenate([b[name] for b in blocks]) for name in names}

    def mean(name: str) -> float:
        return float(np.mean(merged[name]))

    time_boundary = 0.5 * (mean("e_end") - mean("e_start"))
    lhs_main = mean("lhs_main")
    lhs_low = mean("lhs_low")
    divergence = mean("divergence")
    gradient = mean("gradient")
    zero = mean("zero")
    square = mean("square")
    lhs_total = lhs_main + lhs_low
    rhs_total = divergence + time_boundary + gradient + zero + square
    scale = max(
        abs(lhs_main), abs(lhs_low), abs(time_boundary), abs(gradient),
        abs(zero), abs(square), 1e-300,
    )
    rootm = np.sqrt(max(n_paths, 1))
    return IdentityLedger(
        lhs_main=lhs_main,
        lhs_low=lhs_low,
        boundary_divergence=divergence,
        time_boundary=time_boundary,
        gradient_energy=gradient,
        zero_order=zero,
        square_term=square,
        sto_main_mean=mean("sto_main"),
        sto_main_stderr=float(np.std(merged["sto_main"])) / rootm,
        sto_low_mean=mean("sto_low"),
        sto_low_stderr=float(np.std(merged["sto_low"])) / rootm,
        residual=abs(lhs_total - rhs_total) / scale,
        scale=scale,
        n_paths=n_paths,
    )


def _window(trace: EnsembleTrace, delta: float) -> tuple[int, np.ndarray, np.ndarray]:
    k0 = trace.timegrid.index_of(delta)
    times = trace.timegrid.times[k0:]
    w = trapezoid_weights(times.size, trace.timegrid.dt)
    return k0, times, w


def carleman_lhs(
    trace: EnsembleTrace, weight: CarlemanWeight, delta: float
) -> tuple[float, float]:
    """Weighted gradient and zero-order space-time integrals of the solution.

    Returns (lam * E int theta^2 |grad y|^2, s*lam^2 * E int phi theta^2 y^2)
    over [delta, T] x G, trapezoid in time.
    """
    k0, times, w = _window(trace, delta)
    log_th2 = 2.0 * weight.log_theta(times)
    mean_h1 = np.mean(trace.sq_h1[k0:], axis=1)
    mean_l2 = np.mean(trace.sq_l2[k0:], axis=1)
    grad_series = _combine_exponent(log_th2, mean_h1, weight, times)
    zero_series = _combine_exponent(log_th2, weight.phi(times) * mean_l2, weight, times)
    lhs_grad = weight.lam * float(w @ grad_series)
    lhs_zero = weight.s * weight.lam**2 * float(w @ zero_series)
    return lhs_grad, lhs_zero


@dataclass(frozen=True)
class CarlemanRhs:
    """The five right-hand components (no absorbed constant)."""

    terminal_grad: float
    initial_grad: float
    terminal_zero: float
    initial_zero: float
    data: float

    @property
    def terminal(self) -> float:
        return self.terminal_grad + self.terminal_zero

    @property
    def initial(self) -> float:
        return self.initial_grad + self.initial_zero

    @property
    def total(self) -> float:
        return self.terminal + self.initial + self.data


def _full_trapezoid_sq(values: np.ndarray, grid: SpatialGrid) -> float:
    """Trapezoid of values**2 over boundary-inclusive nodes (data need not
    vanish on the boundary)."""
    total = np.square(np.asarray(values, dtype=float))
    for axis in range(grid.dimension):
        n_full = grid.interior_points[axis] + 2
        w = np.ones(n_full)
        w[0] = w[-1] = 0.5
        shape = [1] * total.ndim
        shape[axis] = n_full
        total = total * w.reshape(shape)
    return float(np.sum(total) * grid.cell_volume)


def _full_gradient(values: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    """Centered/one-sided gradient of boundary-inclusive samples."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    sl = [slice(None)] * values.ndim

    def take(a, b):
        idx = list(sl)
        idx[axis] = slice(a, b)
        return values[tuple(idx)]

    n = values.shape[axis]
    mid = list(sl)
    mid[axis] = slice(1, n - 1)
    out[tuple(mid)] = (take(2, n) - take(0, n - 2)) / (2.0 * spacing)
    first = list(sl)
    first[axis] = slice(0, 1)
    out[tuple(first)] = (-3.0 * take(0, 1) + 4.0 * take(1, 2) - take(2, 3)) / (2.0 * spacing)
    last = list(sl)
    last[axis] = slice(n - 1, n)
    out[tuple(last)] = (3.0 * take(n - 1, n) - 4.0 * take(n - 2, n - 1)
                        + take(n - 3, n - 2)) / (2.0 * spacing)
    return out


def carleman_rhs(
    trace: EnsembleTrace,
    weight: CarlemanWeight,
    delta: float,
    coeffs: CoefficientSet,
) -> CarlemanRhs:
    """Terminal/initial weighted norms plus the weighted data integral.

    The data integral samples f and g on boundary-inclusive nodes (sources
    need not vanish on the boundary) with full trapezoid weights.
    """
    grid = trace.grid
    k0, times, w = _window(trace, delta)
    n = trace.timegrid.steps

    def boundary_terms(k: int) -> tuple[float, float]:
        t = trace.timegrid.times[k]
        log_th2 = 2.0 * float(weight.log_theta(t))
        phi = float(weight.phi(t))
        grad = float(_combine_exponent(log_th2, np.mean(trace.sq_h1[k]), weight, t))
        zero = weight.s * weight.lam * phi * float(
            _combine_exponent(log_th2, np.mean(trace.sq_l2[k]), weight, t)
        )
        return grad, zero

    terminal_grad, terminal_zero = boundary_terms(n)
    initial_grad, initial_zero = boundary_terms(k0)

    data_series = np.zeros(times.size)
    if coeffs.forcing is not None or coeffs.noise_forcing is not None:
        coords = grid.meshgrid(include_boundary=True)
        for j, t in enumerate(times):
            total = 0.0
            if coeffs.forcing is not None:
                total += _full_trapezoid_sq(coeffs.forcing_at(float(t), coords), grid)
            if coeffs.noise_forcing is not None:
                g = coeffs.noise_forcing_at(float(t), coords)
                total += _full_trapezoid_sq(g, grid)
                for axis in range(grid.dimension):
                    total += _full_trapezoid_sq(
                        _full_gradient(g, grid.spacings[axis], axis), grid)
            data_series[j] = total
    phi = weight.phi(times)
    log_th2 = 2.0 * weight.log_theta(times)
    weighted = _combine_exponent(log_th2, (1.0 + phi) * data_series, weight, times)
    data = float(w @ weighted)
    return CarlemanRhs(
        terminal_grad=terminal_grad,
        initial_grad=initial_grad,
        terminal_zero=terminal_zero,
        initial_zero=initial_zero,
        data=data,
    )


@dataclass(frozen=True)
class SweepRow:
    s: float
    lam: float
    lhs_grad: float
    lhs_zero: float
    rhs_terminal: float
    rhs_initial: float
    rhs_data: float
    ratio: float
    mc_stderr: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    skipped: tuple[tuple[float, float, str], ...]
    delta: float
    psi_kind: str

    def ratios_by_lambda(self) -> dict[float, list[SweepRow]]:
        by_lam: dict[float, list[SweepRow]] = {}
        for row in self.rows:
            by_lam.setdefault(row.lam, []).append(row)
        return by_lam


SWEEP_CSV_HEADER = "s,lambda,lhs_grad,lhs_zero,rhs_terminal,rhs_initial,rhs_data,ratio,mc_stderr"


def carleman_sweep(
    trace: EnsembleTrace,
    s_values: list[float],
    lam_values: list[float],
    delta: float,
    coeffs: CoefficientSet,
    psi_kind: str = "increasing",
    offset: float = 0.0,
) -> SweepResult:
    """Evaluate lhs/rhs ratios on an (s, lambda) lattice over one ensemble.

    The trajectories do not depend on (s, lambda), so one trace serves the
    whole sweep. Overflowing cells are flagged and skipped, never silently
    dropped (they appear in ``skipped`` with the reason).
    """
    if sorted(s_values) != list(s_values) or sorted(lam_values) != list(lam_values):
        raise PreconditionError("sweep lists must be sorted ascending")
    rows: list[SweepRow] = []
    skipped: list[tuple[float, float, str]] = []
    k0, times, w = _window(trace, delta)
    for lam in lam_values:
        for s in s_values:
            weight = CarlemanWeight(psi_kind, lam, s, offset)
            try:
                lhs_grad, lhs_zero = carleman_lhs(trace, weight, delta)
                rhs = carleman_rhs(trace, weight, delta, coeffs)
                log_th2 = 2.0 * weight.log_theta(times)
                phi = weight.phi(times)
                per_path = (
                    weight.lam * (w @ _combine_exponent(
                        log_th2[:, None], trace.sq_h1[k0:], weight, times[:, None]))
                    + weight.s * weight.lam**2 * (w @ _combine_exponent(
                        log_th2[:, None], phi[:, None] * trace.sq_l2[k0:], weight,
                        times[:, None]))
                )
            except WeightOverflowError as exc:
                skipped.append((s, lam, str(exc)))
                continue
            denom = rhs.total
            ratio = (lhs_grad + lhs_zero) / denom if denom > 0 else 0.0
            stderr = float(np.std(per_path)) / np.sqrt(max(trace.n_paths, 1))
            rows.append(SweepRow(
                s=s, lam=lam, lhs_grad=lhs_grad, lhs_zero=lhs_zero,
                rhs_terminal=rhs.terminal, rhs_initial=rhs.initial,
                rhs_data=rhs.data, ratio=ratio,
                mc_stderr=stderr / denom if denom > 0 else 0.0,
            ))
    return SweepResult(rows=tuple(rows), skipped=tuple(skipped), delta=delta, psi_kind=psi_kind)
