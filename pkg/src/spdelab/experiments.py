"""Named batch experiments dispatched by the CLI harness.

Every experiment is a pure function of (config, seed): path streams are keyed
by (seed, path index), reductions are index-ordered, and CSV floats use a
fixed shortest-roundtrip format, so identical configs reproduce identical
bytes under any worker count.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .backward import (
    beta_bound,
    build_path_operator,
    fit_holder_rate,
    interpolation_ratio,
    make_observation,
    theta_from_formula,
    tikhonov_backward,
)
from .brownian import BrownianPath, DRIFT_STREAM, path_generator, sample_brownian
from .carleman import SWEEP_CSV_HEADER, carleman_sweep, integrated_identity_residual
from .coefficients import CoefficientSet, check_ellipticity, constant, source_free
from .config import ExperimentConfig
from .errors import PreconditionError
from .fields import ScalarField, sq_l2
from .grids import SpatialGrid, TimeGrid
from .inverse_source import (
    CutoffChi,
    SourceSpec,
    discriminability_gram,
    forward_source,
    least_squares_source_recovery,
    normal_flux,
    orthonormal_time_basis,
    transform_chain,
    volterra_identity_check,
    zero_flux_implies_zero_source_probe,
)
from .presets import coefficient_preset, initial_condition, modulator_preset
from .scalar_sde import euler_maruyama, ito_residual_scalar, toy_carleman_check
from .solver import (
    ensemble_mean_std,
    ensemble_trace,
    energy_bound_check,
    solve_forward,
    weak_residual,
)
from .weights import CarlemanWeight


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


@dataclass
class Table:
    name: str
    header: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *row) -> None:
        if len(row) != len(self.header):
            raise PreconditionError(f"row width {len(row)} != header width {len(self.header)}")
        self.rows.append(row)

    def has_nan(self) -> bool:
        for row in self.rows:
            for cell in row:
                if isinstance(cell, (float, np.floating)) and math.isnan(float(cell)):
                    return True
        return False

    def csv_text(self) -> str:
        lines = [",".join(self.header)]
        for row in self.rows:
            lines.append(",".join(fmt(c) for c in row))
        return "\n".join(lines) + "\n"


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str


@dataclass
class ExperimentOutcome:
    tables: list[Table] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def check(self, name: str, passed: bool, detail: str) -> None:
        self.verdicts.append(Verdict(name, bool(passed), detail))


@dataclass
class RunReport:
    config: ExperimentConfig
    outcome: ExperimentOutcome
    wall_clock: float
    nan_tables: list[str]

    @property
    def passed(self) -> bool:
        return not self.nan_tables and all(v.passed for v in self.outcome.verdicts)

    def text(self) -> str:
        lines = ["spdelab run report", f"version: {__version__}",
                 f"experiment: {self.config.name}", f"seed: {self.config.seed}", ""]
        lines.append("[config]")
        lines.extend(self.config.echo_lines())
        lines.append("")
        lines.append("[tables]")
        for t in self.outcome.tables:
            lines.append(f"{t.name}: {len(t.rows)} rows -> {t.name}.csv")
        lines.append("")
        lines.append("[verdicts]")
        for v in self.outcome.verdicts:
            lines.append(f"{'PASS' if v.passed else 'FAIL'} {v.name}: {v.detail}")
        if self.nan_tables:
            lines.append(f"FAIL nan-scan: non-finite values in {', '.join(self.nan_tables)}")
        else:
            lines.append("PASS nan-scan: all table values finite")
        if self.outcome.notes:
            lines.append("")
            lines.append("[notes]")
            lines.extend(self.outcome.notes)
        lines.append("")
        lines.append(f"wall_clock_seconds: {self.wall_clock:.3f}")
        return "\n".join(lines) + "\n"


def _grid_from(cfg: ExperimentConfig) -> SpatialGrid:
    if cfg.get("grid", "dimension") == 1:
        return SpatialGrid.interval(cfg.get("grid", "length"), cfg.get("grid", "interior_points"))
    return SpatialGrid.rectangle(
        (cfg.get("grid", "length"), cfg.get("grid", "length2")),
        (cfg.get("grid", "interior_points"), cfg.get("grid", "interior_points2")),
    )


def _timegrid_from(cfg: ExperimentConfig, **marks: str) -> TimeGrid:
    marked = {name: cfg.get("time", key) for name, key in marks.items()}
    return TimeGrid(cfg.get("time", "horizon"), cfg.get("time", "steps"), marked)


def _zero_path(timegrid: TimeGrid) -> BrownianPath:
    return BrownianPath(timegrid, np.zeros(timegrid.steps), seed=0, path_index=0)


def _fitted_order(scales: list[float], errors: list[float]) -> float:
    lx = np.log(np.asarray(scales, dtype=float))
    ly = np.log(np.maximum(np.asarray(errors, dtype=float), 1e-300))
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


# --------------------------------------------------------------------------
# experiments


def run_toy_carleman(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    tg = TimeGrid(cfg.get("time", "horizon"), cfg.get("time", "steps"))
    cases = cfg.get("ensemble", "paths")
    table = Table("toy_carleman", ("case", "sup_drift", "varsigma", "lhs", "rhs",
                                   "bounded", "monotone"))
    all_ok = True
    for i in range(cases):
        gen = path_generator(cfg.seed, DRIFT_STREAM + i)
        drift = gen.uniform(-1.0, 1.0, tg.steps)
        x0 = gen.uniform(0.5, 2.0)
        res = toy_carleman_check(drift, x0, tg, varsigma=float(np.max(np.abs(drift))),
                                 method="exact")
        table.add(i, res.sup_drift, res.varsigma, res.lhs, res.rhs, res.passed, res.monotone)
        all_ok = all_ok and res.passed and res.monotone
    out.tables.append(table)
    out.check("weighted-decay-bound", all_ok,
              f"{cases} randomized drifts, exact integrator, bound and monotonicity hold")
    const = toy_carleman_check(0.7, 1.3, tg, varsigma=0.7, method="exact")
    equal = abs(const.lhs - const.rhs) <= 1e-12 * const.rhs
    out.check("constant-drift-equality", equal,
              f"a = varsigma = 0.7: lhs {const.lhs:.12g} vs rhs {const.rhs:.12g}")
    return out


def run_ito_check(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    tg = TimeGrid(cfg.get("time", "horizon"), cfg.get("time", "steps"))
    cases = cfg.get("ensemble", "paths")
    table = Table("ito_residuals", ("case", "drift", "vol", "residual"))
    worst = 0.0
    for i in range(cases):
        gen = path_generator(cfg.seed, DRIFT_STREAM + i)
        a = gen.uniform(-0.5, 0.5)
        b = gen.uniform(0.05, 0.4)
        path = sample_brownian(cfg.seed, i, tg)
        traj = euler_maruyama(a, b, 1.0, path)
        phi = a * traj.values[:-1]
        psi = b * traj.values[:-1]
        res = ito_residual_scalar(traj, phi, psi, path)
        worst = max(worst, res)
        table.add(i, a, b, res)
    out.tables.append(table)
    out.check("discrete-square-identity", worst <= 1e-12,
              f"max residual {worst:.3e} over {cases} trajectories (tolerance 1e-12)")
    return out


def run_forward_convergence(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    heat = coefficient_preset("heat")
    t_eval = 0.1

    # spatial refinement at a time step fine enough not to pollute the slope
    spatial = Table("spatial_convergence", ("interior_points", "h", "l2_error"))
    errs, hs = [], []
    n_steps = 65536
    for n in (15, 31, 63):
        grid = SpatialGrid.interval(1.0, n)
        tg = TimeGrid(t_eval, n_steps)
        x = grid.axis_nodes(0)
        y0 = ScalarField(grid, np.sin(np.pi * x))
        traj = solve_forward(y0, heat, _zero_path(tg), grid)
        exact = np.exp(-np.pi**2 * t_eval) * np.sin(np.pi * x)
        err = float(np.sqrt(sq_l2(traj.values[-1] - exact, grid)))
        spatial.add(n, grid.spacings[0], err)
        errs.append(err)
        hs.append(grid.spacings[0])
    spatial_order = _fitted_order(hs, errs)
    out.tables.append(spatial)
    out.check("spatial-order", spatial_order >= 1.8,
              f"fitted spatial order {spatial_order:.3f} (need >= 1.8)")

    temporal = Table("temporal_convergence", ("steps", "dt", "l2_error"))
    errs, dts = [], []
    grid = SpatialGrid.interval(1.0, 127)
    x = grid.axis_nodes(0)
    y0 = ScalarField(grid, np.sin(np.pi * x))
    mu_h = 4.0 / grid.spacings[0] ** 2 * np.sin(np.pi * grid.spacings[0] / 2.0) ** 2
    semi_exact = np.exp(-mu_h * t_eval) * np.sin(np.pi * x)
    for n_t in (32, 64, 128):
        tg = TimeGrid(t_eval, n_t)
        traj = solve_forward(y0, heat, _zero_path(tg), grid)
        err = float(np.sqrt(sq_l2(traj.values[-1] - semi_exact, grid)))
        temporal.add(n_t, tg.dt, err)
        errs.append(err)
        dts.append(tg.dt)
    temporal_order = _fitted_order(dts, errs)
    out.tables.append(temporal)
    out.check("temporal-order", temporal_order >= 0.8,
              f"fitted temporal order {temporal_order:.3f} (need >= 0.8)")

    # mean-field: additive noise only; ensemble mean tracks the noise-free solve
    grid = SpatialGrid.interval(1.0, cfg.get("grid", "interior_points"))
    tg = TimeGrid(1.0, cfg.get("time", "steps"))
    x = grid.axis_nodes(0)
    y0 = ScalarField(grid, np.sin(np.pi * x))
    additive = CoefficientSet(
        diffusion=(constant(1.0),), sigma=1.0,
        noise_forcing=lambda t, xx: 0.5 * np.sin(np.pi * np.asarray(xx)),
    )
    m_paths = cfg.get("ensemble", "paths")
    mean, std = ensemble_mean_std(y0, additive, grid, tg, cfg.seed, m_paths,
                                  workers=cfg.workers)
    det = solve_forward(y0, coefficient_preset("heat"), _zero_path(tg), grid)
    worst_ratio = 0.0
    for k in range(tg.steps + 1):
        diff = float(np.sqrt(sq_l2(mean[k] - det.values[k], grid)))
        agg_sd = float(np.sqrt(sq_l2(std[k], grid)))
        bound = 3.0 * agg_sd / np.sqrt(m_paths)
        if bound > 0:
            worst_ratio = max(worst_ratio, diff / bound)
        elif diff > 0:
            worst_ratio = np.inf
    out.check("mean-field", worst_ratio <= 1.0,
              f"max slice |mean-det|_L2 at {worst_ratio:.3f} of the 3*sd/sqrt(M) budget, "
              f"M = {m_paths}")

    # weak-solution residual: deterministic and stochastic refinement orders
    weak = Table("weak_residual", ("mode", "steps", "residual"))
    grid = SpatialGrid.interval(1.0, 63)
    x = grid.axis_nodes(0)
    y0 = ScalarField(grid, np.sin(np.pi * x))
    p = ScalarField(grid, np.sin(np.pi * x))
    det_errs, det_dts = [], []
    for n_t in (64, 128, 256):
        tg = TimeGrid(1.0, n_t)
        traj = solve_forward(y0, heat, _zero_path(tg), grid)
        r = weak_residual(traj, p, 1.0, heat)
        weak.add("deterministic", n_t, r)
        det_errs.append(r)
        det_dts.append(tg.dt)
    det_order = _fitted_order(det_dts, det_errs)
    sto = coefficient_preset("multiplicative")
    fine = sample_brownian(cfg.seed, 0, TimeGrid(1.0, 256))
    sto_errs, sto_dts = [], []
    for factor in (4, 2, 1):
        path = fine.coarsen(factor) if factor > 1 else fine
        traj = solve_forward(y0, sto, path, grid)
        r = weak_residual(traj, p, 1.0, sto)
        weak.add("stochastic", path.timegrid.steps, r)
        sto_errs.append(r)
        sto_dts.append(path.timegrid.dt)
    sto_order = _fitted_order(sto_dts, sto_errs)
    out.tables.append(weak)
    out.check("weak-residual-deterministic-order", det_order >= 0.8,
              f"fitted order {det_order:.3f} (need >= 0.8)")
    out.check("weak-residual-stochastic-order", sto_order >= 0.4,
              f"fitted order {sto_order:.3f} (need >= 0.4)")
    return out


def run_energy_bound(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    preset = cfg.get("coefficients", "preset")
    coeffs = coefficient_preset(preset)
    table = Table("energy_ratios", ("interior_points", "steps", "paths",
                                    "lhs_sup", "lhs_l2", "rhs", "ratio_sup", "ratio_total"))
    base_n = cfg.get("grid", "interior_points")
    base_steps = cfg.get("time", "steps")
    ratios = []
    for n, steps in ((base_n, base_steps), (2 * base_n + 1, 2 * base_steps)):
        grid = SpatialGrid.interval(cfg.get("grid", "length"), n)
        tg = TimeGrid(cfg.get("time", "horizon"), steps)
        y0 = initial_condition(cfg.get("initial", "kind"), grid,
                               cfg.get("initial", "amplitude"), cfg.seed)
        for m in (100, 400):
            trace = ensemble_trace(y0, coeffs, grid, tg, cfg.seed, m, workers=cfg.workers)
            rep = energy_bound_check(trace, y0, coeffs)
            table.add(n, steps, m, rep.lhs_sup, rep.lhs_l2, rep.rhs,
                      rep.ratio_sup, rep.ratio_total)
            ratios.append(rep.ratio_total)
    out.tables.append(table)
    med = float(np.median(ratios))
    stable = all(0.5 * med <= r <= 1.5 * med for r in ratios)
    out.check("ratio-stability", stable,
              f"ratio_total in [{min(ratios):.4f}, {max(ratios):.4f}], median {med:.4f}, "
              "all within +-50% of median")
    return out


def run_identity_check(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    heat = coefficient_preset("heat")
    weight = CarlemanWeight(cfg.get("weights", "psi"), 1.0, 1.0, cfg.get("weights", "offset"))
    delta = cfg.get("time", "delta")
    table = Table("identity_ledger", (
        "label", "interior_points", "steps", "paths", "lhs_main", "lhs_low",
        "boundary_divergence", "time_boundary", "gradient_energy", "zero_order",
        "square_term", "residual"))

    n = cfg.get("grid", "interior_points")
    steps = cfg.get("time", "steps")
    m_paths = cfg.get("ensemble", "paths")
    grid = SpatialGrid.interval(cfg.get("grid", "length"), n)
    tg = TimeGrid(cfg.get("time", "horizon"), steps)
    y0 = initial_condition("sine", grid)
    led = integrated_identity_residual(y0.values, heat, weight, grid, tg, delta,
                                       cfg.seed, m_paths, workers=cfg.workers)
    table.add("deterministic", n, steps, m_paths, led.lhs_main, led.lhs_low,
              led.boundary_divergence, led.time_boundary, led.gradient_energy,
              led.zero_order, led.square_term, led.residual)

    grid_f = SpatialGrid.interval(cfg.get("grid", "length"), 2 * n + 1)
    tg_f = TimeGrid(cfg.get("time", "horizon"), 2 * steps)
    y0_f = initial_condition("sine", grid_f)
    led_f = integrated_identity_residual(y0_f.values, heat, weight, grid_f, tg_f, delta,
                                         cfg.seed, 100, workers=cfg.workers)
    table.add("deterministic-refined", 2 * n + 1, 2 * steps, 100, led_f.lhs_main,
              led_f.lhs_low, led_f.boundary_divergence, led_f.time_boundary,
              led_f.gradient_energy, led_f.zero_order, led_f.square_term, led_f.residual)

    out.check("identity-residual", led.residual <= 0.05,
              f"relative residual {led.residual:.5f} at (N={steps}, n={n}) (need <= 0.05)")
    out.check("identity-refinement", led_f.residual < led.residual,
              f"refined residual {led_f.residual:.5f} < {led.residual:.5f}")
    out.check("divergence-term-zero", abs(led.boundary_divergence) <= 1e-10 * led.scale,
              f"summation-by-parts defect {led.boundary_divergence:.3e} against scale "
              f"{led.scale:.3e}")

    sto = coefficient_preset("multiplicative")
    grid_s = SpatialGrid.interval(1.0, 65)
    tg_s = TimeGrid(1.0, 256)
    y0_s = initial_condition("sine", grid_s)
    led_s = integrated_identity_residual(y0_s.values, sto, weight, grid_s, tg_s, delta,
                                         cfg.seed, 2000, workers=cfg.workers)
    table.add("stochastic", 65, 256, 2000, led_s.lhs_main, led_s.lhs_low,
              led_s.boundary_divergence, led_s.time_boundary, led_s.gradient_energy,
              led_s.zero_order, led_s.square_term, led_s.residual)
    sto_table = Table("identity_stochastic_columns",
                      ("column", "mean", "stderr", "z_score"))
    z_main = abs(led_s.sto_main_mean) / led_s.sto_main_stderr if led_s.sto_main_stderr else 0.0
    z_low = abs(led_s.sto_low_mean) / led_s.sto_low_stderr if led_s.sto_low_stderr else 0.0
    sto_table.add("martingale-main", led_s.sto_main_mean, led_s.sto_main_stderr, z_main)
    sto_table.add("martingale-low", led_s.sto_low_mean, led_s.sto_low_stderr, z_low)
    out.tables.append(table)
    out.tables.append(sto_table)
    out.check("martingale-columns", max(z_main, z_low) <= 4.0,
              f"max |mean|/stderr = {max(z_main, z_low):.2f} (need <= 4, CLT bound)")
    return out


def run_carleman_sweep(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    preset = cfg.get("coefficients", "preset")
    coeffs = coefficient_preset(preset)
    grid = _grid_from(cfg)
    tg = _timegrid_from(cfg, delta="delta")
    delta = tg.marked_times["delta"]
    y0 = initial_condition(cfg.get("initial", "kind"), grid,
                           cfg.get("initial", "amplitude"), cfg.seed)
    check_ellipticity(coeffs, grid, tg).raise_if_failed()
    m_paths = cfg.get("ensemble", "paths")
    trace = ensemble_trace(y0, coeffs, grid, tg, cfg.seed, m_paths, workers=cfg.workers)
    sweep = carleman_sweep(trace, cfg.get("weights", "s_values"),
                           cfg.get("weights", "lambda_values"), delta, coeffs,
                           psi_kind=cfg.get("weights", "psi"),
                           offset=cfg.get("weights", "offset"))
    table = Table("carleman_sweep", tuple(SWEEP_CSV_HEADER.split(",")))
    for row in sweep.rows:
        table.add(row.s, row.lam, row.lhs_grad, row.lhs_zero, row.rhs_terminal,
                  row.rhs_initial, row.rhs_data, row.ratio, row.mc_stderr)
    out.tables.append(table)
    for s, lam, reason in sweep.skipped:
        out.notes.append(f"overflow-skipped cell (s={s:g}, lambda={lam:g}): {reason}")

    finite = all(math.isfinite(r.ratio) for r in sweep.rows)
    out.check("ratios-finite", finite and len(sweep.rows) > 0,
              f"{len(sweep.rows)} cells, all ratios finite, preset {preset!r}")
    doubling_ok = True
    detail = []
    for lam, rows in sweep.ratios_by_lambda().items():
        by_s = {r.s: r.ratio for r in rows}
        for s in by_s:
            if 2 * s in by_s and by_s[s] > 0:
                q = by_s[2 * s] / by_s[s]
                detail.append(f"lambda={lam:g}: ratio(2*{s:g})/ratio({s:g}) = {q:.3f}")
                doubling_ok = doubling_ok and q <= 2.0
    out.check("s-doubling-bounded", doubling_ok, "; ".join(detail) or "no doubled cells")

    # ratio is invariant under scaling the data (solve is linear, both sides
    # are homogeneous of degree two)
    y0_scaled = ScalarField(grid, 10.0 * y0.values)
    trace_scaled = ensemble_trace(y0_scaled, coeffs, grid, tg, cfg.seed,
                                  min(m_paths, 200), workers=cfg.workers)
    trace_base = ensemble_trace(y0, coeffs, grid, tg, cfg.seed,
                                min(m_paths, 200), workers=cfg.workers)
    s0 = cfg.get("weights", "s_values")[0]
    lam0 = cfg.get("weights", "lambda_values")[0]
    sweep_a = carleman_sweep(trace_base, [s0], [lam0], delta, coeffs,
                             psi_kind=cfg.get("weights", "psi"))
    sweep_b = carleman_sweep(trace_scaled, [s0], [lam0], delta, coeffs,
                             psi_kind=cfg.get("weights", "psi"))
    if preset == "heat":
        ra, rb = sweep_a.rows[0].ratio, sweep_b.rows[0].ratio
        rel = abs(ra - rb) / ra if ra else 0.0
        out.check("scaling-invariance", rel <= 1e-8,
                  f"ratio({s0:g},{lam0:g}) changes by {rel:.2e} under y0 -> 10*y0")
    else:
        # data terms (f, g) stay fixed while y0 scales, so exact invariance
        # only holds for the source-free preset; report the drift instead
        ra, rb = sweep_a.rows[0].ratio, sweep_b.rows[0].ratio
        out.notes.append(
            f"scaling probe (data not scaled with y0): ratio {ra:.6g} -> {rb:.6g}")
    return out


N_INTERPOLATION_DRAWS = 50


def run_interpolation(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    theta = theta_from_formula(cfg.get("backward", "theta_lambda"),
                               cfg.get("time", "t0"), cfg.get("time", "t1"),
                               cfg.get("backward", "theta_c"))

    # closed-form single-mode check on a fine deterministic grid
    grid_cf = SpatialGrid.interval(1.0, 127)
    tg_cf = TimeGrid(1.0, 4096, {"t0": 0.5})
    heat = coefficient_preset("heat")
    y0_cf = initial_condition("sine", grid_cf)
    trace_cf = ensemble_trace(y0_cf, heat, grid_cf, tg_cf, cfg.seed, 1)
    res_cf = interpolation_ratio(trace_cf, 0.5, 0.5)
    mu = np.pi**2
    num = np.exp(-mu * 0.5) / np.sqrt(2.0)
    mid = np.sqrt((1.0 - np.exp(-2.0 * mu)) / (2.0 * mu)) / np.sqrt(2.0)
    terminal = np.exp(-mu) * np.sqrt(0.5 + mu / 2.0)
    ratio_cf = num / (mid**0.5 * terminal**0.5)
    rel = abs(res_cf.ratio - ratio_cf) / ratio_cf
    out.check("closed-form-heat", rel <= 0.01,
              f"discrete ratio {res_cf.ratio:.6f} vs closed form {ratio_cf:.6f} "
              f"(rel err {rel:.2e}, need <= 1%)")

    # the backward setting has multiplicative noise only; strip sources so the
    # solve is exactly linear in the initial data
    coeffs = source_free(coefficient_preset(cfg.get("coefficients", "preset")))
    grid = _grid_from(cfg)
    tg = _timegrid_from(cfg, t0="t0")
    t0 = tg.marked_times["t0"]
    m_paths = cfg.get("ensemble", "paths")
    table = Table("interpolation_ratios", ("draw", "num", "den", "ratio"))
    ratios = []
    for i in range(N_INTERPOLATION_DRAWS):
        y0 = initial_condition("random-unit", grid, 1.0, cfg.seed, index=i)
        trace = ensemble_trace(y0, coeffs, grid, tg, cfg.seed, m_paths,
                               workers=cfg.workers)
        res = interpolation_ratio(trace, t0, theta)
        ratios.append(res.ratio)
        table.add(i, res.num, res.den, res.ratio)
    out.tables.append(table)
    med = float(np.median(ratios))
    mx = float(np.max(ratios))
    out.check("ratio-bounded", mx <= 10.0 * med,
              f"max ratio {mx:.4f} <= 10x median {med:.4f} over "
              f"{N_INTERPOLATION_DRAWS} unit draws (theta = {theta.theta:.4f})")

    # kappa-homogeneity: exponents sum to one, so the ratio is scale-free
    kappa = 3.7
    y0 = initial_condition("random-unit", grid, 1.0, cfg.seed, index=0)
    y0_scaled = ScalarField(grid, kappa * y0.values)
    trace_a = ensemble_trace(y0, coeffs, grid, tg, cfg.seed, m_paths, workers=cfg.workers)
    trace_b = ensemble_trace(y0_scaled, coeffs, grid, tg, cfg.seed, m_paths,
                             workers=cfg.workers)
    res_a = interpolation_ratio(trace_a, t0, theta)
    res_b = interpolation_ratio(trace_b, t0, theta)
    rel = abs(res_a.ratio - res_b.ratio) / res_a.ratio
    out.check("kappa-homogeneity", rel <= 1e-10,
              f"ratio drifts by {rel:.2e} under y0 -> {kappa}*y0 (need <= 1e-10)")
    return out


def run_backward_rate(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    grid = _grid_from(cfg)
    tg = _timegrid_from(cfg, t0="t0", t1="t1", t2="t2")
    tg.require_order("t1", "t2", "t0")
    t0 = tg.marked_times["t0"]
    heat = coefficient_preset(cfg.get("coefficients", "preset"))
    x = grid.axis_nodes(0)
    y0 = ScalarField(grid, np.sin(np.pi * x) + 0.3 * np.sin(2.0 * np.pi * x))
    path = _zero_path(tg)
    truth = solve_forward(y0, heat, path, grid)
    op = build_path_operator(heat, path, grid, t0)
    smin = op.smallest_singular_value()
    out.check("backward-uniqueness-witness", smin > 0.0,
              f"smallest singular value {smin:.3e} > 0")

    t0_truth = truth.at_time(t0).values
    truth_norm = float(np.sqrt(sq_l2(t0_truth, grid)))
    rec = tikhonov_backward(op, make_observation(truth, 0.0, cfg.seed),
                            cfg.get("backward", "alpha"))
    err0 = float(np.sqrt(sq_l2(rec.at_t0.values - t0_truth, grid))) / truth_norm
    out.check("noise-free-recovery", err0 <= 1e-4,
              f"relative L2 error {err0:.3e} at alpha = {cfg.get('backward', 'alpha'):.1e} "
              "(need <= 1e-4)")

    reconstruction = Table("reconstruction", ("node_index", "x", "truth", "estimate"))
    for j, xx in enumerate(x):
        reconstruction.add(j, xx, t0_truth[j], rec.at_t0.values[j])
    out.tables.append(reconstruction)

    levels = cfg.get("backward", "noise_levels")
    reps = cfg.get("backward", "replicates")
    rate = Table("rate_pairs", ("delta_noise", "alpha", "err_t0", "slope_running"))
    pairs = []
    draw = 0
    for dn in levels:
        errs = []
        for _ in range(reps):
            obs = make_observation(truth, dn, cfg.seed, obs_index=draw)
            draw += 1
            r = tikhonov_backward(op, obs, dn**2)
            errs.append(float(np.sqrt(sq_l2(r.at_t0.values - t0_truth, grid))))
        err = float(np.mean(errs))
        pairs.append((dn, err))
        running = (fit_holder_rate(pairs).slope if len(pairs) >= 4
                   and max(p[0] for p in pairs) / min(p[0] for p in pairs) >= 100 else 0.0)
        rate.add(dn, dn**2, err, running)
    out.tables.append(rate)
    fit = fit_holder_rate(pairs)
    theta_fit = fit.slope
    out.check("rate-slope-range", 0.0 < theta_fit <= 1.0,
              f"fitted log-log slope {theta_fit:.4f} in (0, 1]")
    out.check("rate-endpoint-consistency", fit.endpoint_slope >= 0.9 * theta_fit,
              f"endpoint slope {fit.endpoint_slope:.4f} >= 0.9 * fitted {theta_fit:.4f}")

    # stability-modulus properties at the fitted exponent
    theta_use = min(max(theta_fit, 1e-6), 1.0)
    m_prior = cfg.get("backward", "prior_bound")
    probes = [beta_bound(m_prior, theta_use, 1.0, v) for v in (0.0, 1e-6, 1e-3, 1e-1, 1.0)]
    increasing = all(a < b for a, b in zip(probes, probes[1:]))
    out.check("beta-properties", probes[0] == 0.0 and increasing,
              "beta(0) = 0 and beta strictly increasing on the probe ladder")
    return out


def run_inverse_source_gram(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    preset = cfg.get("source", "preset")
    coeffs = coefficient_preset(preset)
    modulator = modulator_preset(preset)
    dim = 1 if preset == "source-1d" else 2
    if dim == 1:
        grid = SpatialGrid.interval(cfg.get("grid", "length"), cfg.get("grid", "interior_points"))
    else:
        grid = _grid_from(cfg)
    tg = _timegrid_from(cfg, t0="t0", t1="t1", t2="t2")
    t0 = tg.marked_times["t0"]
    path = sample_brownian(cfg.seed, 0, tg)
    basis = orthonormal_time_basis(tg, t0, cfg.get("source", "basis_size"))
    faces = tuple(cfg.get("source", "observed_faces")) or None
    if faces is not None:
        out.notes.append(f"partial-boundary observation on {', '.join(faces)} "
                         "(experiment flag; nothing asserted)")
    gram = discriminability_gram(basis, modulator, coeffs, path, grid, t0, faces=faces)
    eig_table = Table("gram_eigenvalues", ("index", "eigenvalue"))
    for i, ev in enumerate(gram.eigenvalues):
        eig_table.add(i, float(ev))
    out.tables.append(eig_table)
    out.check("gram-positive", gram.min_eigenvalue > 0.0,
              f"min eigenvalue {gram.min_eigenvalue:.3e} > 0 for "
              f"{len(basis)} independent sources")

    dup = discriminability_gram(list(basis) + [basis[0]], modulator, coeffs, path,
                                grid, t0, require_independent=False, faces=faces)
    rel = dup.eigenvalues[0] / max(dup.eigenvalues[-1], 1e-300)
    out.check("duplicate-collapse", rel <= 1e-10,
              f"min/max eigenvalue ratio {rel:.3e} with a duplicated source (need <= 1e-10)")

    probe_h = basis[1]
    probe = zero_flux_implies_zero_source_probe(probe_h, modulator, coeffs, path,
                                                grid, t0, gram, slack=0.1, faces=faces)
    out.check("flux-lower-bound", probe.passed,
              f"|flux| {probe.flux_norm:.4e} >= 0.9 * kappa_min * |h| = {probe.bound:.4e}")
    mix = SourceSpec(tg, 0.6 * basis[0].values - 0.8 * basis[2].values)
    probe2 = zero_flux_implies_zero_source_probe(mix, modulator, coeffs, path,
                                                 grid, t0, gram, slack=0.1, faces=faces)
    out.check("flux-lower-bound-span", probe2.passed,
              f"|flux| {probe2.flux_norm:.4e} >= {probe2.bound:.4e} for a span element")

    # per-path linearity of the source-to-flux map
    h_a, h_b = basis[0], basis[1]
    f_a = normal_flux(forward_source(h_a, modulator, coeffs, path, grid), t0, faces=faces)
    f_b = normal_flux(forward_source(h_b, modulator, coeffs, path, grid), t0, faces=faces)
    combo = SourceSpec(tg, 1.3 * h_a.values - 0.7 * h_b.values)
    f_c = normal_flux(forward_source(combo, modulator, coeffs, path, grid), t0, faces=faces)
    lin_defect = float(np.max(np.abs(f_c.values - (1.3 * f_a.values - 0.7 * f_b.values))))
    scale = float(np.max(np.abs(f_c.values))) or 1.0
    out.check("source-to-flux-linearity", lin_defect <= 1e-10 * scale,
              f"superposition defect {lin_defect:.3e} against flux scale {scale:.3e}")

    if cfg.get("source", "recovery_demo"):
        # demonstration only; the uniqueness witness is the Gram eigenvalue
        target = SourceSpec(tg, 0.5 * basis[0].values + 1.1 * basis[2].values)
        _, misfit = least_squares_source_recovery(
            target, basis, modulator, coeffs, path, grid, t0, faces=faces)
        out.notes.append(
            f"least-squares recovery demo: relative source misfit {misfit:.3e} "
            "(unasserted)")

    flux_table = Table("flux", ("t", "boundary_site", "flux_value"))
    for k in range(f_a.values.shape[0]):
        for j, label in enumerate(f_a.site_labels):
            flux_table.add(k * tg.dt, label, f_a.values[k, j])
    out.tables.append(flux_table)
    gram_report = {
        "basis": [f"orthonormal-time-mode-{i}" for i in range(len(basis))],
        "matrix": [[float(v) for v in row] for row in gram.gram],
        "eigenvalues": [float(v) for v in gram.eigenvalues],
        "kappa_min": gram.kappa_min,
    }
    out.notes.append("gram_report: " + json.dumps(gram_report, sort_keys=True))
    return out


def run_transform_residuals(cfg: ExperimentConfig) -> ExperimentOutcome:
    out = ExperimentOutcome()
    coeffs = coefficient_preset("source-1d")
    deterministic = CoefficientSet(
        diffusion=coeffs.diffusion, sigma=coeffs.sigma, drift=coeffs.drift,
        reaction=coeffs.reaction, drift_sup=coeffs.drift_sup,
        reaction_sup=coeffs.reaction_sup,
    )
    modulator = modulator_preset("source-1d")
    horizon = cfg.get("time", "horizon")
    base_steps = cfg.get("time", "steps")
    base_n = cfg.get("grid", "interior_points")
    frac_t0 = cfg.get("time", "t0") / horizon
    frac_t1 = cfg.get("time", "t1") / horizon
    frac_t2 = cfg.get("time", "t2") / horizon

    table = Table("chain_residuals", ("mode", "interior_points", "steps",
                                      "residual_z", "residual_w", "volterra"))
    levels = [(base_n, base_steps), (2 * base_n + 1, 2 * base_steps),
              (4 * base_n + 3, 4 * base_steps)]

    def run_level(n, steps, noisy, fine_path=None):
        grid = SpatialGrid.interval(1.0, n)
        tg = TimeGrid(horizon, steps)
        t0 = tg.snap(frac_t0 * horizon)
        t1 = tg.snap(frac_t1 * horizon)
        t2 = tg.snap(frac_t2 * horizon)
        chi = CutoffChi(t1, t2)
        h = SourceSpec.from_time_function(lambda t: 1.0 + t, tg)
        use = coeffs if noisy else deterministic
        if noisy:
            path = fine_path.coarsen(fine_path.timegrid.steps // steps) \
                if fine_path.timegrid.steps != steps else fine_path
        else:
            path = _zero_path(tg)
        traj = forward_source(h, modulator, use, path, grid)
        res = transform_chain(traj, modulator, chi, t0, use, h)
        vol = volterra_identity_check(res.z_values, res.w_values, chi, grid, tg, t0)
        return res.residual_z, res.residual_w, vol

    z_errs, w_errs, v_errs, hs = [], [], [], []
    for n, steps in levels:
        rz, rw, vol = run_level(n, steps, noisy=False)
        table.add("deterministic", n, steps, rz, rw, vol)
        z_errs.append(rz)
        w_errs.append(rw)
        v_errs.append(vol)
        hs.append(1.0 / (n + 1))
    fine_path = sample_brownian(cfg.seed, 0, TimeGrid(horizon, levels[-1][1]))
    for n, steps in levels:
        rz, rw, vol = run_level(n, steps, noisy=True, fine_path=fine_path)
        table.add("stochastic", n, steps, rz, rw, vol)
    out.tables.append(table)

    z_order = _fitted_order(hs, z_errs)
    w_order = _fitted_order(hs, w_errs)
    v_order = _fitted_order(hs, v_errs)
    out.check("z-equation-order", z_order >= 0.8,
              f"fitted order {z_order:.3f} (need >= 0.8)")
    out.check("w-equation-order", w_order >= 0.8,
              f"fitted order {w_order:.3f} (need >= 0.8)")
    out.check("volterra-order", v_order >= 1.8,
              f"fitted order {v_order:.3f} (need >= 1.8, quadrature-limited)")

    # gauge consistency: the identity modulator must return z == y bit-exactly
    grid = SpatialGrid.interval(1.0, base_n)
    tg = TimeGrid(horizon, base_steps)
    chi = CutoffChi(tg.snap(frac_t1 * horizon), tg.snap(frac_t2 * horizon))
    h = SourceSpec.from_time_function(lambda t: np.sin(t), tg)
    from .inverse_source import ModulatorR

    identity_mod = ModulatorR.identity(grid.dimension)
    traj = forward_source(h, identity_mod, deterministic, _zero_path(tg), grid)
    res = transform_chain(traj, identity_mod, chi, tg.snap(frac_t0 * horizon),
                          deterministic, h)
    k0 = tg.index_of(tg.snap(frac_t0 * horizon))
    gauge_exact = np.array_equal(res.z_values, traj.values[: k0 + 1])
    out.check("identity-modulator-gauge", gauge_exact, "z == y bit-exact under R = 1")

    # cutoff support: w = u below t1 and w = 0 above t2, exactly
    times = tg.times[: k0 + 1]
    below = times <= chi.t1 + 1e-12
    above = times >= chi.t2 - 1e-12
    support_ok = np.array_equal(res.w_values[below], res.u_values[below]) and \
        not np.any(res.w_values[above])
    out.check("cutoff-support", support_ok,
              "w == u for t <= t1 and w == 0 for t >= t2")
    return out


REGISTRY = {
    "toy-carleman": run_toy_carleman,
    "ito-check": run_ito_check,
    "forward-convergence": run_forward_convergence,
    "energy-bound": run_energy_bound,
    "identity-check": run_identity_check,
    "carleman-sweep": run_carleman_sweep,
    "interpolation": run_interpolation,
    "backward-rate": run_backward_rate,
    "inverse-source-gram": run_inverse_source_gram,
    "transform-residuals": run_transform_residuals,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> RunReport:
    """Dispatch one experiment, write its CSVs and report, return the report."""
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    outcome = REGISTRY[cfg.name](cfg)
    wall = time.perf_counter() - start
    nan_tables = [t.name for t in outcome.tables if t.has_nan()]
    report = RunReport(config=cfg, outcome=outcome, wall_clock=wall, nan_tables=nan_tables)
    for t in outcome.tables:
        (out_path / f"{t.name}.csv").write_text(t.csv_text(), encoding="utf-8")
    (out_path / "report.txt").write_text(report.text(), encoding="utf-8")
    from .plots import emit_plot_script

    (out_path / "plot.gp").write_text(emit_plot_script(report), encoding="utf-8")
    return report
