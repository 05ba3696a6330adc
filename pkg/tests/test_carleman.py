import numpy as np
import pytest

from spdelab.brownian import BrownianPath
from spdelab.carleman import (
    carleman_lhs,
    carleman_rhs,
    carleman_sweep,
    integrated_identity_residual,
)
from spdelab.coefficients import CoefficientSet, constant
from spdelab.errors import PreconditionError, WeightOverflowError
from spdelab.fields import ScalarField, sq_h1, sq_l2, trapezoid_weights
from spdelab.grids import SpatialGrid, TimeGrid
from spdelab.presets import coefficient_preset, initial_condition
from spdelab.solver import ensemble_trace, solve_forward
from spdelab.weights import CarlemanWeight

HEAT = coefficient_preset("heat")


def heat_trace(n=63, steps=256, horizon=1.0, amplitude=1.0):
    grid = SpatialGrid.interval(1.0, n)
    tg = TimeGrid(horizon, steps)
    y0 = initial_condition("sine", grid, amplitude)
    return ensemble_trace(y0, HEAT, grid, tg, seed=0, n_paths=1), grid, tg


class TestIdentityResidual:
    def test_zero_solution_zero_ledger(self):
        grid = SpatialGrid.interval(1.0, 15)
        tg = TimeGrid(1.0, 32)
        w = CarlemanWeight("increasing", 1.0, 1.0)
        led = integrated_identity_residual(np.zeros(15), HEAT, w, grid, tg, 0.0,
                                           seed=0, n_paths=2)
        for name in ("lhs_main", "lhs_low", "time_boundary", "gradient_energy",
                     "zero_order", "square_term", "boundary_divergence"):
            assert getattr(led, name) == 0.0
        assert led.residual == 0.0

    def test_time_constant_weight_exact_with_noise(self):
        # lambda = 0 freezes the weight in time; the per-step algebra is then a
        # chain of exact discrete square identities
        grid = SpatialGrid.interval(1.0, 31)
        tg = TimeGrid(1.0, 128)
        coeffs = coefficient_preset("multiplicative")
        y0 = initial_condition("sine", grid)
        w = CarlemanWeight("increasing", lam=0.0, s=1.0)
        led = integrated_identity_residual(y0.values, coeffs, w, grid, tg, 0.0,
                                           seed=3, n_paths=8)
        assert led.residual <= 1e-12
        assert abs(led.boundary_divergence) <= 1e-12 * led.scale

    def test_single_node_noise_sanity(self):
        # one interior node, time-constant weight: reduces to the scalar
        # discrete square identity, round-off exact
        grid = SpatialGrid.interval(1.0, 1)
        tg = TimeGrid(1.0, 64)
        coeffs = CoefficientSet(diffusion=(constant(1.0),), sigma=1.0,
                                noise_scale=constant(0.5), noise_scale_w1inf=0.5)
        w = CarlemanWeight("increasing", lam=0.0, s=1.0)
        led = integrated_identity_residual(np.array([1.0]), coeffs, w, grid, tg, 0.0,
                                           seed=5, n_paths=16)
        assert led.residual <= 1e-10

    def test_deterministic_benchmark_residual_and_refinement(self):
        w = CarlemanWeight("increasing", 1.0, 1.0)
        residuals = []
        for n, steps in ((65, 128), (131, 256)):
            grid = SpatialGrid.interval(1.0, n)
            tg = TimeGrid(1.0, steps)
            y0 = initial_condition("sine", grid)
            led = integrated_identity_residual(y0.values, HEAT, w, grid, tg, 0.0,
                                               seed=0, n_paths=1)
            residuals.append(led.residual)
        assert residuals[0] <= 0.05
        assert residuals[1] < residuals[0]

    def test_decreasing_weight_profile(self):
        grid = SpatialGrid.interval(1.0, 31)
        tg = TimeGrid(1.0, 256)
        y0 = initial_condition("sine", grid)
        w = CarlemanWeight("decreasing", 1.0, 1.0)
        led = integrated_identity_residual(y0.values, HEAT, w, grid, tg, 0.0,
                                           seed=0, n_paths=1)
        assert led.residual <= 0.05

    def test_overflow_refusal(self):
        grid = SpatialGrid.interval(1.0, 7)
        tg = TimeGrid(3.0, 8)
        w = CarlemanWeight("increasing", lam=3.0, s=500.0)
        with pytest.raises(WeightOverflowError):
            integrated_identity_residual(np.ones(7), HEAT, w, grid, tg, 0.0,
                                         seed=0, n_paths=1)

    def test_general_path_matches_fast_path(self):
        # a zero cross-diffusion entry forces the generic term evaluation on
        # dynamics identical to the diagonal fast path; the ledgers must agree
        grid = SpatialGrid.rectangle((1.0, 1.0), (7, 7))
        tg = TimeGrid(0.25, 16)
        x1, x2 = grid.meshgrid()
        y0 = np.sin(np.pi * x1) * np.sin(np.pi * x2)
        w = CarlemanWeight("increasing", 0.5, 1.0)
        diag = CoefficientSet(diffusion=(constant(1.0), constant(1.0)), sigma=1.0)
        crossed = CoefficientSet(diffusion=(constant(1.0), constant(1.0)), sigma=1.0,
                                 diffusion_cross=constant(0.0))
        fast = integrated_identity_residual(y0, diag, w, grid, tg, 0.0,
                                            seed=0, n_paths=1)
        slow = integrated_identity_residual(y0, crossed, w, grid, tg, 0.0,
                                            seed=0, n_paths=1)
        for name in ("lhs_main", "lhs_low", "time_boundary", "gradient_energy",
                     "zero_order", "square_term", "residual"):
            assert getattr(fast, name) == pytest.approx(getattr(slow, name), rel=1e-10)


def dense_lhs_oracle(traj_values, grid, tg, weight, delta):
    """Naive loop re-evaluation of the weighted space-time integrals."""
    k0 = tg.index_of(delta)
    w_time = trapezoid_weights(tg.steps + 1 - k0, tg.dt)
    grad_total = 0.0
    zero_total = 0.0
    for j, k in enumerate(range(k0, tg.steps + 1)):
        t = tg.times[k]
        theta_sq = float(np.exp(2.0 * weight.log_theta(t)))
        phi = float(weight.phi(t))
        grad_total += w_time[j] * theta_sq * float(sq_h1(traj_values[k], grid))
        zero_total += w_time[j] * phi * theta_sq * float(sq_l2(traj_values[k], grid))
    return weight.lam * grad_total, weight.s * weight.lam**2 * zero_total


class TestInequalityFunctionals:
    def test_zero_solution(self):
        grid = SpatialGrid.interval(1.0, 15)
        tg = TimeGrid(1.0, 16)
        trace = ensemble_trace(ScalarField.zeros(grid), HEAT, grid, tg, 0, 2)
        w = CarlemanWeight("increasing", 1.0, 1.0)
        assert carleman_lhs(trace, w, 0.0) == (0.0, 0.0)
        assert carleman_rhs(trace, w, 0.0, HEAT).total == 0.0

    def test_s_zero_kills_zero_order_term(self):
        trace, grid, tg = heat_trace(n=31, steps=64)
        w = CarlemanWeight("increasing", lam=1.0, s=0.0)
        lhs_grad, lhs_zero = carleman_lhs(trace, w, 0.0)
        assert lhs_zero == 0.0
        assert lhs_grad > 0.0

    def test_lhs_matches_dense_oracle(self):
        grid = SpatialGrid.interval(1.0, 31)
        tg = TimeGrid(1.0, 64)
        y0 = initial_condition("sine", grid)
        path = BrownianPath(tg, np.zeros(64), 0, 0)
        traj = solve_forward(y0, HEAT, path, grid)
        trace = ensemble_trace(y0, HEAT, grid, tg, seed=0, n_paths=1)
        w = CarlemanWeight("increasing", 1.0, 1.0)
        lhs = carleman_lhs(trace, w, 0.0)
        oracle = dense_lhs_oracle(traj.values, grid, tg, w, 0.0)
        assert lhs[0] == pytest.approx(oracle[0], rel=1e-8)
        assert lhs[1] == pytest.approx(oracle[1], rel=1e-8)

    def test_data_integral_collapsed_weights(self):
        # f = 1, s = 0, lambda = 0: integrand (1+phi)theta^2 f^2 = 2, so the
        # data term equals 2*T
        grid = SpatialGrid.interval(1.0, 63)
        tg = TimeGrid(2.0, 64)
        forced = CoefficientSet(diffusion=(constant(1.0),), sigma=1.0,
                                forcing=constant(1.0))
        trace = ensemble_trace(ScalarField.zeros(grid), forced, grid, tg, 0, 1)
        w = CarlemanWeight("increasing", lam=0.0, s=0.0)
        rhs = carleman_rhs(trace, w, 0.0, forced)
        assert rhs.data == pytest.approx(2.0 * 2.0, rel=1e-6)

    def test_rhs_matches_dense_oracle(self):
        grid = SpatialGrid.interval(1.0, 31)
        tg = TimeGrid(1.0, 64)
        coeffs = coefficient_preset("multiplicative")
        y0 = initial_condition("sine", grid)
        trace = ensemble_trace(y0, coeffs, grid, tg, seed=4, n_paths=16)
        w = CarlemanWeight("increasing", 1.0, 1.0)
        rhs = carleman_rhs(trace, w, 0.0, coeffs)
        theta_sq_T = float(np.exp(2.0 * w.log_theta(1.0)))
        phi_T = float(w.phi(1.0))
        term_grad = theta_sq_T * float(np.mean(trace.sq_h1[-1]))
        term_zero = w.s * w.lam * phi_T * theta_sq_T * float(np.mean(trace.sq_l2[-1]))
        assert rhs.terminal_grad == pytest.approx(term_grad, rel=1e-10)
        assert rhs.terminal_zero == pytest.approx(term_zero, rel=1e-10)
        assert rhs.total == pytest.approx(
            rhs.terminal + rhs.initial + rhs.data, rel=1e-12)


class TestSweep:
    def test_zero_solution_zero_ratios(self):
        grid = SpatialGrid.interval(1.0, 15)
        tg = TimeGrid(1.0, 16)
        trace = ensemble_trace(ScalarField.zeros(grid), HEAT, grid, tg, 0, 2)
        sweep = carleman_sweep(trace, [1.0, 2.0], [1.0], 0.0, HEAT)
        assert all(row.ratio == 0.0 for row in sweep.rows)

    def test_requires_sorted_lists(self):
        trace, grid, tg = heat_trace(n=15, steps=16)
        with pytest.raises(PreconditionError):
            carleman_sweep(trace, [2.0, 1.0], [1.0], 0.0, HEAT)

    def test_heat_ratios_finite_and_no_blowup(self):
        # uniform-boundedness witness: finite cells and no growth under
        # doubling of s (ratios in fact decay, dominated by the weighted
        # initial-data term at delta = 0)
        trace, grid, tg = heat_trace(n=31, steps=128)
        sweep = carleman_sweep(trace, [1.0, 2.0, 4.0], [1.0, 2.0], 0.0, HEAT)
        assert len(sweep.rows) == 6
        ratios = [row.ratio for row in sweep.rows]
        assert all(np.isfinite(r) for r in ratios)
        for lam, rows in sweep.ratios_by_lambda().items():
            by_s = {r.s: r.ratio for r in rows}
            for s, ratio in by_s.items():
                if 2 * s in by_s:
                    assert by_s[2 * s] <= 2.0 * ratio

    def test_scaling_invariance(self):
        trace_a, grid, tg = heat_trace(n=31, steps=64, amplitude=1.0)
        trace_b, _, _ = heat_trace(n=31, steps=64, amplitude=10.0)
        sa = carleman_sweep(trace_a, [1.0], [1.0], 0.0, HEAT)
        sb = carleman_sweep(trace_b, [1.0], [1.0], 0.0, HEAT)
        assert sb.rows[0].lhs_grad == pytest.approx(100.0 * sa.rows[0].lhs_grad, rel=1e-12)
        assert sb.rows[0].ratio == pytest.approx(sa.rows[0].ratio, rel=1e-10)

    def test_overflow_cells_flagged(self):
        trace, grid, tg = heat_trace(n=15, steps=16)
        sweep = carleman_sweep(trace, [1.0, 1e6], [1.0], 0.0, HEAT)
        assert len(sweep.rows) == 1
        assert len(sweep.skipped) == 1
        assert sweep.skipped[0][0] == 1e6
