import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdelab.coefficients import (
    CoefficientSet,
    check_ellipticity,
    compute_r1,
    constant,
    source_free,
)
from spdelab.errors import PreconditionError, WeightOverflowError
from spdelab.grids import SpatialGrid, TimeGrid
from spdelab.weights import CarlemanWeight, HolderExponent


class TestWeightEvaluation:
    def test_lambda_zero_collapses_phi(self):
        w = CarlemanWeight("increasing", lam=0.0, s=2.0)
        phi, theta = w.evaluate(0.7)
        assert phi == 1.0
        assert theta == pytest.approx(7.38905609893065, rel=1e-12)

    def test_increasing_profile(self):
        w = CarlemanWeight("increasing", lam=np.log(2.0), s=3.0)
        phi, theta = w.evaluate(1.0)
        assert phi == pytest.approx(2.0, rel=1e-12)
        assert theta == pytest.approx(403.4287934927351, rel=1e-12)

    def test_decreasing_profile(self):
        w = CarlemanWeight("decreasing", lam=np.log(2.0), s=1.0)
        phi, theta = w.evaluate(1.0)
        assert phi == pytest.approx(0.5, rel=1e-12)
        assert theta == pytest.approx(1.6487212707001282, rel=1e-12)

    def test_overflow_names_offenders(self):
        w = CarlemanWeight("increasing", lam=3.0, s=500.0)
        with pytest.raises(WeightOverflowError) as err:
            w.evaluate(3.0)
        assert err.value.s == 500.0
        assert err.value.t == 3.0

    def test_rate_is_log_derivative(self):
        w = CarlemanWeight("increasing", lam=1.3, s=0.7)
        t, eps = 0.4, 1e-6
        numeric = (np.log(w.theta(t + eps)) - np.log(w.theta(t - eps))) / (2 * eps)
        assert w.rate(t) == pytest.approx(numeric, rel=1e-6)

    @given(st.floats(0.0, 0.9), st.floats(0.05, 1.0))
    @settings(max_examples=200)
    def test_monotone_increasing_kind(self, t, gap):
        w = CarlemanWeight("increasing", lam=1.0, s=2.0)
        assert w.theta(t) <= w.theta(t + gap)

    @given(st.floats(0.0, 0.9), st.floats(0.05, 1.0))
    @settings(max_examples=200)
    def test_monotone_decreasing_kind(self, t, gap):
        w = CarlemanWeight("decreasing", lam=1.0, s=2.0)
        assert w.theta(t) >= w.theta(t + gap)

    def test_rejects_bad_kind(self):
        with pytest.raises(PreconditionError):
            CarlemanWeight("quadratic", 1.0, 1.0)


class TestHolderExponent:
    def test_open_interval(self):
        HolderExponent(0.5)
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(PreconditionError):
                HolderExponent(bad)


class TestR1:
    def test_all_zero_gives_one(self):
        c = CoefficientSet(diffusion=(constant(1.0),), sigma=1.0)
        assert compute_r1(c) == 1.0

    def test_reaction_only(self):
        c = CoefficientSet(diffusion=(constant(1.0),), sigma=1.0,
                           reaction=constant(2.0), reaction_sup=2.0)
        assert compute_r1(c) == 5.0

    def test_all_unit(self):
        c = CoefficientSet(
            diffusion=(constant(1.0),), sigma=1.0,
            drift=(constant(1.0),), reaction=constant(1.0), noise_scale=constant(1.0),
            drift_sup=1.0, reaction_sup=1.0, noise_scale_w1inf=1.0,
        )
        assert compute_r1(c) == 4.0

    @given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    @settings(max_examples=100)
    def test_sign_flip_invariance_and_floor(self, a, b, c):
        base = CoefficientSet(diffusion=(constant(1.0),), sigma=1.0,
                              drift_sup=a, reaction_sup=b, noise_scale_w1inf=c)
        assert compute_r1(base) >= 1.0
        # negating coefficients leaves the sup norms unchanged
        flipped = CoefficientSet(diffusion=(constant(1.0),), sigma=1.0,
                                 drift_sup=abs(-a), reaction_sup=abs(-b),
                                 noise_scale_w1inf=abs(-c))
        assert compute_r1(base) == compute_r1(flipped)


class TestEllipticity:
    def grid_and_time(self):
        return SpatialGrid.interval(1.0, 31), TimeGrid(1.0, 8)

    def test_unit_diffusion_zero_margin(self):
        grid, tg = self.grid_and_time()
        c = CoefficientSet(diffusion=(constant(1.0),), sigma=1.0)
        rep = check_ellipticity(c, grid, tg)
        assert rep.passed
        assert rep.margin == pytest.approx(0.0, abs=1e-14)

    def test_sigma_too_large_fails_everywhere(self):
        grid, tg = self.grid_and_time()
        c = CoefficientSet(diffusion=(constant(1.0),), sigma=2.0)
        rep = check_ellipticity(c, grid, tg)
        assert not rep.passed
        with pytest.raises(Exception):
            rep.raise_if_failed()

    def test_varying_diffusion_margin_matches_scan(self):
        grid, tg = self.grid_and_time()
        c = CoefficientSet(diffusion=(lambda t, x: 2.0 + np.sin(x),), sigma=1.0)
        rep = check_ellipticity(c, grid, tg)
        nodes = grid.axis_nodes(0, include_boundary=True)
        expected = float(np.min(2.0 + np.sin(nodes))) - 1.0
        assert rep.passed
        assert rep.margin == pytest.approx(expected, rel=1e-12)

    def test_2d_diagonal_probes(self):
        grid = SpatialGrid.rectangle((1.0, 1.0), (7, 7))
        tg = TimeGrid(1.0, 2)
        c = CoefficientSet(
            diffusion=(constant(1.0), constant(1.0)), sigma=1.0,
            diffusion_cross=constant(-0.6),
        )
        rep = check_ellipticity(c, grid, tg)
        # the (1,1)/sqrt(2) probe sees 1 + 2*(-0.6)/2 = 0.4 < sigma
        assert not rep.passed
        assert rep.margin == pytest.approx(-0.6, rel=1e-12)


class TestSourceFree:
    def test_drops_only_sources(self):
        c = CoefficientSet(
            diffusion=(constant(1.0),), sigma=1.0,
            reaction=constant(1.0), forcing=constant(2.0),
            noise_scale=constant(0.5), noise_forcing=constant(0.1),
            reaction_sup=1.0, noise_scale_w1inf=0.5,
        )
        stripped = source_free(c)
        assert stripped.forcing is None and stripped.noise_forcing is None
        assert stripped.reaction is c.reaction and stripped.noise_scale is c.noise_scale
