import numpy as np
import pytest

from scm_forge.complexity import (
    Box,
    UnsupportedDimensionError,
    count_extrema,
    estimate_mc_1d,
    estimate_mc_nd,
)

UNIT = Box(((0.0, 1.0),))


class TestCountExtrema:
    def test_single_peak(self):
        assert count_extrema([0.0, 1.0, 0.0], tol=0.0) == 1

    def test_monotone(self):
        assert count_extrema([0.0, 1.0, 2.0, 3.0], tol=0.0) == 0

    def test_plateau_counts_once(self):
        assert count_extrema([0.0, 1.0, 1.0, 0.0], tol=0.0) == 1

    def test_plateau_within_monotone_not_counted(self):
        assert count_extrema([0.0, 1.0, 1.0, 2.0], tol=0.0) == 0

    def test_endpoints_never_counted(self):
        assert count_extrema([1.0, 0.0, 1.0], tol=0.0) == 1  # only interior minimum
        assert count_extrema([1.0, 0.5, 0.0], tol=0.0) == 0

    def test_tolerance_flattens_noise(self):
        wiggle = [0.0, 1e-12, 0.0, 1e-12, 0.0, 1.0]
        assert count_extrema(wiggle, tol=1e-9) == 0

    def test_requires_three_samples(self):
        with pytest.raises(ValueError):
            count_extrema([0.0, 1.0], tol=0.0)


class TestMc1d:
    def test_linear_is_zero(self):
        est = estimate_mc_1d(lambda x: 3.0 * x + 1.0, UNIT, grid_n=101)
        assert est.extrema_count == 0
        assert est.mc == 0.0

    def test_constant_is_zero(self):
        est = estimate_mc_1d(lambda x: np.full_like(np.asarray(x, dtype=float), 2.5), UNIT, grid_n=101)
        assert est.extrema_count == 0
        assert est.variation_integral == 0.0
        assert est.mc == 0.0

    def test_sine_on_two_pi(self):
        box = Box(((0.0, 2.0 * np.pi),))
        est = estimate_mc_1d(np.sin, box, grid_n=10001)
        assert est.extrema_count == 2
        assert est.variation_integral == pytest.approx(4.0, rel=5e-3)
        assert est.mc == pytest.approx(8.0, rel=1e-2)

    def test_mc_is_product(self):
        est = estimate_mc_1d(np.sin, Box(((0.0, 7.0),)), grid_n=2001)
        assert est.mc == est.extrema_count * est.variation_integral

    def test_grid_too_small(self):
        with pytest.raises(ValueError):
            estimate_mc_1d(np.sin, UNIT, grid_n=5)

    def test_nonfinite_sample(self):
        with np.errstate(divide="ignore"):
            with pytest.raises(ValueError, match="non-finite"):
                estimate_mc_1d(lambda x: 1.0 / (np.asarray(x) - 0.5), UNIT, grid_n=101)

    def test_scalar_function_fallback(self):
        import math

        est = estimate_mc_1d(lambda x: math.sin(6 * x), UNIT, grid_n=501)
        assert est.extrema_count == 2  # 6 rad spans ~1 period: max + min interior


class TestMcNd:
    def test_plane_is_zero(self):
        box = Box(((-1.0, 1.0), (-1.0, 1.0)))
        est = estimate_mc_nd(lambda p: p[:, 0] + p[:, 1], box, grid_n=51)
        assert est.extrema_count == 0
        assert est.mc == 0.0

    def test_paraboloid(self):
        box = Box(((-1.0, 1.0), (-1.0, 1.0)))
        est = estimate_mc_nd(lambda p: p[:, 0] ** 2 + p[:, 1] ** 2, box, grid_n=201)
        assert est.extrema_count == 1
        assert est.variation_integral == pytest.approx(8.0, rel=1e-2)
        assert est.mc == pytest.approx(8.0, rel=1e-2)

    def test_dims_guard(self):
        box = Box(tuple(((-1.0, 1.0),) * 4))
        with pytest.raises(UnsupportedDimensionError):
            estimate_mc_nd(lambda p: p.sum(axis=1), box, grid_n=11)

    def test_1d_box_delegates(self):
        est = estimate_mc_nd(np.sin, Box(((0.0, 2 * np.pi),)), grid_n=10001)
        assert est.extrema_count == 2

    def test_rastrigin_1d_matches_refined_grid(self):
        from scm_forge.dataset import rastrigin_function

        f = lambda x: rastrigin_function(np.asarray(x).reshape(-1, 1))
        box = Box(((-5.12, 5.12),))
        coarse = estimate_mc_1d(f, box, grid_n=4001)
        fine = estimate_mc_1d(f, box, grid_n=40001)
        assert coarse.extrema_count == fine.extrema_count
        assert coarse.variation_integral == pytest.approx(fine.variation_integral, rel=1e-2)
        assert coarse.mc == pytest.approx(fine.mc, rel=1e-2)


class TestProperties:
    def _bumpy(self, x):
        x = np.asarray(x, dtype=float)
        return np.sin(5 * x) + 0.3 * np.cos(17 * x)

    def test_scale_property(self):
        base = estimate_mc_1d(self._bumpy, UNIT, grid_n=4001)
        for c in (3.0, -2.5, 0.1):
            scaled = estimate_mc_1d(lambda x: c * self._bumpy(x), UNIT, grid_n=4001)
            assert scaled.extrema_count == base.extrema_count
            assert scaled.variation_integral == pytest.approx(
                abs(c) * base.variation_integral, rel=1e-12
            )
            assert scaled.mc == pytest.approx(abs(c) * base.mc, rel=1e-12)

    def test_shift_property(self):
        base = estimate_mc_1d(self._bumpy, UNIT, grid_n=4001)
        for c in (10.0, -7.0):
            shifted = estimate_mc_1d(lambda x: self._bumpy(x) + c, UNIT, grid_n=4001)
            assert shifted.extrema_count == base.extrema_count
            assert shifted.variation_integral == pytest.approx(
                base.variation_integral, rel=1e-12, abs=1e-12
            )

    def test_grid_refinement_stability(self):
        a = estimate_mc_1d(self._bumpy, UNIT, grid_n=1001)
        b = estimate_mc_1d(self._bumpy, UNIT, grid_n=2001)
        assert b.mc == pytest.approx(a.mc, rel=1e-2)


def test_box_validation():
    with pytest.raises(ValueError):
        Box(((1.0, 1.0),))
    assert Box(((0, 1), (0, 2))).dims == 2
