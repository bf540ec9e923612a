import math

import numpy as np
import pytest

from sectionlab.core.grid import Grid
from sectionlab.core.potentials import make_potential
from sectionlab.core.sections import (
    GeometryConstants,
    calibrate_inclusion_coefficient,
    cell_set_is_convex,
    estimate_c1alpha,
    estimate_engulfing,
    estimate_k_hat,
    estimate_size_exponent,
    fit_inscribed_radius,
    inclusion_exclusion_check,
    k_consistency_check,
    require_compact,
    section,
    volume_ratio_sweep,
)
from sectionlab.utils.errors import NotCompactlyContained, OutOfDomain, PreconditionViolation


class TestSection:
    def test_quadratic_section_is_a_disc(self, quadratic_u, origin):
        S = section(quadratic_u, origin, 0.2)
        radii = np.linalg.norm(S.points, axis=-1)
        assert radii.max() < math.sqrt(0.4)
        assert S.compactly_contained
        assert S.measure == pytest.approx(math.pi * 0.4, rel=0.03)

    def test_radius_hint_gives_same_cells(self, cosine_u):
        x = (0.2, -0.1)
        full = section(cosine_u, x, 0.1)
        windowed = section(cosine_u, x, 0.1, radius_hint=0.2)
        np.testing.assert_array_equal(full.cells, windowed.cells)

    def test_boundary_cells_are_outside(self, cosine_u, origin):
        S = section(cosine_u, origin, 0.3)
        assert not np.any(S.boundary_cells & S.cells)
        assert S.boundary_cells.any()
        assert 0 < S.inradius() <= S.max_radius() + cosine_u.grid.min_spacing * 1.5

    def test_nested(self, cosine_u, origin):
        assert section(cosine_u, origin, 0.4).contains(section(cosine_u, origin, 0.1))

    def test_convex_cell_set(self, cosine_u, origin):
        assert cell_set_is_convex(cosine_u.grid, section(cosine_u, origin, 0.3).cells)

    def test_nonpositive_height(self, quadratic_u, origin):
        with pytest.raises(PreconditionViolation):
            section(quadratic_u, origin, 0.0)

    def test_outside_grid(self, quadratic_u):
        with pytest.raises(OutOfDomain):
            section(quadratic_u, (5.0, 0.0), 0.1)

    def test_large_section_not_compact(self, quadratic_u, origin):
        with pytest.raises(NotCompactlyContained):
            require_compact(section(quadratic_u, origin, 1.5))


class TestVolume:
    def test_quadratic_ratio_is_two_pi(self, quadratic_u, origin):
        sweep = volume_ratio_sweep(quadratic_u, origin, [0.2, 0.4, 0.8])
        for row in sweep.rows:
            assert row.ratio == pytest.approx(2 * math.pi, rel=0.05)
        assert sweep.band < 1.1

    def test_band_within_pinching(self, cosine_u, origin):
        sweep = volume_ratio_sweep(cosine_u, origin, [0.05, 0.1, 0.2, 0.4])
        lam, Lam = cosine_u.pinching
        assert sweep.band <= 2 * math.sqrt(Lam / lam)


class TestEngulfing:
    def test_quadratic_engulfing_is_four(self, quadratic_u):
        est = estimate_engulfing(quadratic_u, [((0.0, 0.0), 0.1), ((0.2, 0.1), 0.1)])
        assert 3.2 <= est.theta0_hat <= 4.0 + 1e-9
        assert len(est.per_sample) == 2

    def test_floor_is_two(self, quadratic_u):
        est = estimate_engulfing(quadratic_u, [((0.0, 0.0), 1e-5)])
        assert est.theta0_hat == 2.0


class TestExponents:
    def test_size_exponent_of_quadratic(self, quadratic_u, origin):
        S4 = section(quadratic_u, origin, 0.8)
        samples = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, -0.2]])
        size = estimate_size_exponent(quadratic_u, S4, samples, list(np.geomspace(0.0125, 0.4, 6)))
        assert size.mu_hat == pytest.approx(0.5, abs=0.05)

    def test_c1alpha_of_quadratic(self, quadratic_u, origin):
        S4 = section(quadratic_u, origin, 0.8)
        assert estimate_c1alpha(quadratic_u, S4).alpha_star == 1.0

    def test_inscribed_radius(self, quadratic_u, origin):
        c1 = fit_inscribed_radius(quadratic_u, origin, [0.05, 0.1, 0.2], 1.0)
        assert math.sqrt(2.0) - 1e-9 <= c1 <= math.sqrt(2.0) + 0.25


class TestInclusion:
    def test_inclusion_and_exclusion(self, quadratic_u, origin):
        t, r, s = 0.2, 0.25, 0.5
        inner = inclusion_exclusion_check(quadratic_u, origin, t, r, s, (0.2, 0.0), 1.0, 2.0)
        assert inner.passed and inner.mode == "inclusion"
        outer = inclusion_exclusion_check(
            quadratic_u, origin, t, r, s, (0.55, 0.0), 1.0, 2.0, mode="exclusion"
        )
        assert outer.passed

    def test_point_outside_rt(self, quadratic_u, origin):
        with pytest.raises(PreconditionViolation):
            inclusion_exclusion_check(quadratic_u, origin, 0.2, 0.25, 0.5, (0.5, 0.0), 1.0, 2.0)

    def test_calibrated_coefficient_is_tight(self, quadratic_u, origin):
        points = [(0.25, 0.0), (0.0, -0.25), (0.15, 0.15)]
        c0 = calibrate_inclusion_coefficient(quadratic_u, origin, 0.2, 0.25, 0.5, points, 2.0)
        assert c0 > 1.0
        assert all(
            inclusion_exclusion_check(quadratic_u, origin, 0.2, 0.25, 0.5, x, c0, 2.0).passed for x in points
        )
        assert not all(
            inclusion_exclusion_check(quadratic_u, origin, 0.2, 0.25, 0.5, x, 1.5 * c0, 2.0).passed
            for x in points
        )


class TestCoveringConstants:
    def test_k_hat_for_balls(self, quadratic_u, origin):
        samples = [((0.1, 0.0), 0.02), ((0.0, 0.15), 0.01), ((-0.1, -0.1), 0.02)]
        assert 1.0 <= estimate_k_hat(quadratic_u, origin, 0.2, samples) <= 4.0

    def test_k_consistency(self, quadratic_u):
        pairs = [(((0.0, 0.0), 0.01), ((0.1, 0.0), 0.015)), (((0.05, 0.05), 0.02), ((0.0, 0.0), 0.03))]
        report = k_consistency_check(quadratic_u, pairs, 4.0)
        assert report.K == 32.0
        assert report.checked == 2
        assert report.violations == 0

    def test_pairs_with_large_second_height_are_skipped(self, quadratic_u):
        pairs = [(((0.0, 0.0), 0.01), ((0.0, 0.0), 0.05))]
        assert k_consistency_check(quadratic_u, pairs, 4.0).checked == 0


class TestGeometryConstants:
    def test_for_balls(self):
        geo = GeometryConstants.for_balls(2)
        assert geo.K == 32.0
        assert geo.p1 == pytest.approx(6.0)

    def test_rejects_small_theta(self):
        with pytest.raises(PreconditionViolation):
            GeometryConstants.from_estimates(2, theta0=1.5, mu=0.5, c0=1.0, K_hat=4.0, alpha_star=1.0)


class TestEccentric:
    def test_same_volume_ratio_as_quadratic(self, origin):
        grid = Grid.box(2, 3.0, 128)
        u = make_potential("eccentric", grid, s=4.0)
        sweep = volume_ratio_sweep(u, origin, [0.2, 0.4])
        for row in sweep.rows:
            assert row.ratio == pytest.approx(2 * math.pi, rel=0.06)
