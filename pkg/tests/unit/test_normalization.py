import math

import numpy as np
import pytest

from sectionlab.core.normalization import (
    AffineMap,
    ProblemInstance,
    detAh_sweep,
    drift_scaling_sweep,
    inverse_norm_bound_check,
    john_normalize,
    khachiyan_ellipsoid,
    rescale_problem,
)
from sectionlab.core.sections import require_compact, section
from sectionlab.utils.errors import (
    DegenerateSection,
    NotCompactlyContained,
    PreconditionViolation,
    SingularMap,
)


@pytest.fixture(scope="module")
def S4(quadratic_u, origin):
    return require_compact(section(quadratic_u, origin, 0.8))


@pytest.fixture(scope="module")
def rescaled(quadratic_u, S4):
    P = ProblemInstance.linearized(quadratic_u, S4, zero_order=0.5, p=6.0)
    return rescale_problem(P, john_normalize(S4))


class TestAffineMap:
    def test_singular(self):
        with pytest.raises(SingularMap):
            AffineMap(np.array([[1.0, 2.0], [2.0, 4.0]]), np.zeros(2))

    def test_inverse_composes_to_identity(self):
        T = AffineMap(np.array([[2.0, 1.0], [0.0, 0.5]]), np.array([0.3, -1.0]))
        ident = T.compose(T.inverse())
        np.testing.assert_allclose(ident.A, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(ident.b, np.zeros(2), atol=1e-12)
        assert T.detA == pytest.approx(1.0)


class TestJohn:
    def test_square_corners(self):
        corners = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        center, Q = khachiyan_ellipsoid(corners)
        np.testing.assert_allclose(center, [0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(Q, 0.5 * np.eye(2), atol=1e-6)

    def test_disc_is_scaled_to_unit(self, S4):
        N = john_normalize(S4)
        radius = math.sqrt(1.6)
        assert abs(N.detA) == pytest.approx(1.0 / radius**2, rel=0.15)
        np.testing.assert_allclose(N(np.zeros(2)), [0.0, 0.0], atol=0.05)

    def test_degenerate(self, quadratic_u, origin):
        with pytest.raises(DegenerateSection):
            john_normalize(section(quadratic_u, origin, 1e-5))


class TestRescale:
    def test_normalized_section(self, rescaled):
        assert rescaled.normalized_ok()
        assert rescaled.undefined_cells == 0
        assert rescaled.pinching_ok(1.0, 1.0)

    def test_cofactor_covariance(self, rescaled):
        assert rescaled.cofactor_residual < 1e-8

    def test_zero_order_norm_scaling(self, rescaled):
        report = rescaled.norm_report
        assert report.c_Ln == pytest.approx(report.c_Ln_predicted, rel=0.1)
        assert report.b_Lp == 0.0

    def test_rescaled_height(self, rescaled, S4):
        k = rescaled.detAh
        assert rescaled.instance.section.height == pytest.approx(S4.height / k)


class TestDetAhSweep:
    def test_quadratic_ratio(self, quadratic_u, origin):
        sweep = detAh_sweep(quadratic_u, origin, [0.1, 0.2, 0.4])
        lo, hi = sweep.band
        assert 1.5 <= lo and hi <= 2.05
        assert len(sweep.maps) == 3

    def test_not_compact(self, quadratic_u, origin):
        with pytest.raises(NotCompactlyContained):
            detAh_sweep(quadratic_u, origin, [1.5])

    def test_inverse_norm_bound(self, quadratic_u, origin):
        sweep = detAh_sweep(quadratic_u, origin, [0.1, 0.2, 0.4])
        report = inverse_norm_bound_check(
            [(row.height, N) for row, N in zip(sweep.rows, sweep.maps)], alpha_star=1.0, tol=0.15
        )
        assert report.passed
        assert report.exponent == pytest.approx(-0.5, abs=0.1)

    def test_empty_sweep(self):
        with pytest.raises(PreconditionViolation):
            inverse_norm_bound_check([], 1.0)

    def test_constant_drift_scaling(self, quadratic_instance, quadratic_u, origin):
        heights = [0.1, 0.2, 0.4, 0.8]
        maps = detAh_sweep(quadratic_u, origin, heights).maps
        P = quadratic_instance.with_drift((1.0, 0.0))
        report = drift_scaling_sweep(P, list(zip(heights, maps)), alpha_star=1.0)
        # p = 6, n = 2
        assert report.predicted == pytest.approx(1.0 / 3.0)
        assert report.passed
        assert report.slope == pytest.approx(1.0 / 3.0, abs=0.05)
        assert report.raw_slope == pytest.approx(0.5, abs=0.05)
        for row in report.rows:
            S = section(quadratic_u, origin, row.height)
            assert row.source_b_Lp == pytest.approx(S.measure ** (1.0 / 6.0))

    def test_drift_scaling_needs_two_heights(self, quadratic_instance, quadratic_u, origin):
        maps = detAh_sweep(quadratic_u, origin, [0.2]).maps
        with pytest.raises(PreconditionViolation):
            drift_scaling_sweep(quadratic_instance.with_drift((1.0, 0.0)), [(0.2, maps[0])], 1.0)


class TestProblemInstance:
    def test_isotropic_operator_on_quadratic(self, quadratic_instance, quadratic_u):
        np.testing.assert_allclose(quadratic_instance.operator(quadratic_u), 2.0, atol=1e-10)

    def test_modulated_envelope(self, quadratic_u, S4):
        P = ProblemInstance.linearized(quadratic_u, S4, 1.0, 2.0, mode="modulated")
        lo, hi = P.envelope_bounds()
        assert lo == pytest.approx(1.0)
        assert hi == pytest.approx(2.0)
        assert P.check_envelope()

    def test_unknown_mode(self, quadratic_u, S4):
        with pytest.raises(PreconditionViolation):
            ProblemInstance.linearized(quadratic_u, S4, mode="random")

    def test_envelope_ordering(self, quadratic_u, S4):
        with pytest.raises(PreconditionViolation):
            ProblemInstance.linearized(quadratic_u, S4, 2.0, 1.0)

    def test_data_norms(self, quadratic_u, S4):
        P = ProblemInstance.linearized(quadratic_u, S4, drift=(0.3, 0.4), zero_order=-1.0, rhs=2.0)
        norms = P.data_norms()
        root = math.sqrt(S4.measure)
        assert norms["b_Ln"] == pytest.approx(0.5 * root)
        assert norms["c_minus_Ln"] == pytest.approx(root)
        assert norms["f_plus_Ln"] == pytest.approx(2.0 * root)
        assert P.p == 4.0

    def test_with_rhs(self, quadratic_instance):
        f = np.ones(quadratic_instance.grid.shape)
        assert quadratic_instance.with_rhs(f).data_norms()["f_Ln"] > 0
        assert quadratic_instance.data_norms()["f_Ln"] == 0.0

    def test_with_drift(self, quadratic_instance, S4):
        norms = quadratic_instance.with_drift((0.3, 0.4)).data_norms()
        assert norms["b_Ln"] == pytest.approx(0.5 * math.sqrt(S4.measure))
        assert quadratic_instance.data_norms()["b_Ln"] == 0.0
