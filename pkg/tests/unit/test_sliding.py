import numpy as np
import pytest
from scipy import ndimage

from sectionlab.core.grid import full_structure
from sectionlab.core.sections import section
from sectionlab.core.sliding import (
    calibrate_jacobian_constant,
    calibrate_opening,
    doubling_contact,
    doubling_eps_cap,
    interior_contact_fraction,
    jacobian_bound_check,
    large_gradient_filter,
    measure_estimate_run,
    slide_paraboloid,
    transform_weight,
)
from sectionlab.experiments.solutions import affine_solution, paraboloid_solution
from sectionlab.utils.errors import (
    ClaimViolation,
    ContainmentFailure,
    HypothesisViolation,
    PreconditionViolation,
)


@pytest.fixture(scope="module")
def S1(quadratic_u, origin):
    return section(quadratic_u, origin, 0.2)


class TestSlideParaboloid:
    def test_closed_form_contact(self, quadratic_u, grid, S1):
        v = paraboloid_solution(grid, 0.0, 1.0)
        rec = slide_paraboloid(quadratic_u, v, (0.1, 0.05), 4.0, S1)
        np.testing.assert_allclose(rec.contact, [0.08, 0.04], atol=1e-10)
        assert rec.jacobian_formula == pytest.approx(1.5625)
        assert rec.jacobian_fd == pytest.approx(1.5625, rel=1e-6)
        assert rec.first_order_residual < 1e-10
        assert rec.touch_eigenvalue == pytest.approx(5.0)
        assert not rec.on_boundary

    def test_row(self, quadratic_u, grid, S1):
        rec = slide_paraboloid(quadratic_u, paraboloid_solution(grid, 0.0, 1.0), (0.1, 0.05), 4.0, S1)
        row = rec.row()
        assert set(row) == {"y", "x", "a", "v", "grad_v", "jac_fd", "jac_formula", "on_boundary"}
        assert row["a"] == 4.0

    def test_vertex_outside_domain(self, quadratic_u, grid, S1):
        with pytest.raises(PreconditionViolation):
            slide_paraboloid(quadratic_u, paraboloid_solution(grid, 0.0, 1.0), (1.0, 0.0), 4.0, S1)

    def test_nonpositive_opening(self, quadratic_u, grid, S1):
        with pytest.raises(PreconditionViolation):
            slide_paraboloid(quadratic_u, paraboloid_solution(grid, 0.0, 1.0), (0.0, 0.0), 0.0, S1)

    def test_negative_v(self, quadratic_u, grid, S1):
        with pytest.raises(PreconditionViolation):
            slide_paraboloid(quadratic_u, affine_solution(grid, -1.0), (0.0, 0.0), 4.0, S1)


class TestMeasureRun:
    def test_constant_solution(self, quadratic_instance, grid):
        report = measure_estimate_run(quadratic_instance, affine_solution(grid, 0.5), 0.25, 4.0)
        assert report.area_ok
        assert report.contacts.area_ratio == pytest.approx(1.0)
        assert report.monotone_ok
        assert report.m1_emp == pytest.approx(0.5)
        assert report.low_fraction == 0.0
        assert report.interior_fraction == 1.0
        assert report.jacobian_gap < 1e-6
        assert report.summary()["vertices"] == len(report.contacts.records)

    def test_interior_fraction_counts_edge_contacts(self, quadratic_instance, grid, origin):
        report = measure_estimate_run(quadratic_instance, affine_solution(grid, 0.5), 0.25, 4.0, with_fd=False)
        V = section(quadratic_instance.potential, origin, 0.05)
        core = ndimage.binary_erosion(V.cells, structure=full_structure(2), border_value=0)
        fraction = interior_contact_fraction(report.contacts.records, V)
        assert 0.0 < fraction < 1.0
        assert fraction == pytest.approx(core.sum() / V.count)

    def test_workers_do_not_change_results(self, quadratic_instance, grid):
        v = paraboloid_solution(grid, 0.0, 1.0)
        serial = measure_estimate_run(quadratic_instance, v, 0.25, 4.0, with_fd=False)
        pooled = measure_estimate_run(quadratic_instance, v, 0.25, 4.0, with_fd=False, workers=3)
        assert [r.row() for r in serial.contacts.records] == [r.row() for r in pooled.contacts.records]

    def test_hypothesis_violation(self, quadratic_instance, grid):
        with pytest.raises(HypothesisViolation):
            measure_estimate_run(quadratic_instance, affine_solution(grid, 2.0), 0.25, 4.0)

    def test_contacts_on_boundary(self, quadratic_instance, grid):
        v = paraboloid_solution(grid, 0.0, 5.0, np.array([0.9, 0.0]))
        with pytest.raises(ContainmentFailure):
            measure_estimate_run(quadratic_instance, v, 0.25, 0.5, with_fd=False)

    def test_opening_threshold(self, quadratic_instance, grid):
        v = paraboloid_solution(grid, 0.0, 5.0, np.array([0.9, 0.0]))
        scan = calibrate_opening(quadratic_instance, v, 0.25, [64.0, 0.5])
        assert scan.rows[0][0] == 0.5 and scan.rows[0][1] > 0
        assert scan.rows[1] == (64.0, 0)
        assert scan.threshold == 64.0


class TestJacobianBound:
    def test_calibrated_constant(self, quadratic_instance, grid):
        report = measure_estimate_run(quadratic_instance, affine_solution(grid, 0.5), 0.25, 4.0, with_fd=False)
        records = report.contacts.records
        C = calibrate_jacobian_constant(records, quadratic_instance)
        assert C == pytest.approx(1.0)
        assert all(jacobian_bound_check(r, quadratic_instance, C).passed for r in records)

    def test_unknown_form(self, quadratic_instance, grid):
        report = measure_estimate_run(quadratic_instance, affine_solution(grid, 0.5), 0.25, 4.0, with_fd=False)
        with pytest.raises(PreconditionViolation):
            jacobian_bound_check(report.contacts.records[0], quadratic_instance, 1.0, form="other")


class TestDoubling:
    def test_eps_cap(self):
        assert doubling_eps_cap(0.1, 1.0, 1.0, 2) == pytest.approx(0.01 / (32 * 2 * 16))

    def test_weight_of_constant(self, grid):
        w = transform_weight(affine_solution(grid, 1.0), 0.5)
        np.testing.assert_allclose(w.values, 2.0**-0.5)
        np.testing.assert_allclose(w.gradient, 0.0)

    def test_alpha_range(self, quadratic_instance, grid):
        with pytest.raises(PreconditionViolation):
            doubling_contact(quadratic_instance, affine_solution(grid, 0.5), (0.0, 0.0), 0.2, 1.5)

    def test_failed_claim_is_attributed_to_eps(self, quadratic_instance, grid):
        rec = doubling_contact(quadratic_instance, affine_solution(grid, 0.5), (0.0, 0.0), 0.2, 0.1)
        np.testing.assert_allclose(rec.contact, [0.0, 0.0], atol=1e-12)
        assert rec.hypothesis_holds
        assert not rec.conditions.eps_ok
        assert not rec.claims["claim1"].passed
        assert rec.attribution == "eps"
        with pytest.raises(ClaimViolation):
            rec.raise_for_claims()

    def test_large_gradient_filter(self, quadratic_instance, grid):
        rec = doubling_contact(quadratic_instance, affine_solution(grid, 0.5), (0.0, 0.0), 0.2, 0.1)
        result = large_gradient_filter([rec])
        assert not result.all_retained
        assert result.retention_rate == 0.0
        assert large_gradient_filter([]).retention_rate == 1.0
