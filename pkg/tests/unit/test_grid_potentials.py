import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sectionlab.core.grid import Grid, inner_boundary, outer_boundary
from sectionlab.core.potentials import (
    StructuralConstants,
    cofactor,
    eval_derivatives,
    make_potential,
    quadratic_form,
)
from sectionlab.utils.errors import (
    BoundaryStencilWarning,
    NotPSD,
    OutOfDomain,
    PreconditionViolation,
    SingularHessian,
)


class TestGrid:
    def test_box_has_origin_node(self):
        grid = Grid.box(2, 1.5, 64)
        idx = grid.nearest_index((0.0, 0.0))
        assert idx == (32, 32)
        np.testing.assert_allclose(grid.point(idx), [0.0, 0.0], atol=1e-12)

    def test_cell_measure_and_shape(self):
        grid = Grid.box(3, 1.0, 10)
        assert grid.shape == (11, 11, 11)
        assert grid.cell_measure == pytest.approx(0.2**3)

    def test_box_per_axis_widths(self):
        grid = Grid.box(2, (3.0, 0.75), 32)
        assert grid.spacing == pytest.approx((0.1875, 0.046875))
        assert grid.nearest_index((0.0, 0.0)) == (16, 16)
        assert grid.cell_measure == pytest.approx(0.1875 * 0.046875)

    def test_stretched_box_pulls_back_eccentric(self):
        s = 16.0
        stretched = Grid.box(2, (1.5 * np.sqrt(s), 1.5 / np.sqrt(s)), 32)
        eccentric = make_potential("eccentric", stretched, s=s)
        quadratic = make_potential("quadratic", Grid.box(2, 1.5, 32))
        np.testing.assert_allclose(eccentric.values, quadratic.values, atol=1e-12)

    def test_too_few_cells(self):
        with pytest.raises(PreconditionViolation):
            Grid.box(2, 1.0, 4)

    def test_nearest_index_outside(self):
        with pytest.raises(OutOfDomain):
            Grid.box(2, 1.0, 16).nearest_index((2.0, 0.0))

    def test_refined_keeps_box(self):
        grid = Grid.box(2, 1.5, 32)
        fine = grid.refined(4)
        assert fine.shape == (129, 129)
        np.testing.assert_allclose(fine.upper, grid.upper)
        assert fine.min_spacing == pytest.approx(grid.min_spacing / 4)

    def test_collar(self):
        grid = Grid.box(2, 1.0, 16)
        collar = grid.collar_mask()
        assert collar[0, 5] and collar[1, 5] and not collar[2, 5]
        assert grid.in_collar((16, 8)) and not grid.in_collar((8, 8))

    def test_boundaries(self):
        mask = np.zeros((9, 9), dtype=bool)
        mask[3:6, 3:6] = True
        assert inner_boundary(mask).sum() == 8
        assert outer_boundary(mask).sum() == 16

    def test_distance_to(self):
        grid = Grid.box(1, 1.0, 10)
        mask = np.zeros(11, dtype=bool)
        mask[0] = True
        assert grid.distance_to(mask)[-1] == pytest.approx(2.0)


class TestPotentials:
    def test_quadratic_exact_fields(self, quadratic_u):
        np.testing.assert_allclose(quadratic_u.values, 0.5 * np.sum(quadratic_u.grid.points**2, axis=-1))
        assert quadratic_u.pinching == (1.0, 1.0)
        assert quadratic_u.kind == "analytic"
        assert quadratic_u.check_pinching()

    def test_cosine_pinching_certificate(self, cosine_u):
        assert cosine_u.pinching == pytest.approx((0.7, 1.3))
        assert cosine_u.check_pinching()
        assert cosine_u.check_convexity() > 0

    def test_sampled_matches_analytic_inside(self, grid):
        exact = make_potential("radial", grid, kappa=0.5)
        sampled = make_potential("radial", grid, sampled=True, kappa=0.5)
        inner = ~grid.collar_mask()
        assert sampled.kind == "sampled"
        assert np.abs(sampled.hessian[inner] - exact.hessian[inner]).max() < 1e-2

    def test_unknown_family(self, grid):
        with pytest.raises(PreconditionViolation):
            make_potential("saddle", grid)

    def test_eccentric_range(self, grid):
        with pytest.raises(PreconditionViolation):
            make_potential("eccentric", grid, s=40.0)

    def test_nonconvex_detected(self, grid):
        saddle = quadratic_form(grid, np.diag([1.0, -1.0]), "saddle")
        with pytest.raises(NotPSD):
            saddle.check_convexity()

    def test_tilt_vanishes_at_base(self, cosine_u):
        tilt = cosine_u.tilt((0.3, -0.2))
        assert tilt.min() > -1e-12
        idx = cosine_u.grid.nearest_index((0.3, -0.2))
        assert tilt[idx] < 1e-3

    def test_boundary_stencil_warning(self, grid):
        sampled = make_potential("quadratic", grid, sampled=True)
        with pytest.warns(BoundaryStencilWarning):
            eval_derivatives(sampled, (1.5, 0.0))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            eval_derivatives(sampled, (0.0, 0.0))

    def test_evaluate_outside(self, quadratic_u):
        with pytest.raises(OutOfDomain):
            quadratic_u.evaluate((3.0, 0.0))


class TestCofactor:
    def test_identity(self, cosine_u):
        field = cofactor(cosine_u)
        assert field.identity_residual(cosine_u.hessian, cosine_u.interior_mask()) < 1e-12

    def test_singular(self, grid):
        flat = quadratic_form(grid, np.diag([1.0, 0.0]), "flat")
        with pytest.raises(SingularHessian):
            cofactor(flat)

    @given(a=st.floats(0.2, 5.0), b=st.floats(0.2, 5.0), c=st.floats(-0.1, 0.1))
    @settings(max_examples=25, deadline=None)
    def test_cofactor_times_hessian_is_det(self, a, b, c):
        grid = Grid.box(2, 1.0, 8)
        u = quadratic_form(grid, np.array([[a, c], [c, b]]), "q")
        field = cofactor(u)
        assert field.identity_residual(u.hessian) < 1e-9 * max(1.0, a * b)


class TestStructuralConstants:
    def test_ordering(self):
        with pytest.raises(PreconditionViolation):
            StructuralConstants(2.0, 1.0, 1.0, 1.0, 6.0)
        with pytest.raises(PreconditionViolation):
            StructuralConstants(1.0, 1.0, 2.0, 1.0, 6.0)

    def test_drift_exponent(self):
        k = StructuralConstants(1.0, 1.0, 1.0, 2.0, 6.0)
        assert k.ellipticity_ratio == 2.0
        assert k.drift_exponent_ok(2, 1.0)
        assert not k.drift_exponent_ok(3, 0.25)
