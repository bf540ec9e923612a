import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sectionlab.utils.errors import ConfigError, ContainmentFailure, FitDegenerate, HypothesisViolation
from sectionlab.utils.numerics import (
    bracket_and_bisect,
    loglog_fit,
    lp_norm,
    root_in,
    symmetric_sqrt,
    unit_ball_volume,
)


class TestLogLogFit:
    @given(slope=st.floats(-3.0, 3.0), coefficient=st.floats(0.1, 10.0))
    @settings(max_examples=30, deadline=None)
    def test_recovers_power_law(self, slope, coefficient):
        x = np.geomspace(0.01, 1.0, 6)
        fit = loglog_fit(x, coefficient * x**slope)
        assert fit.slope == pytest.approx(slope, abs=1e-8)
        assert fit.coefficient == pytest.approx(coefficient, rel=1e-8)

    def test_drops_non_positive(self):
        fit = loglog_fit([0.0, 1.0, 2.0, 4.0], [5.0, 1.0, 2.0, 4.0])
        assert fit.points == 3
        assert fit.slope == pytest.approx(1.0)

    def test_degenerate(self):
        with pytest.raises(FitDegenerate):
            loglog_fit([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestBisection:
    def test_threshold(self):
        assert bracket_and_bisect(lambda c: c <= 3.7, 0.1, 100.0, tol=1e-6) == pytest.approx(3.7, rel=1e-5)

    def test_never_holds(self):
        assert bracket_and_bisect(lambda c: False, 0.5, 2.0) == 0.5

    def test_always_holds(self):
        assert bracket_and_bisect(lambda c: True, 0.5, 2.0) == 2.0

    def test_root(self):
        assert root_in(lambda x: x * x - 2.0, 0.0, 2.0) == pytest.approx(math.sqrt(2.0))


class TestQuadrature:
    def test_lp_norm_of_constant(self):
        mask = np.ones((10, 10), dtype=bool)
        assert lp_norm(np.full((10, 10), 2.0), mask, 0.01, 2) == pytest.approx(2.0)

    def test_lp_norm_of_vectors(self):
        mask = np.ones(4, dtype=bool)
        field = np.tile([3.0, 4.0], (4, 1))
        assert lp_norm(field, mask, 0.25, np.inf) == pytest.approx(5.0)

    def test_empty_mask(self):
        assert lp_norm(np.ones(3), np.zeros(3, dtype=bool), 1.0, 2) == 0.0

    def test_ball_volumes(self):
        assert unit_ball_volume(1) == pytest.approx(2.0)
        assert unit_ball_volume(2) == pytest.approx(math.pi)
        assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0)

    def test_symmetric_sqrt(self):
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        root = symmetric_sqrt(M)
        np.testing.assert_allclose(root @ root, M, atol=1e-12)


class TestErrors:
    def test_structured_details(self):
        err = ConfigError("grid.resolution", "field required")
        assert err.details()["field"] == "grid.resolution"
        assert str(err) == "grid.resolution: field required"

    def test_containment_details(self):
        details = ContainmentFailure(0.5, 3).details()
        assert details["opening"] == 0.5 and details["boundary_count"] == 3

    def test_hypothesis_witness(self):
        err = HypothesisViolation("inf v <= 1", 1.25)
        assert "1.25" in str(err)
        assert err.details()["hypothesis"] == "inf v <= 1"
