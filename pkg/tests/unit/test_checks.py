import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sectionlab.core.checks import (
    aleksandrov_check,
    gradient_estimate_check,
    matrix_ineq_check,
    matrix_sandwich_check,
    set_diameter,
)
from sectionlab.core.sections import section
from sectionlab.utils.errors import NonzeroBoundary, NotPSD, NotSymmetric, PreconditionViolation


def _psd(seed: int, n: int, floor: float = 0.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, n))
    return G @ G.T + floor * np.eye(n)


class TestMatrixInequality:
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 4))
    @settings(max_examples=50, deadline=None)
    def test_trace_dominates_geometric_mean(self, seed, n):
        A, B = _psd(seed, n), _psd(seed + 1, n)
        vectors = np.random.default_rng(seed + 2).normal(size=(5, n))
        report = matrix_ineq_check(A, B, vectors)
        assert report.passed
        assert report.trace_ab >= report.geometric_bound - 1e-9 * max(1.0, report.geometric_bound)

    def test_equality_for_identity(self):
        report = matrix_ineq_check(np.eye(3), 2.0 * np.eye(3))
        assert report.trace_ab == pytest.approx(report.geometric_bound)

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSymmetric):
            matrix_ineq_check(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(2))

    def test_rejects_indefinite(self):
        with pytest.raises(NotPSD):
            matrix_ineq_check(np.diag([1.0, -1.0]), np.eye(2))


class TestSandwich:
    @given(seed=st.integers(0, 10_000), a=st.floats(0.0, 3.0))
    @settings(max_examples=40, deadline=None)
    def test_conclusion_whenever_hypothesis_holds(self, seed, a):
        B = _psd(seed, 3, floor=0.5)
        A = _psd(seed + 1, 3) - a * B
        D = float(np.trace(np.linalg.solve(B, A))) + 0.1
        report = matrix_sandwich_check(A, B, a, D)
        assert report.hypothesis_holds
        assert report.passed

    def test_hypothesis_fails_below(self):
        report = matrix_sandwich_check(-2.0 * np.eye(2), np.eye(2), 1.0, 10.0)
        assert not report.lower_ok
        assert report.passed


class TestEstimates:
    def test_gradient_estimate_on_section(self, quadratic_u, origin):
        S = section(quadratic_u, origin, 0.8)
        for x in [(0.0, 0.0), (0.3, 0.2), (-0.5, 0.4)]:
            assert gradient_estimate_check(quadratic_u, S.cells, x).passed

    def test_gradient_estimate_needs_interior_point(self, quadratic_u, origin):
        S = section(quadratic_u, origin, 0.2)
        with pytest.raises(PreconditionViolation):
            gradient_estimate_check(quadratic_u, S.cells, (1.0, 0.0))

    def test_aleksandrov_on_section(self, quadratic_u, origin):
        S = section(quadratic_u, origin, 0.8)
        result = aleksandrov_check(quadratic_u, S.cells, origin, level=0.8)
        assert result.passed
        assert result.lhs == pytest.approx(0.64)

    def test_aleksandrov_nonzero_boundary(self, quadratic_u, origin):
        S = section(quadratic_u, origin, 0.8)
        with pytest.raises(NonzeroBoundary):
            aleksandrov_check(quadratic_u, S.cells, origin, level=0.0)

    def test_diameter(self):
        square = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]])
        assert set_diameter(square) == pytest.approx(np.sqrt(2.0))
        assert set_diameter(square[:1]) == 0.0
