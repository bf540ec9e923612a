import numpy as np
import pytest

from sectionlab.core.covering import (
    InkSpotsReport,
    SectionCollection,
    calibrate_ink_constant,
    dense_sections_hull,
    disjointness_violations,
    dyadic_class,
    ink_spots_step,
    vitali_finite,
    vitali_select,
)
from sectionlab.core.sections import section
from sectionlab.utils.errors import HypothesisViolation, PreconditionViolation

PAIRS = [((0.0, 0.0), 0.01), ((0.05, 0.0), 0.01), ((0.5, 0.0), 0.005)]


class TestDyadicClass:
    @pytest.mark.parametrize(("h", "k"), [(1.0, 1), (0.6, 1), (0.5, 2), (0.3, 2), (0.25, 3)])
    def test_classes(self, h, k):
        assert dyadic_class(h, 1.0) == k


class TestVitali:
    def test_selection_and_certificate(self, quadratic_u):
        C = SectionCollection.from_pairs(quadratic_u, PAIRS, K=32.0, theta0=4.0)
        result = vitali_select(C)
        assert result.selected == [0, 2]
        assert result.classes == [1, 1, 2]
        assert result.certificate
        assert result.uncovered is None
        assert [row["index"] for row in result.trace] == [0, 2]

    def test_certificate_fails_without_dilation(self, quadratic_u):
        C = SectionCollection.from_pairs(quadratic_u, PAIRS, K=1.0, theta0=4.0)
        result = vitali_select(C)
        assert not result.certificate
        assert result.uncovered is not None

    def test_disjointness(self, quadratic_u):
        C = SectionCollection.from_pairs(quadratic_u, PAIRS, K=32.0, theta0=4.0)
        assert disjointness_violations(C.items) == [(0, 1)]
        assert disjointness_violations(C.items, workers=2) == [(0, 1)]

    def test_empty_collection(self, quadratic_u):
        with pytest.raises(PreconditionViolation):
            SectionCollection([], quadratic_u, 32.0, 4.0)

    def test_dilate_must_be_compact(self, quadratic_u):
        with pytest.raises(PreconditionViolation):
            SectionCollection.from_pairs(quadratic_u, [((0.0, 0.0), 0.1)], K=32.0, theta0=4.0)


class TestFiniteCover:
    @pytest.mark.parametrize("assignment", [0.01, lambda x: 0.01 + 0.01 * float(np.linalg.norm(x))])
    def test_cover(self, quadratic_u, origin, assignment):
        D = section(quadratic_u, origin, 0.02).cells
        cover = vitali_finite(quadratic_u, D, assignment, K=4.0)
        union = np.zeros_like(D)
        for sec in cover.sections:
            union |= sec.cells
        assert not np.any(D & ~union)
        assert disjointness_violations(cover.shrunk) == []
        assert cover.count >= cover.lower_bound >= 1

    def test_empty_domain(self, quadratic_u, grid):
        with pytest.raises(PreconditionViolation):
            vitali_finite(quadratic_u, np.zeros(grid.shape, dtype=bool), 0.01, 4.0)

    def test_large_heights(self, quadratic_u, origin):
        D = section(quadratic_u, origin, 0.02).cells
        with pytest.raises(PreconditionViolation):
            vitali_finite(quadratic_u, D, 1.0, 4.0)


class TestInkSpots:
    def test_small_set(self, quadratic_u, origin):
        base = section(quadratic_u, origin, 0.2)
        E = section(quadratic_u, origin, 0.02).cells
        report = ink_spots_step(quadratic_u, E, base.cells, base, 0.2, c2=0.5)
        assert report.ratio == pytest.approx(E.sum() / base.count)
        assert report.conclusion_ok
        assert report.sampled_sections > 0
        assert report.summary()["lattice_sampled"] is True

    def test_dense_set(self, quadratic_u, origin):
        base = section(quadratic_u, origin, 0.2)
        with pytest.raises(HypothesisViolation) as excinfo:
            ink_spots_step(quadratic_u, base.cells, base.cells, base, 0.2)
        assert excinfo.value.hypothesis == "ii"

    def test_escaping_section(self, quadratic_u, origin):
        base = section(quadratic_u, origin, 0.2)
        E = section(quadratic_u, origin, 0.015).cells
        with pytest.raises(HypothesisViolation) as excinfo:
            ink_spots_step(quadratic_u, E, E, base, 0.9)
        assert excinfo.value.hypothesis == "i"

    def test_hull_sits_strictly_between(self, quadratic_u, origin):
        base = section(quadratic_u, origin, 0.2)
        E = section(quadratic_u, origin, 0.015).cells
        F = dense_sections_hull(quadratic_u, E, base, 0.5)
        assert not np.any(E & ~F)
        assert np.any(F & ~E)
        assert np.any(base.cells & ~F)
        assert F[section(quadratic_u, origin, 0.025).cells].all()
        report = ink_spots_step(quadratic_u, E, F, base, 0.5)
        assert report.proper_nesting
        assert report.summary()["proper_nesting"] is True

    def test_hull_is_required(self, quadratic_u, origin):
        base = section(quadratic_u, origin, 0.2)
        E = section(quadratic_u, origin, 0.015).cells
        with pytest.raises(HypothesisViolation) as excinfo:
            ink_spots_step(quadratic_u, E, E, base, 0.5)
        assert excinfo.value.hypothesis == "i"
        _, height = excinfo.value.witness
        assert height in (0.025, 0.0125)

    def test_nesting(self, quadratic_u, origin):
        base = section(quadratic_u, origin, 0.2)
        E = section(quadratic_u, origin, 0.05).cells
        F = section(quadratic_u, origin, 0.02).cells
        with pytest.raises(PreconditionViolation):
            ink_spots_step(quadratic_u, E, F, base, 0.2)

    def test_calibration(self):
        reports = [InkSpotsReport(0.2, 1.0, 10.0, 20.0, 5, 1), InkSpotsReport(0.4, 2.0, 4.0, 20.0, 5, 1)]
        assert calibrate_ink_constant(reports) == pytest.approx(0.5 * 1.25)
        with pytest.raises(PreconditionViolation):
            calibrate_ink_constant([InkSpotsReport(0.2, 0.0, 0.0, 1.0, 0, 0)])
