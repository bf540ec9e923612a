import math

import numpy as np
import pytest

from sectionlab.experiments.estimates import (
    HarnackQuotient,
    RunStatus,
    admissible_height,
    calibrate_decay_bound,
    calibrate_harnack_constant,
    chain_exponent,
    chained_harnack_run,
    cover_growth_spread,
    critical_density_run,
    harnack_quotient_run,
    power_decay_run,
    rescaled_critical_density,
)
from sectionlab.experiments.solutions import affine_solution, make_sample, paraboloid_solution, radial_solution
from sectionlab.utils.errors import (
    HeightBudgetExceeded,
    HypothesisViolation,
    NormBudgetExceeded,
    PreconditionViolation,
)


def _sample(P, v):
    return make_sample(P, v, "test")


class TestCriticalDensity:
    def test_dense_constant_passes(self, quadratic_instance, grid):
        result = critical_density_run(quadratic_instance, _sample(quadratic_instance, affine_solution(grid, 10.0)), 1, 2.0, 0.2, 0.05)
        assert result.status is RunStatus.PASS
        assert result.density == 1.0

    def test_sparse_is_not_applicable(self, quadratic_instance, grid):
        result = critical_density_run(quadratic_instance, _sample(quadratic_instance, affine_solution(grid, 3.0)), 1, 2.0, 0.2, 0.05)
        assert result.status is RunStatus.NOT_APPLICABLE
        assert result.violations == 0

    def test_steep_well_fails(self, quadratic_instance, grid):
        sample = _sample(quadratic_instance, paraboloid_solution(grid, 1.0, 40.0))
        result = critical_density_run(quadratic_instance, sample, 1, 2.0, 0.2, 1e3)
        assert result.status is RunStatus.FAIL
        assert result.violations > 0

    def test_norm_budget(self, quadratic_instance, grid):
        sample = _sample(quadratic_instance, paraboloid_solution(grid, 1.0, 40.0))
        with pytest.raises(NormBudgetExceeded):
            critical_density_run(quadratic_instance, sample, 1, 2.0, 0.2, 0.05)

    def test_normalized_frame(self, quadratic_instance, grid):
        sample = _sample(quadratic_instance, affine_solution(grid, 10.0))
        run = rescaled_critical_density(quadratic_instance, sample, 1, 2.0, 0.2, 0.05)
        assert run.rescaled.normalized_ok()
        assert run.result.status is RunStatus.PASS
        assert run.result.measured_norm < 1e-12


class TestPowerDecay:
    def test_hypothesis(self, quadratic_instance, grid):
        with pytest.raises(HypothesisViolation):
            power_decay_run(quadratic_instance, _sample(quadratic_instance, affine_solution(grid, 2.0)))

    def test_bounded_solution_has_empty_tail(self, quadratic_instance, grid):
        result = power_decay_run(quadratic_instance, _sample(quadratic_instance, affine_solution(grid, 0.5)))
        assert result.status is RunStatus.PASS
        assert result.eps_hat is None
        assert result.bound_ok()

    def test_radial_tail(self, quadratic_instance, grid):
        v = radial_solution(grid, 1.0, 0.05, q=1.0, normalized=False)
        result = power_decay_run(quadratic_instance, _sample(quadratic_instance, v))
        assert result.status is RunStatus.PASS
        assert result.eps_hat > 1.5
        assert result.monotone
        assert result.bound_ok()
        assert result.table[1].ink_ratio is not None

    def test_frozen_bound_on_separate_samples(self, quadratic_instance, grid):
        calibration = power_decay_run(quadratic_instance, _sample(quadratic_instance, radial_solution(grid, 1.0, 0.05, normalized=False)))
        eps_hat, C1 = calibrate_decay_bound([calibration])
        assert eps_hat == calibration.eps_hat
        assert C1 == pytest.approx(1.25 * calibration.C1)

        shifted = radial_solution(grid, 0.5, 0.05, centre=np.array([0.09375, 0.0]), normalized=False)
        lighter = power_decay_run(quadratic_instance, _sample(quadratic_instance, shifted))
        assert lighter.dominated_by(eps_hat, C1)

        heavier = power_decay_run(quadratic_instance, _sample(quadratic_instance, radial_solution(grid, 0.5, 0.05, q=1.5, normalized=False)))
        assert heavier.bound_ok()
        assert not heavier.dominated_by(eps_hat, C1)

    def test_frozen_bound_needs_a_fit(self, quadratic_instance, grid):
        flat = power_decay_run(quadratic_instance, _sample(quadratic_instance, affine_solution(grid, 0.5)))
        with pytest.raises(PreconditionViolation):
            calibrate_decay_bound([flat])

    def test_opt_in_norm_budget(self, quadratic_instance, grid):
        v = radial_solution(grid, 1.0, 0.05, q=1.0, normalized=False)
        with pytest.raises(NormBudgetExceeded):
            power_decay_run(quadratic_instance, _sample(quadratic_instance, v), eps4=1e-6)


class TestHarnack:
    def test_admissible_height(self):
        assert admissible_height(0.0, 0.0, 0.05, 1.0, 2, 6.0) == math.inf
        assert admissible_height(1.0, 0.0, 0.05, 1.0, 2, 6.0) == pytest.approx(0.05**3)
        assert admissible_height(0.0, 0.5, 0.05, 1.0, 2, 6.0) == pytest.approx(0.01)
        with pytest.raises(PreconditionViolation):
            admissible_height(1.0, 0.0, 0.05, 0.5, 2, 2.0)

    def test_quotient_of_constant(self, quadratic_instance, grid, origin):
        sample = _sample(quadratic_instance, affine_solution(grid, 2.0))
        q = harnack_quotient_run(quadratic_instance, sample, origin, 0.2, 0.4, C=1.5)
        assert q.quotient == pytest.approx(1.0)
        assert q.bound_ok is True

    def test_height_budget(self, quadratic_instance, grid, origin):
        sample = _sample(quadratic_instance, affine_solution(grid, 2.0))
        with pytest.raises(HeightBudgetExceeded):
            harnack_quotient_run(quadratic_instance, sample, origin, 0.4, 0.2)

    def test_calibration(self):
        quotients = [HarnackQuotient(0.1, 2.0, 2.0, 0.0, 1.0), HarnackQuotient(0.1, 3.0, 2.0, 0.0, 1.5)]
        assert calibrate_harnack_constant(quotients) == pytest.approx(3.0)
        with pytest.raises(PreconditionViolation):
            calibrate_harnack_constant([])

    def test_chain_exponent(self):
        assert chain_exponent(0.4, 0.1, 2) == pytest.approx(4.0)
        assert chain_exponent(0.05, 0.1, 2) == 1.0

    def test_single_link_chain(self, quadratic_instance, grid, origin):
        sample = _sample(quadratic_instance, affine_solution(grid, 2.0))
        report = chained_harnack_run(quadratic_instance, sample, origin, 0.2, 0.2, C=1.0, K=32.0)
        assert report.N == 1.0
        assert report.passed
        assert report.cover_count >= report.details["cover_lower_bound"]
        assert report.links_ok
        assert report.chain_length >= 1

    def test_chain_at_h0_is_single_section_bound(self, quadratic_instance, grid, origin):
        sample = _sample(quadratic_instance, affine_solution(grid, 1.4, np.array([1.0, 0.0])))
        single = harnack_quotient_run(quadratic_instance, sample, origin, 0.2, 0.2, C=1.5)
        report = chained_harnack_run(quadratic_instance, sample, origin, 0.2, 0.2, C=1.5, K=32.0)
        assert report.sup == single.sup
        assert report.chained_bound == pytest.approx(1.5 * (single.inf + math.sqrt(0.2) * single.f_norm), rel=1e-12)

    def test_failing_link_fails_chain(self, quadratic_instance, grid, origin):
        # sup/inf over S(0, h/8) is about 1.309 <= 1.07^4, but the link at x1 = -0.1875 reaches 1.08
        sample = _sample(quadratic_instance, affine_solution(grid, 1.4, np.array([1.0, 0.0])))
        report = chained_harnack_run(quadratic_instance, sample, origin, 0.2, 0.05, C=1.07, K=32.0)
        assert report.N == pytest.approx(4.0)
        assert not report.links_ok
        assert report.worst_link > 1.07
        assert report.details["worst_link"] == report.worst_link
        assert not report.passed

    def test_constant_chain_over_heights(self, quadratic_instance, grid, origin):
        sample = _sample(quadratic_instance, affine_solution(grid, 2.0))
        reports = [chained_harnack_run(quadratic_instance, sample, origin, r * 0.05, 0.05, C=1.0, K=32.0) for r in (1, 2, 4)]
        assert all(r.passed and r.links_ok for r in reports)
        assert all(r.cover_count == len(r.links) for r in reports)
        assert reports[0].cover_count < reports[1].cover_count < reports[2].cover_count
        assert reports[-1].link_bound == pytest.approx(2.0)
        ratios = [r.cover_ratio for r in reports]
        assert cover_growth_spread(reports) == pytest.approx(max(ratios) / min(ratios))

    def test_links_must_stay_below_h0(self, quadratic_instance, grid, origin):
        sample = _sample(quadratic_instance, affine_solution(grid, 2.0))
        with pytest.raises(PreconditionViolation):
            chained_harnack_run(quadratic_instance, sample, origin, 0.2, 0.05, C=1.0, K=32.0, tau=0.2)
