"""Estimate runs on forward-constructed solutions.

Each run checks its hypotheses first. A run whose hypothesis fails reports
``NOT_APPLICABLE`` and asserts nothing.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from ..core.covering import FiniteCover, vitali_finite
from ..core.normalization import (
    ProblemInstance,
    RescaledInstance,
    john_normalize,
    pullback_field,
    rescale_problem,
)
from ..core.potentials import GridFunction
from ..core.sections import section
from ..utils.errors import (
    FitDegenerate,
    HeightBudgetExceeded,
    HypothesisViolation,
    NormBudgetExceeded,
    PreconditionViolation,
)
from ..utils.logging import get_logger
from ..utils.numerics import loglog_fit, lp_norm
from .solutions import SolutionSample

logger = get_logger(__name__)


class RunStatus(StrEnum):
    PASS = "pass"
    FAIL = "fail"
    NOT_APPLICABLE = "not_applicable"


# -- critical density -----------------------------------------------------


@dataclass
class CriticalDensityResult:
    status: RunStatus
    density: float
    threshold: float
    measured_norm: float
    violations: int


def critical_density_run(
    P: ProblemInstance, sample: SolutionSample, k: int, M: float, delta: float, eps3: float
) -> CriticalDensityResult:
    """If |{v > M^(k+1)} n S| > (1 - delta)|S| then v > M^k on S, with S = ``P.section``.

    Raises:
        NormBudgetExceeded: ||b||_n + ||c^-||_n + ||f^+||_n > eps3 on S.
    """
    norms = sample.instance(P).data_norms()
    measured = norms["b_Ln"] + norms["c_minus_Ln"] + norms["f_plus_Ln"]
    if measured > eps3:
        raise NormBudgetExceeded(measured, eps3)
    cells = P.section.cells
    v = sample.v.values[cells]
    density = float(np.mean(v > M ** (k + 1)))
    if density <= 1 - delta:
        logger.warning("critical density %.3f <= %.3f: run not applicable", density, 1 - delta)
        return CriticalDensityResult(RunStatus.NOT_APPLICABLE, density, 1 - delta, measured, 0)
    violations = int(np.sum(v <= M**k))
    status = RunStatus.PASS if violations == 0 else RunStatus.FAIL
    return CriticalDensityResult(status, density, 1 - delta, measured, violations)


@dataclass
class RescaledDensityResult:
    rescaled: RescaledInstance
    result: CriticalDensityResult


def rescaled_critical_density(
    P: ProblemInstance,
    sample: SolutionSample,
    k: int,
    M: float,
    delta: float,
    eps3: float,
    resolution: int | None = None,
) -> RescaledDensityResult:
    """Critical-density run after moving ``P.section`` to the normalized frame."""
    Ps = sample.instance(P)
    N = john_normalize(P.section)
    rescaled = rescale_problem(Ps, N, resolution=resolution)
    v_t = pullback_field(sample.v, rescaled.map, rescaled.instance.grid)
    moved = SolutionSample(v_t, rescaled.instance.f, sample.family, sample.params)
    return RescaledDensityResult(rescaled, critical_density_run(rescaled.instance, moved, k, M, delta, eps3))


# -- power decay ----------------------------------------------------------


@dataclass
class DecayRow:
    t: float
    measure: float
    fraction: float
    cells: int
    ink_ratio: float | None = None


@dataclass
class PowerDecayResult:
    status: RunStatus
    eps_hat: float | None
    C1: float | None
    table: list[DecayRow]
    measured_norm: float
    monotone: bool

    def bound_ok(self) -> bool:
        """The table against its own fit."""
        if self.eps_hat is None:
            return all(r.cells == 0 for r in self.table if r.t >= 1)
        return self.dominated_by(self.eps_hat, self.C1)

    def dominated_by(self, eps_hat: float, C1: float) -> bool:
        """Every row satisfies fraction <= C1 t^-eps_hat for a bound frozen elsewhere."""
        return all(r.fraction <= C1 * r.t ** (-eps_hat) * (1 + 1e-9) for r in self.table)


def power_decay_run(
    P: ProblemInstance,
    sample: SolutionSample,
    eps4: float | None = None,
    min_cells: int = 10,
    max_levels: int = 40,
) -> PowerDecayResult:
    """Distribution function of v on S = ``P.section`` over t = 1, 2, 4, ...

    The tail fit uses t >= 2 rows with at least ``min_cells`` cells. C1 is the
    smallest constant with |{v > t} n S| <= C1 t^-eps |S| on the whole table.

    Raises:
        HypothesisViolation: inf_S v > 1.
        NormBudgetExceeded: ||b||_n + ||c||_n + ||f||_n > eps4 (when ``eps4`` is set).
    """
    cells = P.section.cells
    v = sample.v.values[cells]
    if v.min() > 1.0:
        raise HypothesisViolation("inf over S of v <= 1", float(v.min()))
    norms = sample.instance(P).data_norms()
    measured = norms["b_Ln"] + norms["c_Ln"] + norms["f_Ln"]
    if eps4 is not None and measured > eps4:
        raise NormBudgetExceeded(measured, eps4)

    cm = P.grid.cell_measure
    total = P.section.measure
    table: list[DecayRow] = []
    for j in range(max_levels):
        t = 2.0**j
        count = int(np.sum(v > t))
        table.append(DecayRow(t, count * cm, count * cm / total, count))
        if count == 0:
            break
    for prev, row in zip(table, table[1:], strict=False):
        row.ink_ratio = row.measure / prev.measure if prev.measure > 0 else None
    monotone = all(b.fraction <= a.fraction for a, b in zip(table, table[1:], strict=False))

    tail = [r for r in table if r.t >= 2 and r.cells >= min_cells]
    try:
        fit = loglog_fit([r.t for r in tail], [r.fraction for r in tail])
    except FitDegenerate:
        if all(r.cells == 0 for r in table if r.t >= 2):
            return PowerDecayResult(RunStatus.PASS, None, None, table, measured, monotone)
        raise
    eps_hat = -fit.slope
    C1 = max(r.fraction * r.t**eps_hat for r in table)
    status = RunStatus.PASS if eps_hat > 0 and monotone else RunStatus.FAIL
    logger.info("power decay: eps_hat=%.4f, C1=%.4g over %d tail rows", eps_hat, C1, len(tail))
    return PowerDecayResult(status, eps_hat, C1, table, measured, monotone)


def calibrate_decay_bound(results: Sequence[PowerDecayResult], safety: float = 1.25) -> tuple[float, float]:
    """Frozen (eps_hat, C1) from a calibration batch.

    eps_hat is the smallest fitted exponent; C1 is ``safety`` times the largest
    fraction * t^eps_hat over every calibration row.
    """
    fitted = [r for r in results if r.eps_hat is not None]
    if not fitted:
        raise PreconditionViolation("calibration batch has no fitted tail")
    eps_hat = min(r.eps_hat for r in fitted)
    C1 = safety * max(row.fraction * row.t**eps_hat for r in results for row in r.table)
    logger.info("decay bound frozen: eps_hat=%.4f, C1=%.4g from %d runs", eps_hat, C1, len(fitted))
    return eps_hat, C1


# -- Harnack --------------------------------------------------------------


def admissible_height(
    b_Lp: float, c_Ln: float, eps5: float, alpha_star: float, n: int, p: float
) -> float:
    """Largest h0 with h0^(a/(1+a) - n/(2p)) ||b||_p <= eps5 and h0^(1/2) ||c||_n <= eps5."""
    power = alpha_star / (1 + alpha_star) - n / (2 * p)
    if power <= 0:
        raise PreconditionViolation(f"p={p} too small for alpha*={alpha_star}")
    from_b = math.inf if b_Lp == 0 else (eps5 / b_Lp) ** (1 / power)
    from_c = math.inf if c_Ln == 0 else (eps5 / c_Ln) ** 2
    return min(from_b, from_c)


@dataclass
class HarnackQuotient:
    height: float
    sup: float
    inf: float
    f_norm: float
    quotient: float
    bound_ok: bool | None = None


def harnack_quotient_run(
    P: ProblemInstance,
    sample: SolutionSample,
    x0: Sequence[float] | np.ndarray,
    h: float,
    h0: float,
    C: float | None = None,
) -> HarnackQuotient:
    """sup / (inf + h^(1/2) ||f||_n(S)) over S(x0, h/8), with S = S(x0, h).

    Raises:
        HeightBudgetExceeded: h > h0.
    """
    if h > h0 * (1 + 1e-12):
        raise HeightBudgetExceeded(h, h0)
    u = P.potential
    S = section(u, x0, h)
    inner = section(u, x0, h / 8)
    if inner.count == 0:
        raise PreconditionViolation(f"S(x0, {h / 8:g}) contains no nodes")
    values = sample.v.values[inner.cells]
    f_norm = lp_norm(sample.f, S.cells, u.grid.cell_measure, u.dim)
    sup, inf = float(values.max()), float(values.min())
    quotient = sup / (inf + math.sqrt(h) * f_norm)
    return HarnackQuotient(h, sup, inf, f_norm, quotient, None if C is None else quotient <= C)


def calibrate_harnack_constant(quotients: Sequence[HarnackQuotient], safety: float = 2.0) -> float:
    """Frozen C = safety * max quotient over a calibration batch."""
    if not quotients:
        raise PreconditionViolation("empty calibration batch")
    C = safety * max(q.quotient for q in quotients)
    logger.info("Harnack constant C = %.4g from %d quotients", C, len(quotients))
    return C


@dataclass
class ChainedReport:
    height: float
    h0: float
    N: float
    cover_count: int
    cover_ratio: float
    sup: float
    inf: float
    f_term: float
    chained_bound: float
    passed: bool
    links: list[HarnackQuotient] = field(default_factory=list)
    chain_length: int = 0
    link_bound: float = math.inf
    details: dict[str, float] = field(default_factory=dict)

    @property
    def links_ok(self) -> bool:
        return all(q.bound_ok for q in self.links)

    @property
    def worst_link(self) -> float:
        return max((q.quotient for q in self.links), default=math.nan)


def chain_exponent(h: float, h0: float, n: int) -> float:
    """N(h, h0) = max{1, (h/h0)^(n/2)}."""
    return max(1.0, (h / h0) ** (n / 2))


def _chain_length(cover: FiniteCover, start: tuple[int, ...], end: tuple[int, ...]) -> int:
    """Fewest cover sections in an overlapping chain from ``start`` to ``end``; 0 if none."""
    masks = np.array([s.cells.ravel() for s in cover.sections], dtype=np.int64)
    overlaps = sp.csr_matrix(masks @ masks.T > 0)
    hops = shortest_path(overlaps, directed=False, unweighted=True)
    first = [i for i, s in enumerate(cover.sections) if s.cells[start]]
    last = [j for j, s in enumerate(cover.sections) if s.cells[end]]
    best = min((hops[i, j] for i in first for j in last), default=math.inf)
    return 0 if math.isinf(best) else int(best) + 1


def chained_harnack_run(
    P: ProblemInstance,
    sample: SolutionSample,
    x0: Sequence[float] | np.ndarray,
    h: float,
    h0: float,
    C: float,
    K: float,
    tau: float = 1.0 / 16.0,
) -> ChainedReport:
    """Harnack on S(x0, h/8) for h above h0 by chaining single-section estimates.

    S(x0, h/8) is covered by sections S(c_i, tau h0). Each one is the inner
    section of a link run at height 8 tau h0 <= h0, which must satisfy
    sup <= C (inf + (8 tau h0)^(1/2) ||f||). Along the shortest chain of
    overlapping links from the maximum of v to its minimum this gives
    ``sup <= C^L inf + phi (C + ... + C^L)`` with phi the largest link f-term.
    The run passes when every link holds and sup stays below both that bound
    and C^N (inf + h^(1/2) ||f||).

    Raises:
        PreconditionViolation: tau > 1/8, so links would exceed h0.
    """
    if tau > 0.125:
        raise PreconditionViolation(f"tau={tau:g} puts link heights above h0")
    u = P.potential
    n = u.dim
    N = chain_exponent(h, h0, n)
    S = section(u, x0, h)
    D = section(u, x0, h / 8)
    cover = vitali_finite(u, D.cells, tau * h0, K)
    link_height = 8 * tau * h0
    links = [harnack_quotient_run(P, sample, c, link_height, h0, C) for c in cover.centers]

    values = np.where(D.cells, sample.v.values, np.nan)
    sup, inf = float(np.nanmax(values)), float(np.nanmin(values))
    f_term = math.sqrt(h) * lp_norm(sample.f, S.cells, u.grid.cell_measure, n)
    bound = C**N * (inf + f_term)

    top = np.unravel_index(int(np.nanargmax(values)), values.shape)
    bottom = np.unravel_index(int(np.nanargmin(values)), values.shape)
    L = _chain_length(cover, top, bottom)
    phi = max(math.sqrt(link_height) * q.f_norm for q in links)
    link_bound = C**L * inf + phi * sum(C**j for j in range(1, L + 1)) if L else math.inf

    ratio = cover.count / max(1.0, (h / h0) ** (n / 2))
    links_ok = all(q.bound_ok for q in links)
    tol = 1 + 1e-12
    passed = links_ok and sup <= bound * tol and sup <= link_bound * tol
    worst = max(q.quotient for q in links)
    logger.info(
        "chained Harnack h/h0=%.3g: N=%.3g, %d links (worst %.4g), chain length %d",
        h / h0, N, cover.count, worst, L,
    )
    details = {
        "cover_lower_bound": float(cover.lower_bound),
        "worst_link": worst,
        "link_f_term": phi,
        **{f"link_{i}": q.quotient for i, q in enumerate(links)},
    }
    return ChainedReport(
        height=h,
        h0=h0,
        N=N,
        cover_count=cover.count,
        cover_ratio=ratio,
        sup=sup,
        inf=inf,
        f_term=f_term,
        chained_bound=bound,
        passed=passed,
        links=links,
        chain_length=L,
        link_bound=link_bound,
        details=details,
    )


def cover_growth_spread(reports: Sequence[ChainedReport]) -> float:
    """max/min of cover_count / (h/h0)^(n/2) across a height sweep."""
    ratios = [r.cover_ratio for r in reports]
    if not ratios or min(ratios) <= 0:
        raise PreconditionViolation("no cover counts to compare")
    return max(ratios) / min(ratios)
