"""Vitali selection of sections and the growing ink-spots step.

Disjointness and coverage are decided on cell sets, never with tolerances;
every certificate here is an exhaustive scan over grid cells.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from numpy.typing import NDArray

from ..utils.errors import CoverFailure, HypothesisViolation, PreconditionViolation
from ..utils.logging import get_logger
from .potentials import Potential
from .sections import SectionSet, ball_radius_hint, section

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]
HeightAssignment = Callable[[FloatArray], float] | float


def dyadic_class(h: float, H: float) -> int:
    """k >= 1 with H/2^k < h <= H/2^(k-1)."""
    return int(math.floor(math.log2(H / h) + 1e-12)) + 1


def _first_cell(mask: BoolArray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def disjointness_violations(sections: Sequence[SectionSet], workers: int = 1) -> list[tuple[int, int]]:
    """Index pairs of sections sharing at least one cell."""
    pairs = list(combinations(range(len(sections)), 2))

    def overlaps(pair: tuple[int, int]) -> bool:
        return sections[pair[0]].intersects(sections[pair[1]])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            flags = list(pool.map(overlaps, pairs))
    else:
        flags = [overlaps(p) for p in pairs]
    return [p for p, hit in zip(pairs, flags, strict=True) if hit]


@dataclass(frozen=True, eq=False)
class SectionCollection:
    """Sections of one potential, with the dilation K used by the cover."""

    items: list[SectionSet]
    potential: Potential
    K: float
    theta0: float

    def __post_init__(self) -> None:
        if not self.items:
            raise PreconditionViolation("section collection is empty")
        for i, sec in enumerate(self.items):
            grown = section(self.potential, sec.center, 4 * self.theta0 * sec.height)
            if not grown.compactly_contained:
                raise PreconditionViolation(
                    f"item {i}: the {4 * self.theta0:g}-dilate at {sec.center} is not compactly contained"
                )

    @classmethod
    def from_pairs(
        cls,
        potential: Potential,
        pairs: Sequence[tuple[FloatArray | tuple[float, ...], float]],
        K: float,
        theta0: float,
    ) -> SectionCollection:
        items = [
            section(potential, x, h, radius_hint=ball_radius_hint(potential, h)) for x, h in pairs
        ]
        return cls(items, potential, K, theta0)

    @property
    def max_height(self) -> float:
        return max(sec.height for sec in self.items)

    def dilate(self, index: int, factor: float | None = None) -> SectionSet:
        sec = self.items[index]
        scale = self.K if factor is None else factor
        return section(self.potential, sec.center, scale * sec.height)


@dataclass
class VitaliSelection:
    selected: list[int]
    classes: list[int]
    trace: list[dict[str, object]] = field(default_factory=list)
    certificate: bool = False
    uncovered: tuple[int, ...] | None = None


def vitali_select(C: SectionCollection) -> VitaliSelection:
    """Greedy disjoint selection, largest dyadic height class first.

    Within a class items are taken in input order; an item is kept when it
    shares no cell with anything selected before. The certificate states
    that every item lies inside the union of the K-dilates of the selection.
    """
    H = C.max_height
    classes = [dyadic_class(sec.height, H) for sec in C.items]
    occupied = np.zeros(C.potential.grid.shape, dtype=bool)
    selected: list[int] = []
    trace = []
    for k in sorted(set(classes)):
        for i, sec in enumerate(C.items):
            if classes[i] != k or np.any(sec.cells & occupied):
                continue
            selected.append(i)
            occupied |= sec.cells
            trace.append(
                {
                    "class": k,
                    "index": i,
                    "center": " ".join(repr(c) for c in sec.center),
                    "height": sec.height,
                }
            )

    cover = np.zeros_like(occupied)
    for i in selected:
        cover |= C.dilate(i).cells
    uncovered = None
    for sec in C.items:
        missing = sec.cells & ~cover
        if missing.any():
            uncovered = _first_cell(missing)
            break
    result = VitaliSelection(selected, classes, trace, uncovered is None, uncovered)
    logger.info(
        "vitali: %d of %d selected, certificate %s",
        len(selected), len(C.items), "ok" if result.certificate else f"fails at {uncovered}",
    )
    return result


@dataclass
class FiniteCover:
    centers: list[tuple[float, ...]]
    heights: list[float]
    sections: list[SectionSet]
    shrunk: list[SectionSet]
    lower_bound: int

    @property
    def count(self) -> int:
        return len(self.centers)


def _height_of(assignment: HeightAssignment, x: FloatArray) -> float:
    return float(assignment(x)) if callable(assignment) else float(assignment)


def vitali_finite(
    u: Potential, D: BoolArray, assignment: HeightAssignment, K: float
) -> FiniteCover:
    """Finite cover of the cells of ``D`` by S(x_i, h(x_i)) with S(x_i, h(x_i)/K) disjoint.

    Raises:
        PreconditionViolation: empty D, or an assigned section touches the collar.
        CoverFailure: a cell of D escapes the selected sections.
    """
    grid = u.grid
    if not D.any():
        raise PreconditionViolation("cover domain is empty")
    points = grid.points[D]
    heights = [_height_of(assignment, x) for x in points]
    if min(heights) <= 0:
        raise PreconditionViolation("assigned heights must be positive")

    H = max(heights)
    order = sorted(range(len(points)), key=lambda i: (dyadic_class(heights[i], H), i))
    occupied = np.zeros(grid.shape, dtype=bool)
    chosen: list[int] = []
    shrunk: list[SectionSet] = []
    for i in order:
        small = section(u, points[i], heights[i] / K, radius_hint=ball_radius_hint(u, heights[i] / K))
        if np.any(small.cells & occupied):
            continue
        chosen.append(i)
        shrunk.append(small)
        occupied |= small.cells

    sections, cover = [], np.zeros(grid.shape, dtype=bool)
    for i in chosen:
        full = section(u, points[i], heights[i], radius_hint=ball_radius_hint(u, heights[i]))
        if not full.compactly_contained:
            raise PreconditionViolation(f"section at {tuple(points[i])} is not compactly contained")
        sections.append(full)
        cover |= full.cells
    missing = D & ~cover
    if missing.any():
        raise CoverFailure(_first_cell(missing))

    largest = max(sec.measure for sec in sections)
    lower = math.ceil(D.sum() * grid.cell_measure / largest)
    logger.debug("finite cover: %d sections, lower bound %d", len(chosen), lower)
    return FiniteCover(
        centers=[tuple(float(c) for c in points[i]) for i in chosen],
        heights=[heights[i] for i in chosen],
        sections=sections,
        shrunk=shrunk,
        lower_bound=lower,
    )


# -- growing ink spots ----------------------------------------------------


@dataclass
class InkSpotsReport:
    delta: float
    E_measure: float
    F_measure: float
    S_measure: float
    sampled_sections: int
    min_multiplicity: int
    c2: float | None = None
    under_approximation: bool = True

    @property
    def ratio(self) -> float:
        return self.E_measure / self.F_measure if self.F_measure > 0 else 0.0

    @property
    def proper_nesting(self) -> bool:
        """|E| < |F| < |S|."""
        return self.E_measure < self.F_measure < self.S_measure

    @property
    def bound(self) -> float | None:
        return None if self.c2 is None else 1.0 - self.c2 * self.delta

    @property
    def conclusion_ok(self) -> bool | None:
        if self.c2 is None:
            return None
        return self.E_measure <= self.bound * self.F_measure + 1e-12

    def summary(self) -> dict[str, object]:
        return {
            "delta": self.delta,
            "E": self.E_measure,
            "F": self.F_measure,
            "S": self.S_measure,
            "ratio": self.ratio,
            "c2": self.c2,
            "conclusion_ok": self.conclusion_ok,
            "proper_nesting": self.proper_nesting,
            "sampled_sections": self.sampled_sections,
            "min_multiplicity": self.min_multiplicity,
            "lattice_sampled": self.under_approximation,
        }


def _lattice_sections(
    u: Potential, base: SectionSet, levels: int, stride: int
) -> Iterator[tuple[SectionSet, float]]:
    """Sections at heights h/2, ..., h/2^levels on every ``stride``-th member node, kept when inside ``base``."""
    idx = np.argwhere(base.cells)
    lattice = idx[np.all(idx % stride == 0, axis=1)]
    for level in range(1, levels + 1):
        t = base.height / 2**level
        hint = ball_radius_hint(u, t)
        for node in lattice:
            T = section(u, u.grid.point(tuple(node)), t, radius_hint=hint)
            if T.count == 0 or np.any(T.cells & ~base.cells):
                continue
            yield T, t


def _dense_in(T: SectionSet, E: BoolArray, delta: float) -> bool:
    return bool((T.cells & E).sum() > (1 - delta) * T.count)


def dense_sections_hull(
    u: Potential, E: BoolArray, base: SectionSet, delta: float, levels: int = 4, stride: int = 2
) -> BoolArray:
    """E together with every lattice section of ``base`` that is (1 - delta)-dense in E.

    The ink-spots step sees the same lattice, so hypothesis (i) holds for
    (E, hull) by construction.
    """
    if not 0 < delta < 1:
        raise PreconditionViolation("delta must lie in (0, 1)")
    hull = E & base.cells
    for T, _ in _lattice_sections(u, base, levels, stride):
        if _dense_in(T, E, delta):
            hull |= T.cells
    return hull


def ink_spots_step(
    u: Potential,
    E: BoolArray,
    F: BoolArray,
    base: SectionSet,
    delta: float,
    c2: float | None = None,
    K_hat: float | None = None,
    levels: int = 4,
    stride: int = 2,
) -> InkSpotsReport:
    """Check both hypotheses of the ink-spots step and measure |E|/|F|.

    Hypothesis (ii), |E| <= (1 - delta)|S|, is exact. Hypothesis (i) is
    tested on sections centred on every ``stride``-th member node of ``S``
    with heights h/2, ..., h/2^levels: a sampled section T inside S with
    |T n E| > (1 - delta)|T| must lie inside F.

    Raises:
        PreconditionViolation: E, F, S not nested, or S(0, K_hat h) not compact.
        HypothesisViolation: ``"ii"`` with the density, or ``"i"`` with the
            (center, height) of the offending section.
    """
    if not 0 < delta < 1:
        raise PreconditionViolation("delta must lie in (0, 1)")
    if np.any(E & ~F) or np.any(F & ~base.cells):
        raise PreconditionViolation("need E inside F inside S")
    if K_hat is not None and not section(u, base.center, K_hat * base.height).compactly_contained:
        raise PreconditionViolation(f"S(x, {K_hat:g} h) is not compactly contained")
    cm = u.grid.cell_measure
    E_measure = float(E.sum() * cm)
    if E_measure > (1 - delta) * base.measure:
        raise HypothesisViolation("ii", E_measure / base.measure)

    multiplicity = np.zeros(u.grid.shape, dtype=int)
    sampled = 0
    for T, t in _lattice_sections(u, base, levels, stride):
        sampled += 1
        multiplicity += T.cells
        if _dense_in(T, E, delta) and np.any(T.cells & ~F):
            raise HypothesisViolation("i", (T.center, t))

    report = InkSpotsReport(
        delta=delta,
        E_measure=E_measure,
        F_measure=float(F.sum() * cm),
        S_measure=base.measure,
        sampled_sections=sampled,
        min_multiplicity=int(multiplicity[base.cells].min()),
        c2=c2,
    )
    logger.debug("ink spots: |E|/|F| = %.4f over %d sampled sections", report.ratio, sampled)
    return report


def calibrate_ink_constant(reports: Sequence[InkSpotsReport], safety: float = 0.5) -> float:
    """c2 = safety * min (1 - |E|/|F|)/delta over a calibration batch."""
    values = [(1.0 - r.ratio) / r.delta for r in reports if r.F_measure > 0]
    if not values:
        raise PreconditionViolation("calibration batch has no report with |F| > 0")
    c2 = safety * min(values)
    logger.info("ink-spots constant c2 = %.4g from %d reports", c2, len(values))
    return c2
