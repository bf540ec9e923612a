"""Sections S_u(x, h) and the structure constants measured from them.

A section is the strict sublevel set ``{y : u(y) < u(x) + Du(x).(y - x) + h}``
evaluated on grid nodes. The estimators in this module turn sweeps of
sections into the constants (engulfing, size exponent, inclusion, Hoelder
exponent, covering dilations) that the sliding, covering and harness modules
consume.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.spatial import ConvexHull, Delaunay, QhullError

from ..utils.errors import (
    FitDegenerate,
    NotCompactlyContained,
    OutOfDomain,
    PreconditionViolation,
)
from ..utils.logging import get_logger
from ..utils.numerics import bracket_and_bisect, loglog_fit
from .grid import Grid, outer_boundary
from .potentials import Potential

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]
Point = FloatArray | tuple[float, ...]


@dataclass(frozen=True, eq=False)
class SectionSet:
    grid: Grid
    center: tuple[float, ...]
    height: float
    cells: BoolArray
    boundary_cells: BoolArray
    compactly_contained: bool

    @property
    def count(self) -> int:
        return int(self.cells.sum())

    @property
    def measure(self) -> float:
        return self.count * self.grid.cell_measure

    @property
    def closure(self) -> BoolArray:
        return self.cells | self.boundary_cells

    @property
    def points(self) -> FloatArray:
        return self.grid.points[self.cells]

    def max_radius(self) -> float:
        if self.count == 0:
            return 0.0
        return float(np.linalg.norm(self.points - np.asarray(self.center), axis=-1).max())

    def inradius(self) -> float:
        """Distance from the center to the nearest outside neighbour node."""
        outside = self.grid.points[self.boundary_cells]
        if outside.size == 0:
            return math.inf
        return float(np.linalg.norm(outside - np.asarray(self.center), axis=-1).min())

    def contains(self, other: SectionSet) -> bool:
        return not np.any(other.cells & ~self.cells)

    def intersects(self, other: SectionSet) -> bool:
        return bool(np.any(self.cells & other.cells))


def section(u: Potential, x: Point, h: float, radius_hint: float | None = None) -> SectionSet:
    """Cells of S_u(x, h).

    With ``radius_hint`` only a bounding box around ``x`` is scanned; the
    scan falls back to the full grid when a member touches the box edge.

    Raises:
        PreconditionViolation: ``h <= 0``.
        OutOfDomain: ``x`` outside the grid.
    """
    if h <= 0:
        raise PreconditionViolation(f"section height must be positive, got {h}")
    grid = u.grid
    point = np.asarray(x, dtype=float)
    if not grid.contains(point):
        raise OutOfDomain(tuple(point.tolist()))
    base = u.evaluate(point)

    cells = None
    if radius_hint is not None and np.isfinite(radius_hint):
        center = grid.nearest_index(point)
        reach = [int(math.ceil(radius_hint / sp)) + 2 for sp in grid.spacing]
        window = tuple(
            slice(max(c - k, 0), min(c + k + 1, m))
            for c, k, m in zip(center, reach, grid.extents, strict=True)
        )
        tilt = (
            u.values[window]
            - base.value
            - (grid.points[window] - point) @ base.gradient
        )
        local = tilt < h
        if not _touches_window_edge(local, window, grid.extents):
            cells = np.zeros(grid.shape, dtype=bool)
            cells[window] = local
    if cells is None:
        cells = u.values - base.value - (grid.points - point) @ base.gradient < h

    return SectionSet(
        grid=grid,
        center=tuple(float(c) for c in point),
        height=float(h),
        cells=cells,
        boundary_cells=outer_boundary(cells),
        compactly_contained=not bool(np.any(cells & grid.collar_mask())),
    )


def _touches_window_edge(local: BoolArray, window: tuple[slice, ...], extents: tuple[int, ...]) -> bool:
    for axis, (sl, m) in enumerate(zip(window, extents, strict=True)):
        moved = np.moveaxis(local, axis, 0)
        if sl.start > 0 and moved[0].any():
            return True
        if sl.stop < m and moved[-1].any():
            return True
    return False


def ball_radius_hint(u: Potential, h: float) -> float:
    """Radius bound from the smallest Hessian eigenvalue: |y - x| <= sqrt(2h / m)."""
    m = float(np.linalg.eigvalsh(u.hessian[u.interior_mask()]).min())
    if m <= 0:
        return math.inf
    return math.sqrt(2.0 * h / m) * 1.25


def cell_set_is_convex(grid: Grid, cells: BoolArray) -> bool:
    """Every node inside the hull of the members lies within one cell of a member."""
    if cells.sum() < grid.dim + 1:
        return True
    pts = grid.points[cells]
    near = ndimage.binary_dilation(cells, structure=ndimage.generate_binary_structure(grid.dim, grid.dim))
    if grid.dim == 1:
        idx = np.flatnonzero(cells)
        return bool(np.all(near[idx.min() : idx.max() + 1]))
    try:
        hull = Delaunay(pts)
    except QhullError:
        return True
    inside = hull.find_simplex(grid.points.reshape(-1, grid.dim)) >= 0
    return bool(np.all(near.reshape(-1)[inside]))


def require_compact(sec: SectionSet) -> SectionSet:
    if not sec.compactly_contained:
        raise NotCompactlyContained(sec.center, sec.height)
    return sec


# -- volume ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    height: float
    measure: float
    ratio: float
    radius: float


@dataclass
class VolumeSweep:
    rows: list[SweepRow]

    @property
    def min_ratio(self) -> float:
        return min(r.ratio for r in self.rows)

    @property
    def max_ratio(self) -> float:
        return max(r.ratio for r in self.rows)

    @property
    def band(self) -> float:
        return self.max_ratio / self.min_ratio


def volume_ratio_sweep(u: Potential, x: Point, heights: Sequence[float]) -> VolumeSweep:
    """|S_u(x, h)| / h^(n/2) over a height sweep."""
    n = u.dim
    rows = []
    for h in heights:
        sec = require_compact(section(u, x, h, radius_hint=ball_radius_hint(u, h)))
        rows.append(SweepRow(float(h), sec.measure, sec.measure / h ** (n / 2), sec.max_radius()))
    return VolumeSweep(rows)


# -- engulfing ------------------------------------------------------------


@dataclass
class EngulfingEstimate:
    theta0_hat: float
    per_sample: list[float]


def _hull_vertices(points: FloatArray) -> FloatArray:
    if points.shape[1] == 1:
        return np.array([[points.min()], [points.max()]])
    try:
        return points[ConvexHull(points).vertices]
    except QhullError:
        return points


def _engulfing_ratio(u: Potential, sec: SectionSet, chunk: int = 512) -> float:
    """max over x in S, z in S of [u(z) - u(x) - Du(x).(z - x)] / h."""
    members = np.argwhere(sec.cells)
    if members.shape[0] < 2:
        return 1.0
    pts = u.grid.points[sec.cells]
    verts = _hull_vertices(pts)
    vals_v = u.value_at(verts)
    vals_x = u.values[sec.cells]
    grads_x = u.gradient[sec.cells]
    worst = 0.0
    for start in range(0, pts.shape[0], chunk):
        stop = start + chunk
        disp = verts[None, :, :] - pts[start:stop, None, :]
        gaps = vals_v[None, :] - vals_x[start:stop, None] - np.einsum(
            "ijk,ik->ij", disp, grads_x[start:stop]
        )
        worst = max(worst, float(gaps.max()))
    return worst / sec.height


def estimate_engulfing(u: Potential, samples: Iterable[tuple[Point, float]]) -> EngulfingEstimate:
    """Smallest theta >= 2 with S_u(y, h) inside S_u(x, theta h) for all x in S_u(y, h)."""
    per_sample = []
    for y, h in samples:
        require_compact(section(u, y, 2 * h, radius_hint=ball_radius_hint(u, 2 * h)))
        sec = section(u, y, h, radius_hint=ball_radius_hint(u, h))
        per_sample.append(_engulfing_ratio(u, sec))
    theta = max([2.0, *per_sample])
    logger.info("engulfing constant theta0_hat = %.4f over %d samples", theta, len(per_sample))
    return EngulfingEstimate(theta, per_sample)


# -- size exponent --------------------------------------------------------


@dataclass
class SizeExponent:
    mu_hat: float
    C_hat: float
    heights: list[float]
    radii: list[float]


def _sample_members(sec: SectionSet, count: int) -> FloatArray:
    pts = sec.points
    if pts.shape[0] <= count:
        return pts
    step = pts.shape[0] / count
    return pts[(np.arange(count) * step).astype(int)]


def estimate_size_exponent(
    u: Potential,
    normalized: SectionSet,
    samples: FloatArray | None = None,
    heights: Sequence[float] | None = None,
    min_cells_radius: float = 2.0,
) -> SizeExponent:
    """Log-log fit of the worst section radius against height.

    Samples default to nodes of the 3/4-section of ``normalized``. Heights
    whose sections leave the compact region or are narrower than
    ``min_cells_radius`` cells are dropped from the fit.

    Raises:
        FitDegenerate: fewer than 4 usable heights.
    """
    if samples is None:
        inner = section(u, normalized.center, 0.75 * normalized.height)
        samples = _sample_members(inner, 16)
    if heights is None:
        heights = list(np.geomspace(normalized.height / 32, normalized.height / 2, 6))
    floor = min_cells_radius * u.grid.min_spacing
    used_h, used_r = [], []
    for h in heights:
        hint = ball_radius_hint(u, h)
        secs = [section(u, x, h, radius_hint=hint) for x in samples]
        if not all(s.compactly_contained for s in secs):
            continue
        radius = max(s.max_radius() for s in secs)
        if radius >= floor:
            used_h.append(float(h))
            used_r.append(radius)
    if len(used_h) < 4:
        raise FitDegenerate(len(used_h), 4)
    fit = loglog_fit(used_h, used_r, min_points=4)
    return SizeExponent(fit.slope, fit.coefficient, used_h, used_r)


# -- inclusion / exclusion ------------------------------------------------


@dataclass
class InclusionResult:
    mode: str
    inner_height: float
    passed: bool
    offending_cells: int


def inclusion_exclusion_check(
    u: Potential,
    x0: Point,
    t: float,
    r: float,
    s: float,
    x1: Point,
    c0: float,
    p1: float,
    mode: str = "inclusion",
) -> InclusionResult:
    """Section inclusion (i) or exclusion (ii) around x0 at scale t.

    (i)  x1 in S(x0, rt)           =>  S(x1, c0 (s-r)^p1 t) inside S(x0, st)
    (ii) x1 in S(x0, t) \\ S(x0, st) =>  S(x1, c0 (s-r)^p1 t) misses S(x0, rt)
    """
    if mode not in ("inclusion", "exclusion"):
        raise PreconditionViolation(f"unknown mode '{mode}'")
    if not 0 < r <= s <= 1:
        raise PreconditionViolation(f"need 0 < r <= s <= 1, got r={r}, s={s}")
    outer = section(u, x0, 2 * t)
    if not outer.compactly_contained:
        raise PreconditionViolation("S(x0, 2t) is not compactly contained")

    tilt_x1 = _tilt_at(u, x0, x1)
    if mode == "inclusion" and not tilt_x1 < r * t:
        raise PreconditionViolation("x1 is not in S(x0, rt)")
    if mode == "exclusion" and not (s * t <= tilt_x1 < t):
        raise PreconditionViolation("x1 is not in the annulus S(x0, t) minus S(x0, st)")

    inner_height = c0 * (s - r) ** p1 * t
    if inner_height <= 0:
        return InclusionResult(mode, 0.0, True, 0)
    inner = section(u, x1, inner_height, radius_hint=ball_radius_hint(u, inner_height))
    if mode == "inclusion":
        target = section(u, x0, s * t)
        bad = int(np.sum(inner.cells & ~target.cells))
    else:
        target = section(u, x0, r * t)
        bad = int(np.sum(inner.cells & target.cells))
    return InclusionResult(mode, inner_height, bad == 0, bad)


def _tilt_at(u: Potential, x0: Point, x1: Point) -> float:
    base = u.evaluate(x0)
    at = u.evaluate(x1)
    return at.value - base.value - float(base.gradient @ (np.asarray(x1, float) - np.asarray(x0, float)))


def calibrate_inclusion_coefficient(
    u: Potential,
    x0: Point,
    t: float,
    r: float,
    s: float,
    points: Sequence[Point],
    p1: float,
    hi: float = 1e4,
) -> float:
    """Largest c0 for which inclusion (i) holds at every supplied x1."""

    def holds(c0: float) -> bool:
        return all(
            inclusion_exclusion_check(u, x0, t, r, s, x1, c0, p1).passed for x1 in points
        )

    c0 = bracket_and_bisect(holds, 1e-6, hi, tol=1e-3)
    logger.info("inclusion coefficient c0 = %.4g (r=%g, s=%g, p1=%.3g)", c0, r, s, p1)
    return c0


# -- Hoelder exponent of the gradient --------------------------------------


@dataclass
class C1AlphaEstimate:
    alpha_star: float
    C_hat: float
    slope: float
    pairs_used: int


def estimate_c1alpha(
    u: Potential,
    normalized: SectionSet,
    pairs: Sequence[tuple[Point, Point]] | None = None,
    bins: int = 8,
    seed: int = 0,
) -> C1AlphaEstimate:
    """Upper-envelope log-log fit of |Du(x) - Du(y)| against |x - y|.

    Pairs default to random node pairs of the half-height section. The
    exponent is floored to two decimals and capped at 1.
    """
    half = section(u, normalized.center, 0.5 * normalized.height)
    if pairs is None:
        rng = np.random.default_rng(seed)
        pts = half.points
        picks = rng.integers(0, pts.shape[0], size=(4000, 2))
        pairs = [(pts[i], pts[j]) for i, j in picks if i != j]
    xs = np.array([np.asarray(p, float) for p, _ in pairs])
    ys = np.array([np.asarray(q, float) for _, q in pairs])
    if xs.size == 0:
        raise FitDegenerate(0, 2)
    dist = np.linalg.norm(xs - ys, axis=-1)
    grad_x = np.array([u.evaluate(p).gradient for p in xs])
    grad_y = np.array([u.evaluate(q).gradient for q in ys])
    diff = np.linalg.norm(grad_x - grad_y, axis=-1)

    keep = dist > 0
    dist, diff = dist[keep], diff[keep]
    if np.unique(np.round(dist, 12)).size < 2:
        raise FitDegenerate(int(np.unique(dist).size), 2)
    edges = np.geomspace(dist.min(), dist.max() * (1 + 1e-12), bins + 1)
    env_d, env_g = [], []
    for lo, hi in zip(edges[:-1], edges[1:], strict=True):
        sel = (dist >= lo) & (dist < hi)
        if sel.any():
            k = np.argmax(diff[sel] / dist[sel])
            env_d.append(dist[sel][k])
            env_g.append(diff[sel][k])
    fit = loglog_fit(env_d, env_g, min_points=2)
    alpha = min(1.0, math.floor(fit.slope * 100 + 1e-6) / 100)
    if alpha <= 0:
        raise FitDegenerate(fit.points, 2)
    return C1AlphaEstimate(alpha, fit.coefficient, fit.slope, int(dist.size))


# -- covering dilations ---------------------------------------------------


def estimate_k_hat(
    u: Potential, x0: Point, h: float, samples: Iterable[tuple[Point, float]]
) -> float:
    """Smallest K with S(x, t) inside S(x0, h)  =>  S(x, 2t) inside S(x0, K h)."""
    tilt0 = u.tilt(x0)
    base = section(u, x0, h)
    worst = 1.0
    for x, t in samples:
        small = section(u, x, t, radius_hint=ball_radius_hint(u, t))
        if not base.contains(small):
            continue
        doubled = section(u, x, 2 * t, radius_hint=ball_radius_hint(u, 2 * t))
        if not doubled.compactly_contained:
            continue
        worst = max(worst, float(tilt0[doubled.cells].max()) / h)
    return worst


@dataclass
class ConsistencyReport:
    checked: int
    violations: int
    K: float


def k_consistency_check(
    u: Potential,
    pairs: Iterable[tuple[tuple[Point, float], tuple[Point, float]]],
    theta0: float,
) -> ConsistencyReport:
    """Intersecting S(x1,h1), S(x2,h2) with h2 <= 2 h1 give S(x2,h2) inside S(x1, K h1)."""
    K = 2.0 * theta0**2
    checked = violations = 0
    for (x1, h1), (x2, h2) in pairs:
        if h2 > 2 * h1:
            continue
        s1 = section(u, x1, h1)
        s2 = section(u, x2, h2)
        if not s1.intersects(s2):
            continue
        dilate = section(u, x1, K * h1)
        if not dilate.compactly_contained:
            continue
        checked += 1
        if not dilate.contains(s2):
            violations += 1
    return ConsistencyReport(checked, violations, K)


def fit_inscribed_radius(
    u: Potential, x0: Point, heights: Sequence[float], alpha_star: float
) -> float:
    """c1 with S(x0, h) containing B(x0, c1 h^(1/(1+alpha*))) on every height."""
    exponent = 1.0 / (1.0 + alpha_star)
    ratios = [section(u, x0, h).inradius() / h**exponent for h in heights]
    c1 = float(min(ratios))
    logger.info("inscribed-ball coefficient c1 = %.4g", c1)
    return c1


@dataclass
class GeometryConstants:
    theta0: float
    mu: float
    p1: float
    c0: float
    K: float
    K_hat: float
    alpha_star: float
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.theta0 < 2:
            raise PreconditionViolation(f"theta0 = {self.theta0} < 2")
        if not 0 < self.mu < 1:
            raise PreconditionViolation(f"mu = {self.mu} outside (0, 1)")
        if not 0 < self.alpha_star <= 1:
            raise PreconditionViolation(f"alpha* = {self.alpha_star} outside (0, 1]")

    @classmethod
    def from_estimates(
        cls,
        n: int,
        theta0: float,
        mu: float,
        c0: float,
        K_hat: float,
        alpha_star: float,
        provenance: dict[str, str] | None = None,
    ) -> GeometryConstants:
        return cls(
            theta0=theta0,
            mu=mu,
            p1=(n + 1) / mu,
            c0=c0,
            K=2.0 * theta0**2,
            K_hat=K_hat,
            alpha_star=alpha_star,
            provenance=provenance or {},
        )

    @classmethod
    def for_balls(cls, n: int) -> GeometryConstants:
        """Closed-form values for u = |x|^2/2."""
        return cls.from_estimates(
            n, theta0=4.0, mu=0.5, c0=0.25, K_hat=4.0, alpha_star=1.0,
            provenance={"all": "closed form for u = |x|^2/2"},
        )
