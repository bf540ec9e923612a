"""Sliding generalized paraboloids and recording where they touch.

Two engines share the same scan-then-refine contact search:

* the measure-estimate engine minimizes ``v + a [u - u(y) - Du(y).(x - y)]``
  over the closure of S_1 for every vertex y of a small section V;
* the doubling engine maximizes
  ``Q_y = w - 3/4 [u - Du(y).(x - y) - u(y) - h_delta]`` with
  ``w = (v + 1)^-eps`` over the closure of S_3.

The cell of the extremum comes from an exhaustive scan (ties go to the first
cell in C order). Newton steps on the functional then place the contact inside
that cell, which lets vertex-stencil differences resolve the contact map.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from ..utils.errors import (
    ClaimViolation,
    ContainmentFailure,
    EmptyDomain,
    HypothesisViolation,
    NonFiniteField,
    PreconditionViolation,
)
from ..utils.logging import get_logger
from .grid import Grid, full_structure
from .normalization import ProblemInstance
from .potentials import ExactDerivatives, GridFunction, Potential
from .sections import SectionSet, section

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]
Point = FloatArray | tuple[float, ...]

NEWTON_STEPS = 5


@dataclass(frozen=True, eq=False)
class GeneralizedParaboloid:
    """C - a [u(x) - u(y) - Du(y).(x - y)]."""

    opening: float
    vertex: tuple[float, ...]
    potential: Potential
    offset: float = 0.0

    def bracket(self, points: FloatArray) -> FloatArray:
        base = self.potential.evaluate(self.vertex)
        pts = np.asarray(points, dtype=float)
        return self.potential.value_at(pts) - base.value - (pts - np.asarray(self.vertex)) @ base.gradient

    def __call__(self, points: FloatArray) -> FloatArray:
        return self.offset - self.opening * self.bracket(points)


@dataclass
class ContactRecord:
    vertex: tuple[float, ...]
    contact: tuple[float, ...]
    contact_index: tuple[int, ...]
    opening: float
    value: float
    gradient: FloatArray
    jacobian_fd: float
    jacobian_formula: float
    on_boundary: bool
    first_order_residual: float
    touch_eigenvalue: float
    snapped: bool = False

    @property
    def jacobian(self) -> float:
        return self.jacobian_formula

    def row(self) -> dict[str, object]:
        return {
            "y": " ".join(f"{c!r}" for c in self.vertex),
            "x": " ".join(f"{c!r}" for c in self.contact),
            "a": self.opening,
            "v": self.value,
            "grad_v": float(np.linalg.norm(self.gradient)),
            "jac_fd": self.jacobian_fd,
            "jac_formula": self.jacobian_formula,
            "on_boundary": self.on_boundary,
        }


class _ClosureScan:
    """Cached node data over the closure of a domain."""

    def __init__(self, grid: Grid, closure: BoolArray, boundary: BoolArray, *fields: FloatArray):
        if not closure.any():
            raise EmptyDomain("domain closure has no cells")
        self.grid = grid
        self.indices = np.argwhere(closure)
        self.points = grid.points[closure]
        self.on_boundary = boundary[closure]
        self.fields = [f[closure] for f in fields]
        for f in self.fields:
            if not np.all(np.isfinite(f)):
                raise NonFiniteField("field is not finite on the domain closure")

    def best(self, objective: FloatArray, maximize: bool = False) -> int:
        if not np.all(np.isfinite(objective)):
            raise NonFiniteField("sliding functional is not finite")
        return int(np.argmax(objective) if maximize else np.argmin(objective))


def _newton_refine(
    start: FloatArray,
    gradient: Callable[[FloatArray], FloatArray],
    hessian: Callable[[FloatArray], FloatArray],
    spacing: float,
    steps: int,
    sign: float,
) -> FloatArray:
    """Newton steps on a locally convex (sign=+1) or concave (sign=-1) functional.

    The iterate may move at most one cell from ``start``; otherwise the start
    node is kept.
    """
    x = start.copy()
    for _ in range(steps):
        H = hessian(x)
        if float(np.linalg.eigvalsh(sign * H).min()) <= 0:
            return start
        step = np.linalg.solve(H, gradient(x))
        x = x - step
        if np.linalg.norm(x - start) > spacing:
            return start
        if np.linalg.norm(step) < 1e-13 * max(1.0, spacing):
            break
    return x


def _field_at(f: GridFunction, x: FloatArray) -> tuple[float, FloatArray, FloatArray]:
    if f.exact is not None:
        return (
            float(f.exact.value(x)),
            np.asarray(f.exact.gradient(x), dtype=float),
            np.asarray(f.exact.hessian(x), dtype=float),
        )
    idx = f.grid.nearest_index(np.clip(x, f.grid.origin, f.grid.upper))
    return float(f.values[idx]), f.gradient[idx], f.hessian[idx]


# -- measure-estimate engine ----------------------------------------------


class _MeasureSlider:
    def __init__(self, u: Potential, v: GridFunction, a: float, domain: SectionSet):
        if a <= 0:
            raise PreconditionViolation(f"opening must be positive, got {a}")
        self.u, self.v, self.a = u, v, a
        self.scan = _ClosureScan(u.grid, domain.closure, domain.boundary_cells, u.values, v.values)
        if self.scan.fields[1].min() < -1e-12:
            raise PreconditionViolation("v must be non-negative on the domain")
        self.refine = u.exact is not None and v.exact is not None
        self.steps = NEWTON_STEPS if self.refine else 1

    def contact(self, y: FloatArray) -> tuple[FloatArray, int]:
        base = self.u.evaluate(y)
        u_c, v_c = self.scan.fields
        bracket = u_c - base.value - (self.scan.points - y) @ base.gradient
        k = self.scan.best(v_c + self.a * bracket)
        node = self.scan.points[k]
        if self.scan.on_boundary[k]:
            return node, k

        def grad(x: FloatArray) -> FloatArray:
            return _field_at(self.v, x)[1] + self.a * (_field_at(self.u, x)[1] - base.gradient)

        def hess(x: FloatArray) -> FloatArray:
            return _field_at(self.v, x)[2] + self.a * _field_at(self.u, x)[2]

        return _newton_refine(node, grad, hess, self.u.grid.min_spacing, self.steps, 1.0), k

    def record(self, y: FloatArray, with_fd: bool = True) -> ContactRecord:
        x, k = self.contact(y)
        at_u_x = _field_at(self.u, x)
        at_u_y = self.u.evaluate(y)
        v_val, v_grad, v_hess = _field_at(self.v, x)
        formula = float(np.linalg.det(at_u_x[2] + v_hess / self.a) / np.linalg.det(at_u_y.hessian))
        residual = float(np.linalg.norm(at_u_y.gradient - at_u_x[1] - v_grad / self.a))
        touch = float(np.linalg.eigvalsh(v_hess + self.a * at_u_x[2]).min())

        fd, snapped = formula, False
        if with_fd:
            fd, snapped = self._jacobian_fd(y)
        return ContactRecord(
            vertex=tuple(float(c) for c in y),
            contact=tuple(float(c) for c in x),
            contact_index=self.u.grid.nearest_index(x),
            opening=self.a,
            value=v_val,
            gradient=np.asarray(v_grad, dtype=float),
            jacobian_fd=fd,
            jacobian_formula=formula,
            on_boundary=bool(self.scan.on_boundary[k]),
            first_order_residual=residual,
            touch_eigenvalue=touch,
            snapped=snapped,
        )

    def _jacobian_fd(self, y: FloatArray) -> tuple[float, bool]:
        """det D_x y = 1 / det D_y x with D_y x from central vertex differences."""
        n = y.size
        step = self.u.grid.min_spacing
        columns = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = step
            columns.append((self.contact(y + e)[0] - self.contact(y - e)[0]) / (2 * step))
        det = float(np.linalg.det(np.column_stack(columns)))
        if not math.isfinite(det) or abs(det) < 1e-12:
            return 0.0, True
        return 1.0 / det, False


def slide_paraboloid(
    u: Potential,
    v: GridFunction,
    y: Point,
    a: float,
    domain: SectionSet,
    with_fd: bool = True,
) -> ContactRecord:
    """Touch v from below with the paraboloid of opening ``a`` and vertex ``y``.

    Raises:
        EmptyDomain: empty closure.
        NonFiniteField: non-finite u or v on the closure.
        PreconditionViolation: ``a <= 0``, ``y`` outside the domain, or v < 0.
    """
    vertex = np.asarray(y, dtype=float)
    if not domain.closure[u.grid.nearest_index(vertex)]:
        raise PreconditionViolation("vertex lies outside the domain")
    return _MeasureSlider(u, v, a, domain).record(vertex, with_fd)


@dataclass
class ContactSet:
    records: list[ContactRecord]
    vertex_set_measure: float
    contact_measure: float
    area_formula_integral: float

    @property
    def area_ratio(self) -> float:
        if self.area_formula_integral == 0:
            return math.inf
        return self.vertex_set_measure / self.area_formula_integral

    @classmethod
    def from_records(cls, records: list[ContactRecord], vertex_measure: float, cell_measure: float) -> ContactSet:
        by_cell: dict[tuple[int, ...], list[float]] = {}
        for rec in records:
            by_cell.setdefault(rec.contact_index, []).append(abs(rec.jacobian_formula))
        integral = sum(float(np.mean(j)) for j in by_cell.values()) * cell_measure
        return cls(records, vertex_measure, len(by_cell) * cell_measure, integral)


@dataclass
class MeasureEstimateReport:
    opening: float
    alpha1: float
    contacts: ContactSet
    interior_fraction: float
    m1_emp: float
    low_fraction: float
    first_order_residual: float
    jacobian_gap: float
    min_touch_eigenvalue: float
    monotone_ok: bool

    @property
    def area_ok(self) -> bool:
        return self.contacts.area_ratio <= 1.1

    def summary(self) -> dict[str, float | bool]:
        return {
            "opening": self.opening,
            "alpha1": self.alpha1,
            "vertices": len(self.contacts.records),
            "interior_fraction": self.interior_fraction,
            "M1_emp": self.m1_emp,
            "low_fraction": self.low_fraction,
            "vertex_measure": self.contacts.vertex_set_measure,
            "area_formula_integral": self.contacts.area_formula_integral,
            "area_ratio": self.contacts.area_ratio,
            "first_order_residual": self.first_order_residual,
            "jacobian_gap": self.jacobian_gap,
            "min_touch_eigenvalue": self.min_touch_eigenvalue,
            "monotone_ok": self.monotone_ok,
        }


def _parallel_map(func: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _measure_frame(P: ProblemInstance, alpha1: float) -> tuple[FloatArray, float, SectionSet, SectionSet]:
    x0 = np.asarray(P.section.center)
    t0 = P.section.height / 4.0
    S1 = section(P.potential, x0, t0)
    V = section(P.potential, x0, alpha1 * t0)
    return x0, t0, S1, V


def _slide_vertices(
    P: ProblemInstance, v: GridFunction, alpha1: float, a: float, with_fd: bool, workers: int
) -> tuple[list[ContactRecord], SectionSet, SectionSet]:
    _, _, S1, V = _measure_frame(P, alpha1)
    if V.count == 0:
        raise EmptyDomain("vertex section has no cells")
    slider = _MeasureSlider(P.potential, v, a, S1)
    records = _parallel_map(lambda y: slider.record(y, with_fd), list(V.points), workers)
    return records, S1, V


def interior_contact_fraction(records: Sequence[ContactRecord], S1: SectionSet) -> float:
    """Share of contacts whose cell has every neighbour inside S_1."""
    if not records:
        return 0.0
    core = ndimage.binary_erosion(S1.cells, structure=full_structure(S1.grid.dim), border_value=0)
    return float(np.mean([core[tuple(r.contact_index)] for r in records]))


def measure_estimate_run(
    P: ProblemInstance,
    v: GridFunction,
    alpha1: float,
    a: float,
    with_fd: bool = True,
    workers: int = 1,
) -> MeasureEstimateReport:
    """Slide from every vertex of V = S(x0, alpha1 t0) onto the closure of S_1.

    ``P.section`` is S(x0, 4 t0); S_1 = S(x0, t0).

    Raises:
        HypothesisViolation: v > 1 everywhere on V.
        ContainmentFailure: some contact lies on the boundary of S_1.
    """
    records, S1, V = _slide_vertices(P, v, alpha1, a, with_fd, workers)
    v_on_V = v.values[V.cells]
    if v_on_V.min() > 1.0:
        raise HypothesisViolation("inf of v over S(alpha1 t0) <= 1", float(v_on_V.min()))
    on_boundary = sum(r.on_boundary for r in records)
    if on_boundary:
        raise ContainmentFailure(a, on_boundary)

    u = P.potential
    grid = u.grid
    witness = V.points[int(np.argmin(v_on_V))]
    w_val = float(v_on_V.min())
    monotone = True
    for rec in records:
        base = u.evaluate(rec.vertex)
        bracket = u.evaluate(witness).value - base.value - float(base.gradient @ (witness - np.asarray(rec.vertex)))
        if rec.value > w_val + a * bracket + 1e-9:
            monotone = False

    contact_set = ContactSet.from_records(records, V.measure, grid.cell_measure)
    m1 = max(r.value for r in records)
    low = float(np.sum(S1.cells & (v.values < m1)) / S1.count)
    gaps = [
        abs(r.jacobian_fd - r.jacobian_formula) / max(1.0, r.jacobian_formula)
        for r in records
        if with_fd and not r.snapped
    ]
    report = MeasureEstimateReport(
        opening=a,
        alpha1=alpha1,
        contacts=contact_set,
        interior_fraction=interior_contact_fraction(records, S1),
        m1_emp=m1,
        low_fraction=low,
        first_order_residual=max(r.first_order_residual for r in records),
        jacobian_gap=max(gaps) if gaps else 0.0,
        min_touch_eigenvalue=min(r.touch_eigenvalue for r in records),
        monotone_ok=monotone,
    )
    logger.info(
        "measure run a=%g: %d contacts, M1_emp=%.4g, area ratio %.4f",
        a, len(records), m1, contact_set.area_ratio,
    )
    return report


@dataclass
class OpeningScan:
    rows: list[tuple[float, int]]
    threshold: float | None


def calibrate_opening(
    P: ProblemInstance, v: GridFunction, alpha1: float, openings: Sequence[float]
) -> OpeningScan:
    """Boundary-contact counts over an opening sweep and the smallest safe opening.

    The threshold is the smallest swept opening from which on every larger
    one no contact reaches the boundary of S_1.
    """
    rows = []
    for a in sorted(openings):
        records, _, _ = _slide_vertices(P, v, alpha1, a, with_fd=False, workers=1)
        rows.append((float(a), sum(r.on_boundary for r in records)))
    threshold = None
    for a, count in reversed(rows):
        if count:
            break
        threshold = a
    logger.info("opening threshold %s over %d openings", threshold, len(rows))
    return OpeningScan(rows, threshold)


# -- doubling engine ------------------------------------------------------


def transform_weight(v: GridFunction, eps: float) -> GridFunction:
    """w = (v + 1)^-eps with chain-rule derivatives."""

    def parts(val: FloatArray, grad: FloatArray, hess: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        base = np.asarray(val, dtype=float) + 1.0
        w = base**-eps
        dw = (-eps * base ** (-eps - 1.0))[..., None] * grad
        d2w = (-eps * base ** (-eps - 1.0))[..., None, None] * hess + (
            eps * (eps + 1.0) * base ** (-eps - 2.0)
        )[..., None, None] * np.einsum("...i,...j->...ij", grad, grad)
        return w, dw, d2w

    w, dw, d2w = parts(v.values, v.gradient, v.hessian)
    exact = None
    if v.exact is not None:
        ex = v.exact
        exact = ExactDerivatives(
            value=lambda x: parts(ex.value(x), ex.gradient(x), ex.hessian(x))[0],
            gradient=lambda x: parts(ex.value(x), ex.gradient(x), ex.hessian(x))[1],
            hessian=lambda x: parts(ex.value(x), ex.gradient(x), ex.hessian(x))[2],
        )
    return GridFunction(v.grid, w, dw, d2w, f"({v.name}+1)^-{eps:g}", exact)


@dataclass
class ClaimResult:
    name: str
    applicable: bool
    passed: bool
    margin: float


@dataclass
class DoublingConditions:
    gradient_bound: float
    vertex_gradient: float
    vertex_ok: bool
    eps_cap: float
    eps_ok: bool
    M2: float


@dataclass
class DoublingContact:
    vertex: tuple[float, ...]
    contact: tuple[float, ...]
    contact_index: tuple[int, ...]
    value: float
    gradient: FloatArray
    q_value: float
    jacobian_formula: float
    hypothesis_holds: bool
    conditions: DoublingConditions
    claims: dict[str, ClaimResult]
    diagnostics: dict[str, float] = field(default_factory=dict)
    gradient_floor_v: float = 0.0

    @property
    def jacobian(self) -> float:
        return self.jacobian_formula

    @property
    def attribution(self) -> str | None:
        if all(c.passed or not c.applicable for c in self.claims.values()):
            return None
        if not self.conditions.eps_ok:
            return "eps"
        if not self.conditions.vertex_ok:
            return "vertex"
        return "resolution"

    def raise_for_claims(self) -> None:
        for claim in self.claims.values():
            if claim.applicable and not claim.passed:
                raise ClaimViolation(claim.name, claim.margin)


def doubling_eps_cap(alpha: float, delta: float, ratio: float, n: int) -> float:
    """min{log2(4/(3(1+alpha))), delta alpha^2 / (32 (1 + Lam~/lam~) n^4)}."""
    return min(math.log2(4.0 / (3.0 * (1.0 + alpha))), delta * alpha**2 / (32.0 * (1.0 + ratio) * n**4))


def doubling_contact(
    P: ProblemInstance,
    v: GridFunction,
    y: Point,
    eps: float,
    alpha: float,
    h_delta: GridFunction | None = None,
    delta: float = 1.0,
) -> DoublingContact:
    """Maximize Q_y over the closure of S_3 and evaluate the contact claims.

    ``P.section`` is S(x0, 4 t0). Heights scale with t0 and the distance
    bounds use R = max |x - x0| over S_4; with t0 = 1 and S_4 inside B_n they
    are the usual alpha/(16n) and alpha/(2n) thresholds.
    """
    if not 0 < alpha < 1:
        raise PreconditionViolation(f"alpha must lie in (0, 1), got {alpha}")
    if eps <= 0:
        raise PreconditionViolation("eps must be positive")
    u = P.potential
    grid = u.grid
    n = grid.dim
    x0 = np.asarray(P.section.center)
    t0 = P.section.height / 4.0
    S1 = section(u, x0, t0)
    S3 = section(u, x0, 3 * t0)
    R = float(np.linalg.norm(P.section.points - x0, axis=-1).max())
    vertex = np.asarray(y, dtype=float)

    h_field = h_delta if h_delta is not None else GridFunction(
        grid, np.zeros(grid.shape), np.zeros(grid.shape + (n,)), np.zeros(grid.shape + (n, n)), "zero"
    )
    w = transform_weight(v, eps)
    scan = _ClosureScan(grid, S3.closure, S3.boundary_cells, u.values, v.values, w.values, h_field.values)
    if scan.fields[1].min() < -1e-12:
        raise PreconditionViolation("v must be non-negative on S_3")
    u_c, _, w_c, h_c = scan.fields

    base_y = u.evaluate(vertex)
    bracket = u_c - base_y.value - (scan.points - vertex) @ base_y.gradient
    k = scan.best(w_c - 0.75 * (bracket - h_c), maximize=True)
    node = scan.points[k]
    x = node
    if not scan.on_boundary[k]:
        def grad(p: FloatArray) -> FloatArray:
            return _field_at(w, p)[1] - 0.75 * (_field_at(u, p)[1] - base_y.gradient - _field_at(h_field, p)[1])

        def hess(p: FloatArray) -> FloatArray:
            return _field_at(w, p)[2] - 0.75 * (_field_at(u, p)[2] - _field_at(h_field, p)[2])

        steps = NEWTON_STEPS if (u.exact is not None and v.exact is not None and h_delta is None) else 1
        x = _newton_refine(node, grad, hess, grid.min_spacing, steps, -1.0)

    v_val, v_grad, v_hess = _field_at(v, x)
    _, w_grad, w_hess = _field_at(w, x)
    u_val, u_grad, u_hess = _field_at(u, x)
    _, _, h_hess = _field_at(h_field, x)
    x_tilt = u_val - u.evaluate(x0).value - float(u.evaluate(x0).gradient @ (x - x0))
    q_val = float(_field_at(w, x)[0] - 0.75 * (u_val - base_y.value - base_y.gradient @ (x - vertex) - _field_at(h_field, x)[0]))
    jac = float(np.linalg.det(u_hess - h_hess - (4.0 / 3.0) * w_hess) / np.linalg.det(base_y.hessian))

    hypothesis = bool(np.any(v.values[S1.closure] <= 1.0))
    vertex_gradient = float(np.linalg.norm(base_y.gradient - u.evaluate(x0).gradient))
    cap = doubling_eps_cap(alpha, delta, P.Lam_tilde / P.lam_tilde, n)
    conditions = DoublingConditions(
        gradient_bound=alpha * t0 / (16.0 * R),
        vertex_gradient=vertex_gradient,
        vertex_ok=vertex_gradient <= alpha * t0 / (16.0 * R),
        eps_cap=cap,
        eps_ok=eps < cap,
        M2=(16.0 / (9.0 * alpha)) ** (1.0 / eps),
    )

    floor_w = alpha * t0 / (2.0 * R)
    floor_v = floor_w / eps
    margins = {
        "claim1": min(3 * t0 - x_tilt, x_tilt - alpha * t0),
        "claim3": 1.0 / alpha - (v_val + 1.0) ** eps,
        "gradient_w": float(np.linalg.norm(w_grad)) - floor_w,
        "gradient_v": float(np.linalg.norm(v_grad)) - floor_v,
    }
    claims = {
        name: ClaimResult(name, hypothesis, (margin >= 0) if hypothesis else True, float(margin))
        for name, margin in margins.items()
    }

    U_inv = np.linalg.inv(u_hess)
    idx = grid.nearest_index(x)
    diagnostics = {
        "claim2_lhs": float(eps * (v_val + 1.0) ** (-eps - 1.0) * np.trace(U_inv @ v_hess)),
        "claim2_threshold": n * P.Lam_tilde / P.lam_tilde,
        "claim4_data": float(np.linalg.norm(P.b[idx]) + max(-P.c[idx], 0.0) + max(P.f[idx], 0.0)),
        "x_tilt": float(x_tilt),
        "on_boundary": float(scan.on_boundary[k]),
    }
    return DoublingContact(
        vertex=tuple(float(c) for c in vertex),
        contact=tuple(float(c) for c in x),
        contact_index=idx,
        value=v_val,
        gradient=np.asarray(v_grad, dtype=float),
        q_value=q_val,
        jacobian_formula=jac,
        hypothesis_holds=hypothesis,
        conditions=conditions,
        claims=claims,
        diagnostics=diagnostics,
        gradient_floor_v=floor_v,
    )


@dataclass
class JacobianBound:
    lhs: float
    rhs: float
    passed: bool


def _data_term(P: ProblemInstance, contact: tuple[float, ...], form: str) -> float:
    idx = P.grid.nearest_index(np.asarray(contact))
    n = P.dim
    term = (
        float(np.linalg.norm(P.b[idx])) ** n
        + max(-float(P.c[idx]), 0.0) ** n
        + max(float(P.f[idx]), 0.0) ** n
    )
    if form == "measure":
        return 1.0 + term
    if form == "doubling":
        return term
    raise PreconditionViolation(f"unknown bound form '{form}'")


def calibrate_jacobian_constant(
    records: Sequence[ContactRecord | DoublingContact], P: ProblemInstance, form: str = "measure"
) -> float:
    """Smallest C with |det D_x y| <= C (data term) on a calibration batch."""
    ratios = [
        abs(r.jacobian) / term
        for r in records
        if (term := _data_term(P, r.contact, form)) > 0
    ]
    return max(ratios, default=0.0)


def jacobian_bound_check(
    record: ContactRecord | DoublingContact,
    P: ProblemInstance,
    C: float,
    form: str = "measure",
    tau: float = 0.10,
) -> JacobianBound:
    """|det D_x y| <= C (1 + |b|^n + |c^-|^n + |f^+|^n) at the contact (``measure``),
    or without the 1 (``doubling``)."""
    lhs = abs(record.jacobian)
    rhs = C * _data_term(P, record.contact, form)
    return JacobianBound(lhs, rhs, lhs <= rhs * (1 + tau))


@dataclass
class FilterResult:
    retained: list[DoublingContact]
    dropped: list[DoublingContact]
    retention_rate: float

    @property
    def all_retained(self) -> bool:
        return not self.dropped


def large_gradient_filter(records: Sequence[DoublingContact], factor: float = 1.0) -> FilterResult:
    """Keep contacts with |Dv(x)| >= factor * alpha t0 / (2 R eps)."""
    retained, dropped = [], []
    for rec in records:
        if float(np.linalg.norm(rec.gradient)) >= factor * rec.gradient_floor_v:
            retained.append(rec)
        else:
            dropped.append(rec)
    rate = len(retained) / len(records) if records else 1.0
    if dropped:
        logger.info("large-gradient filter dropped %d of %d contacts", len(dropped), len(records))
    return FilterResult(retained, dropped, rate)
