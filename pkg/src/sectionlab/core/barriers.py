"""Barrier constructions: bad sets, Monge-Ampere corrections, Harnack barriers."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy import ndimage
from scipy.sparse.linalg import spsolve

from ..utils.errors import (
    DegenerateBarrier,
    DomainViolation,
    NoConvergence,
    NonConvexDomain,
    PreconditionViolation,
)
from ..utils.logging import get_logger
from ..utils.numerics import loglog_fit
from .checks import EstimateResult
from .grid import full_structure
from .potentials import GridFunction, Potential, finite_difference_derivatives
from .sections import SectionSet, cell_set_is_convex, require_compact, section

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]
Point = FloatArray | tuple[float, ...]

MAX_ITERATIONS = 10_000
DAMPING = 0.5
SOLVER_TOL = 1e-6
DETERMINANT_TOL = 1e-2


# -- bad set and mollifier ------------------------------------------------


@dataclass(frozen=True, eq=False)
class BadSet:
    eps: float
    cells: BoolArray
    measure: float
    hessian_integral: float

    @property
    def chebyshev_bound(self) -> float:
        return self.eps * self.hessian_integral

    @property
    def chebyshev_ok(self) -> bool:
        return self.measure <= self.chebyshev_bound * (1 + 1e-12)


def bad_set(u: Potential, eps: float, S3: SectionSet) -> BadSet:
    """Cells of S_3 where ||D2u|| >= 1/eps (Frobenius norm)."""
    if eps <= 0:
        raise PreconditionViolation("eps must be positive")
    require_compact(S3)
    norms = np.linalg.norm(u.hessian, axis=(-2, -1))
    cells = S3.cells & (norms >= 1.0 / eps)
    cm = u.grid.cell_measure
    return BadSet(
        eps=eps,
        cells=cells,
        measure=float(cells.sum() * cm),
        hessian_integral=float(norms[S3.cells].sum() * cm),
    )


@dataclass(frozen=True, eq=False)
class MollifierField:
    values: FloatArray
    eps: float
    bad_cells: BoolArray
    ring_cells: BoolArray
    support: BoolArray
    cell_measure: float

    @property
    def integral(self) -> float:
        return float(self.values[self.support].sum() * self.cell_measure)

    def integral_bounds(self) -> tuple[float, float]:
        cm = self.cell_measure
        bad = float(self.bad_cells.sum() * cm)
        return bad, bad + float(self.ring_cells.sum() * cm) + self.eps * float(self.support.sum() * cm)


def mollifier(bad: BadSet, S4: SectionSet, width: int = 1) -> MollifierField:
    """phi = 1 on the bad set, eps outside its ``width``-cell dilation, ramp between."""
    if np.any(bad.cells & ~S4.cells):
        raise PreconditionViolation("bad set must lie inside S_4")
    grid = S4.grid
    eps = bad.eps
    values = np.full(grid.shape, eps)
    if bad.cells.any():
        dist = grid.distance_to(bad.cells) / grid.min_spacing
        ring = S4.cells & ~bad.cells & (dist <= width * math.sqrt(grid.dim) + 1e-9)
        ramp = 1.0 - (1.0 - eps) * dist / (width + 1)
        values[ring] = np.clip(ramp[ring], eps, 1.0) if width > 1 else 0.5 * (1.0 + eps)
        values[bad.cells] = 1.0
    else:
        ring = np.zeros(grid.shape, dtype=bool)
    return MollifierField(values, eps, bad.cells, ring, S4.cells, grid.cell_measure)


# -- Monge-Ampere Dirichlet solver ----------------------------------------


@dataclass(frozen=True, eq=False)
class BarrierField(GridFunction):
    """Solution of det D2h = rhs in a section with h = 0 on its boundary cells."""

    det_target: FloatArray | None = None
    domain: BoolArray | None = None
    residuals: tuple[float, ...] = ()

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    @property
    def sup_bound(self) -> float:
        return float(np.abs(self.values[self.domain]).max())

    def boundary_ok(self, tau_bd: float = 1e-12) -> bool:
        edge = self.domain & ~ndimage.binary_erosion(
            self.domain, structure=full_structure(self.grid.dim), border_value=0
        )
        return bool(np.abs(self.values[edge]).max(initial=0.0) <= tau_bd)

    def convex_ok(self, tol: float = 1e-8) -> bool:
        """Every inner node has non-negative second differences along the stencil directions."""
        inner = _unknown_mask(self.domain)
        h = self.grid.min_spacing
        pairs = _neighbour_averages(self.values)
        centre = self.values[1:-1, 1:-1]
        ok = np.ones_like(centre, dtype=bool)
        for m in pairs:
            ok &= m - centre >= -tol * h * h
        return bool(ok[inner[1:-1, 1:-1]].all())


def _unknown_mask(domain: BoolArray) -> BoolArray:
    return ndimage.binary_erosion(domain, structure=full_structure(domain.ndim), border_value=0)


def _neighbour_averages(u: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """Averages over the E-W, N-S, NE-SW and NW-SE neighbour pairs of every inner node."""
    return (
        0.5 * (u[2:, 1:-1] + u[:-2, 1:-1]),
        0.5 * (u[1:-1, 2:] + u[1:-1, :-2]),
        0.5 * (u[2:, 2:] + u[:-2, :-2]),
        0.5 * (u[:-2, 2:] + u[2:, :-2]),
    )


def _pair_value(m1: FloatArray, m2: FloatArray, q: FloatArray) -> FloatArray:
    """Root below min(m1, m2) of (m1 - u)(m2 - u) = q."""
    return 0.5 * (m1 + m2) - np.sqrt((0.5 * (m1 - m2)) ** 2 + q)


def _wide_stencil_candidate(u: FloatArray, rhs: FloatArray, h: float) -> FloatArray:
    """Local solve of the two-frame wide stencil on every inner node.

    Axis pair: second differences 2(m - u)/h^2. Diagonal pair: 2(m - u)/(2h^2).
    The discrete determinant is the smaller of the two frame products.
    """
    ew, ns, d1, d2 = _neighbour_averages(u)
    f = rhs[1:-1, 1:-1]
    axes = _pair_value(ew, ns, f * h**4 / 4.0)
    diag = _pair_value(d1, d2, f * h**4)
    return np.minimum(axes, diag)


def _discrete_determinant(u: FloatArray, h: float) -> FloatArray:
    ew, ns, d1, d2 = _neighbour_averages(u)
    c = u[1:-1, 1:-1]
    axes = 4.0 * (ew - c) * (ns - c) / h**4
    diag = (d1 - c) * (d2 - c) / h**4
    return np.minimum(axes, diag)


def _poisson_guess(unknown: BoolArray, rhs: FloatArray, h: float) -> FloatArray:
    """Solution of Laplace h = 2 sqrt(rhs) with zero data off the unknown nodes."""
    index = -np.ones(unknown.shape, dtype=int)
    nodes = np.argwhere(unknown)
    index[unknown] = np.arange(len(nodes))
    rows, cols, vals = [], [], []
    for k, (i, j) in enumerate(nodes):
        rows.append(k)
        cols.append(k)
        vals.append(-4.0)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = index[i + di, j + dj]
            if nb >= 0:
                rows.append(k)
                cols.append(int(nb))
                vals.append(1.0)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(nodes), len(nodes)))
    b = h * h * 2.0 * np.sqrt(rhs[unknown])
    out = np.zeros(unknown.shape)
    out[unknown] = spsolve(matrix, b)
    return out


def ma_dirichlet_solve(
    domain: SectionSet,
    rhs: FloatArray | float,
    tol: float = SOLVER_TOL,
    max_iterations: int = MAX_ITERATIONS,
    damping: float = DAMPING,
    det_tol: float = DETERMINANT_TOL,
) -> BarrierField:
    """det D2h = rhs in ``domain``, h = 0 on its boundary cells (n = 2).

    Boundary cells are members with a neighbour (diagonals included) outside
    the domain. The remaining members are updated by damped four-colour
    Gauss-Seidel sweeps of the monotone wide-stencil scheme, starting from
    the Poisson solution of Laplace h = 2 sqrt(rhs). Sweeps stop once the
    update is below ``tol`` and max |det_h D2h - rhs| over the unknown nodes
    is below ``det_tol * max rhs``.

    Raises:
        PreconditionViolation: n != 2, non-uniform spacing or rhs <= 0.
        NonConvexDomain: the member cells are not a discrete convex set.
        NoConvergence: either criterion unmet after ``max_iterations`` sweeps;
            the reported residual is the determinant residual.
    """
    grid = domain.grid
    if grid.dim != 2:
        raise PreconditionViolation("the Monge-Ampere solver is two-dimensional")
    if not math.isclose(grid.spacing[0], grid.spacing[1], rel_tol=1e-12):
        raise PreconditionViolation("the wide stencil needs equal spacing on both axes")
    if not cell_set_is_convex(grid, domain.cells):
        raise NonConvexDomain(f"section at {domain.center} is not convex on the grid")
    f = np.broadcast_to(np.asarray(rhs, dtype=float), grid.shape).copy()
    unknown = _unknown_mask(domain.cells)
    if not unknown.any():
        raise PreconditionViolation("domain has no interior nodes")
    if f[unknown].min() <= 0:
        raise PreconditionViolation("right-hand side must be positive")
    h = grid.min_spacing
    det_bound = det_tol * float(f[unknown].max())
    inner_unknown = unknown[1:-1, 1:-1]

    def det_residual() -> float:
        det = _discrete_determinant(u, h)
        return float(np.abs(det - f[1:-1, 1:-1])[inner_unknown].max())

    u = _poisson_guess(unknown, f, h)
    ii, jj = np.indices(grid.shape)
    colours = [unknown & (ii % 2 == a) & (jj % 2 == b) for a in (0, 1) for b in (0, 1)]
    inner_colours = [c[1:-1, 1:-1] for c in colours]

    residuals: list[float] = []
    residual = math.inf
    for it in range(1, max_iterations + 1):
        change = 0.0
        for colour in inner_colours:
            candidate = _wide_stencil_candidate(u, f, h)
            inner = u[1:-1, 1:-1]
            step = damping * (candidate[colour] - inner[colour])
            inner[colour] += step
            if step.size:
                change = max(change, float(np.abs(step).max()))
        residuals.append(change)
        if it % 500 == 0:
            logger.debug("MA sweep %d: update %.3e", it, change)
        if change <= tol:
            residual = det_residual()
            if residual <= det_bound:
                break
    else:
        raise NoConvergence(max_iterations, det_residual())

    gradient, hessian = finite_difference_derivatives(u, grid.spacing)
    logger.debug(
        "MA solve converged in %d sweeps, det residual %.3e, sup|h| = %.4g",
        len(residuals), residual, np.abs(u).max(),
    )
    return BarrierField(
        grid=grid,
        values=u,
        gradient=gradient,
        hessian=hessian,
        name="ma_barrier",
        det_target=f,
        domain=domain.cells.copy(),
        residuals=tuple(residuals),
    )


def determinant_residual(barrier: BarrierField) -> float:
    """max |det_h D2h - rhs| over the solver's unknown nodes."""
    unknown = _unknown_mask(barrier.domain)[1:-1, 1:-1]
    det = _discrete_determinant(barrier.values, barrier.grid.min_spacing)
    return float(np.abs(det - barrier.det_target[1:-1, 1:-1])[unknown].max())


def hessian_determinant_residual(barrier: BarrierField, mask: BoolArray | None = None) -> float:
    """max |det D2h - rhs| with the finite-difference Hessian of the barrier.

    ``mask`` defaults to the unknown nodes at least two cells from the boundary.
    """
    if mask is None:
        mask = ndimage.binary_erosion(
            _unknown_mask(barrier.domain), structure=full_structure(barrier.grid.dim),
            iterations=2, border_value=0,
        )
    mask = mask & barrier.domain
    if not mask.any():
        raise PreconditionViolation("no nodes left to evaluate the determinant on")
    det = np.linalg.det(barrier.hessian[mask])
    return float(np.abs(det - barrier.det_target[mask]).max())


def correction_barrier(
    u: Potential, eps: float, x0: Point, t0: float = 1.0
) -> tuple[BarrierField, BadSet, MollifierField]:
    """h_eps with det D2h = 2^n Lambda phi in S_4 and h = 0 on its boundary."""
    S3 = section(u, x0, 3 * t0)
    S4 = require_compact(section(u, x0, 4 * t0))
    bad = bad_set(u, eps, S3)
    phi = mollifier(bad, S4)
    rhs = 2.0**u.dim * u.pinching[1] * phi.values
    barrier = ma_dirichlet_solve(S4, rhs)
    logger.info(
        "barrier eps=%g: |H|=%.4g, sup|h|=%.4g after %d sweeps",
        eps, bad.measure, barrier.sup_bound, barrier.iterations,
    )
    return barrier, bad, phi


@dataclass
class SmallnessFit:
    rows: list[tuple[float, float, float]]
    exponent: float
    C1: float
    C2: float

    def exponent_ok(self, n: int, tol: float = 0.1) -> bool:
        return abs(self.exponent - 1.0 / n) <= tol


def barrier_smallness_sweep(
    u: Potential, x0: Point, eps_values: Sequence[float], t0: float = 1.0
) -> SmallnessFit:
    """sup|h_eps| and sup_{S_2}|Dh_eps| over an eps sweep.

    C1 and C2 are the smallest constants with sup|h| <= C1 eps^(1/n) and
    sup|Dh| <= C2 eps^(1/n) on the sweep.
    """
    n = u.dim
    S2 = section(u, x0, 2 * t0)
    rows = []
    for eps in sorted(eps_values):
        barrier, _, _ = correction_barrier(u, eps, x0, t0)
        grad = float(np.linalg.norm(barrier.gradient[S2.cells], axis=-1).max())
        rows.append((float(eps), barrier.sup_bound, grad))
    fit = loglog_fit([r[0] for r in rows], [r[1] for r in rows])
    C1 = max(s / e ** (1.0 / n) for e, s, _ in rows)
    C2 = max(g / e ** (1.0 / n) for e, _, g in rows)
    logger.info("barrier smallness exponent %.4f, C1=%.4g, C2=%.4g", fit.slope, C1, C2)
    return SmallnessFit(rows, fit.slope, C1, C2)


def gradient_smallness_check(
    barrier: BarrierField, S2: SectionSet, S3: SectionSet, S4: SectionSet
) -> EstimateResult:
    """max_{S_2} |Dh| <= sup|h| / dist(S_3, boundary of S_4)."""
    grid = barrier.grid
    outside = grid.points[S4.boundary_cells]
    inner = grid.points[S3.cells]
    dist = min(
        float(np.linalg.norm(outside - p, axis=-1).min()) for p in inner[:: max(1, len(inner) // 2000)]
    )
    lhs = float(np.linalg.norm(barrier.gradient[S2.cells], axis=-1).max())
    rhs = barrier.sup_bound / dist
    return EstimateResult(lhs, rhs, lhs <= rhs)


def bad_set_trace_check(u: Potential, barrier: BarrierField, bad: BadSet, tau: float = 0.1) -> float:
    """Fraction of bad cells with u^ij h_ij >= 2n (1 - tau)."""
    if not bad.cells.any():
        return 1.0
    inv = np.linalg.inv(u.hessian[bad.cells])
    trace = np.einsum("kij,kji->k", inv, barrier.hessian[bad.cells])
    return float(np.mean(trace >= 2 * u.dim * (1 - tau)))


def admissible_barrier_eps(eps: float, alpha: float, n: int, C1: float, C2: float) -> bool:
    """C1 eps^(1/n) <= 1/4 and C2 eps^(1/n) <= alpha/(2n)."""
    scale = eps ** (1.0 / n)
    return C1 * scale <= 0.25 and C2 * scale <= alpha / (2 * n)


# -- classical subsolution ------------------------------------------------


@dataclass(frozen=True, eq=False)
class SubsolutionReport:
    m: float
    values: FloatArray
    annulus: BoolArray
    violation_measure: float

    @property
    def min_value(self) -> float:
        return float(self.values[self.annulus].min()) if self.annulus.any() else 0.0

    @property
    def passed(self) -> bool:
        return self.violation_measure == 0.0


def classical_subsolution_check(
    u: Potential,
    h_eps: GridFunction | None,
    m: float,
    alpha: float,
    x0: Point | None = None,
    t0: float = 1.0,
    tol: float = 1e-10,
) -> SubsolutionReport:
    """u^ij W_ij on S_2 minus S_alpha for W = V^-m - 2^-m, V = tilt - h_eps.

    u^ij W_ij = m V^(-m-2) [(m+1) u^ij V_i V_j - V (n - u^ij h_ij)].

    Raises:
        DomainViolation: V <= 0 somewhere on the annulus.
    """
    if m < 0:
        raise PreconditionViolation("exponent m must be non-negative")
    grid = u.grid
    centre = np.zeros(u.dim) if x0 is None else np.asarray(x0, dtype=float)
    S2 = section(u, centre, 2 * t0)
    Sa = section(u, centre, alpha * t0)
    annulus = S2.cells & ~Sa.cells

    base = u.evaluate(centre)
    V = u.tilt(centre)
    dV = u.gradient - base.gradient
    hh = np.zeros(grid.shape + (u.dim, u.dim))
    if h_eps is not None:
        V = V - h_eps.values
        dV = dV - h_eps.gradient
        hh = h_eps.hessian
    if annulus.any() and V[annulus].min() <= 0:
        bad = tuple(int(i) for i in np.argwhere(annulus & (V <= 0))[0])
        raise DomainViolation(f"V <= 0 at cell {bad}")

    values = np.zeros(grid.shape)
    if m > 0 and annulus.any():
        inv = np.linalg.inv(u.hessian[annulus])
        Va, dVa = V[annulus], dV[annulus]
        quad = np.einsum("ki,kij,kj->k", dVa, inv, dVa)
        trace_h = np.einsum("kij,kji->k", inv, hh[annulus])
        values[annulus] = m * Va ** (-m - 2) * ((m + 1) * quad - Va * (u.dim - trace_h))
    violating = annulus & (values < -tol)
    return SubsolutionReport(
        m=float(m),
        values=values,
        annulus=annulus,
        violation_measure=float(violating.sum() * grid.cell_measure),
    )


def minimal_subsolution_exponent(
    u: Potential,
    h_eps: GridFunction | None,
    alpha: float,
    x0: Point | None = None,
    t0: float = 1.0,
    m_max: int = 64,
) -> int | None:
    """Smallest integer m >= 1 with an empty violation set, or None up to ``m_max``."""
    for m in range(1, m_max + 1):
        if classical_subsolution_check(u, h_eps, m, alpha, x0, t0).passed:
            logger.info("subsolution threshold m=%d for %s", m, u.name)
            return m
    logger.warning("no subsolution exponent up to m=%d for %s", m_max, u.name)
    return None


# -- Harnack barrier ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HarnackBarrier:
    values: FloatArray
    t: float
    beta: float
    t_min: float | None = None
    touch: tuple[float, ...] | None = None
    r: float | None = None
    normalized: FloatArray | None = field(default=None, repr=False)


def harnack_barrier(
    u: Potential,
    t: float,
    beta: float,
    S1: SectionSet,
    v: GridFunction | FloatArray | None = None,
) -> HarnackBarrier:
    """h_t = t (1 - u~)^-beta on S_1, with u~ the tilt at the section centre over its height.

    With ``v`` the result also carries the minimal t with h_t >= v on S_1,
    which is max v (1 - u~)^beta, the touching point x0 and r = (1 - u~(x0))/2.

    Raises:
        DegenerateBarrier: u~ >= 1 on a member cell.
    """
    if beta <= 0:
        raise PreconditionViolation("beta must be positive")
    if S1.count == 0:
        raise DegenerateBarrier("section has no cells")
    normalized = u.tilt(S1.center) / S1.height
    inside = normalized[S1.cells]
    if inside.max() >= 1.0:
        raise DegenerateBarrier(f"normalized potential reaches {inside.max():.4g} inside the section")
    values = np.full(u.grid.shape, np.nan)
    values[S1.cells] = t * (1.0 - inside) ** (-beta)

    t_min = touch = r = None
    if v is not None:
        v_vals = v.values if isinstance(v, GridFunction) else np.broadcast_to(np.asarray(v, dtype=float), u.grid.shape)
        weighted = v_vals[S1.cells] * (1.0 - inside) ** beta
        k = int(np.argmax(weighted))
        t_min = max(float(weighted[k]), 0.0)
        touch = tuple(float(c) for c in S1.points[k])
        r = 0.5 * (1.0 - float(inside[k]))
    return HarnackBarrier(values, t, beta, t_min, touch, r, normalized)


def beta_choice(M: float, rho: float) -> float:
    """Solves M((1 - rho)^-beta - 1) = 1/2 for beta."""
    if M <= 0 or not 0 < rho < 1:
        raise PreconditionViolation("need M > 0 and 0 < rho < 1")
    return math.log1p(1.0 / (2.0 * M)) / -math.log1p(-rho)


def beta_from_constants(M: float, rho: float, n: int, mu: float, eps: float) -> float:
    """beta_choice raised to at least n(n+1)/(2 mu eps)."""
    return max(beta_choice(M, rho), n * (n + 1) / (2.0 * mu * eps))
