"""Classical a priori checks: matrix inequalities, slope estimate, Aleksandrov."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from ..utils.errors import (
    EmptyBoundary,
    NonzeroBoundary,
    NotPSD,
    NotSymmetric,
    PreconditionViolation,
)
from ..utils.numerics import unit_ball_volume
from .grid import inner_boundary
from .potentials import Potential

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]


def _require_symmetric(M: FloatArray, label: str) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSymmetric(f"{label} is not square: shape {M.shape}")
    if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, float(np.max(np.abs(M)))):
        raise NotSymmetric(f"{label} is not symmetric")


def _require_psd(M: FloatArray, label: str) -> None:
    smallest = float(np.linalg.eigvalsh(M).min())
    if smallest < -1e-12 * max(1.0, float(np.max(np.abs(M)))):
        raise NotPSD(f"{label} has eigenvalue {smallest:.3e}")


@dataclass
class MatrixInequalityReport:
    trace_ab: float
    geometric_bound: float
    trace_ok: bool
    quadratic_forms: list[tuple[float, float]] = field(default_factory=list)
    quadratic_ok: bool = True

    @property
    def passed(self) -> bool:
        return self.trace_ok and self.quadratic_ok


def matrix_ineq_check(
    A: FloatArray,
    B: FloatArray,
    vectors: FloatArray | None = None,
    tol: float = 1e-12,
) -> MatrixInequalityReport:
    """trace(AB) >= n (det A det B)^(1/n) and a_ij b_i b_j >= |b|^2 / trace(A^-1).

    Raises:
        NotSymmetric, NotPSD: on malformed input.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    for M, label in ((A, "A"), (B, "B")):
        _require_symmetric(M, label)
        _require_psd(M, label)
    n = A.shape[0]

    trace_ab = float(np.trace(A @ B))
    dets = max(float(np.linalg.det(A)), 0.0) * max(float(np.linalg.det(B)), 0.0)
    bound = n * dets ** (1.0 / n)
    report = MatrixInequalityReport(
        trace_ab=trace_ab,
        geometric_bound=bound,
        trace_ok=trace_ab >= bound - tol * max(1.0, abs(bound)),
    )

    if vectors is not None:
        trace_inv = float(np.trace(np.linalg.pinv(A))) if np.linalg.det(A) > 0 else np.inf
        for b in np.atleast_2d(np.asarray(vectors, dtype=float)):
            lhs = float(b @ A @ b)
            rhs = float(b @ b) / trace_inv
            report.quadratic_forms.append((lhs, rhs))
            if lhs < rhs - tol * max(1.0, abs(rhs)):
                report.quadratic_ok = False
    return report


@dataclass
class SandwichReport:
    lower_ok: bool
    trace_value: float
    hypothesis_holds: bool
    conclusion_holds: bool

    @property
    def passed(self) -> bool:
        return not self.hypothesis_holds or self.conclusion_holds


def matrix_sandwich_check(
    A: FloatArray, B: FloatArray, a: float, D: float, tol: float = 1e-12
) -> SandwichReport:
    """If A >= -aB and trace(B^-1 A) <= D then (an + D) B >= A.

    A is only required symmetric; B symmetric positive definite.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    _require_symmetric(A, "A")
    _require_symmetric(B, "B")
    if float(np.linalg.eigvalsh(B).min()) <= 0:
        raise NotPSD("B must be positive definite")
    n = A.shape[0]
    scale = tol * max(1.0, float(np.max(np.abs(A))))
    lower_ok = float(np.linalg.eigvalsh(A + a * B).min()) >= -scale
    trace_value = float(np.trace(np.linalg.solve(B, A)))
    hypothesis = lower_ok and trace_value <= D + scale
    conclusion = float(np.linalg.eigvalsh((a * n + D) * B - A).min()) >= -scale
    return SandwichReport(lower_ok, trace_value, hypothesis, conclusion)


@dataclass
class EstimateResult:
    lhs: float
    rhs: float
    passed: bool

    @property
    def ratio(self) -> float:
        if self.rhs == 0:
            return 0.0 if self.lhs == 0 else np.inf
        return self.lhs / self.rhs


def _domain_boundary(domain: BoolArray) -> BoolArray:
    boundary = inner_boundary(domain)
    if not boundary.any():
        raise EmptyBoundary("domain has no boundary cells")
    return boundary


def gradient_estimate_check(
    u: Potential, domain: BoolArray, x: FloatArray | tuple[float, ...], tau_rel: float = 0.05
) -> EstimateResult:
    """|Du(x)| <= (max_{boundary} u - u(x)) / dist(x, boundary)."""
    boundary = _domain_boundary(domain)
    idx = u.grid.nearest_index(x)
    if not domain[idx] or boundary[idx]:
        raise PreconditionViolation(f"{tuple(np.asarray(x).tolist())} is not interior")
    at_x = u.evaluate(x)
    dist = float(np.linalg.norm(u.grid.points[boundary] - np.asarray(x, dtype=float), axis=-1).min())
    lhs = float(np.linalg.norm(at_x.gradient))
    rhs = (float(u.values[boundary].max()) - at_x.value) / dist
    return EstimateResult(lhs, rhs, lhs <= rhs * (1 + tau_rel))


def set_diameter(points: FloatArray) -> float:
    """Diameter of a point cloud through its convex hull vertices."""
    if points.shape[0] < 2:
        return 0.0
    if points.shape[1] == 1:
        return float(points.max() - points.min())
    try:
        vertices = points[ConvexHull(points).vertices]
    except QhullError:
        vertices = points
    return float(pdist(vertices).max())


def aleksandrov_check(
    u: Potential,
    domain: BoolArray,
    x0: FloatArray | tuple[float, ...],
    level: float = 0.0,
    tau_bd: float | None = None,
) -> EstimateResult:
    """|w(x0)|^n <= C(n) diam^(n-1) dist(x0, boundary) * integral of det D2u.

    ``w = u - level`` must vanish on the boundary cells of ``domain``; the
    constant is C(n) = 1/|B_1| and the comparison allows the boundary
    tolerance to the n-th power.
    """
    grid = u.grid
    n = grid.dim
    boundary = _domain_boundary(domain)
    w = u.values - level
    if tau_bd is None:
        slope = float(np.linalg.norm(u.gradient[domain], axis=-1).max())
        tau_bd = 2.0 * grid.min_spacing * max(slope, 1.0)
    max_bd = float(np.abs(w[boundary]).max())
    if max_bd > tau_bd:
        raise NonzeroBoundary(max_bd, tau_bd)

    point = np.asarray(x0, dtype=float)
    lhs = abs(float(u.evaluate(point).value) - level) ** n
    dist = float(np.linalg.norm(grid.points[boundary] - point, axis=-1).min())
    if boundary[grid.nearest_index(point)]:
        dist = 0.0
    diam = set_diameter(grid.points[domain])
    mass = float(u.det_hessian[domain].sum() * grid.cell_measure)
    rhs = diam ** (n - 1) * dist * mass / unit_ball_volume(n)
    return EstimateResult(lhs, rhs, lhs <= rhs + tau_bd**n)
