"""Convex potentials on grids and their derivative fields.

A :class:`GridFunction` stores values, gradient and Hessian on every node and,
when the function is known in closed form, exact evaluators for off-grid
points. :class:`Potential` adds convexity and the pinching certificate
``lambda <= det D2u <= Lambda``.
"""

from __future__ import annotations

import warnings
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, NamedTuple

import numpy as np
from numpy.typing import NDArray

from ..utils.errors import (
    BoundaryStencilWarning,
    NotPSD,
    OutOfDomain,
    PreconditionViolation,
    SingularHessian,
)
from ..utils.logging import get_logger
from .grid import Grid

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
PointFn = Callable[[FloatArray], FloatArray]

TAU_PSD = 1e-8
PINCHING_MARGIN = 0.01


class PointDerivatives(NamedTuple):
    value: float
    gradient: FloatArray
    hessian: FloatArray


@dataclass(frozen=True)
class ExactDerivatives:
    """Closed-form evaluators; each takes points of shape ``(..., n)``."""

    value: PointFn
    gradient: PointFn
    hessian: PointFn


def finite_difference_derivatives(
    values: FloatArray, spacing: tuple[float, ...]
) -> tuple[FloatArray, FloatArray]:
    """Second-order gradient and Hessian of sampled values.

    Central stencils in the interior, second-order one-sided stencils on the
    outermost nodes. Mixed derivatives are differences of the gradient,
    symmetrized.
    """
    n = values.ndim
    grads = np.gradient(values, *spacing, edge_order=2)
    if n == 1:
        grads = [grads]
    gradient = np.stack(grads, axis=-1)

    hessian = np.empty(values.shape + (n, n))
    for i in range(n):
        hessian[..., i, i] = _second_difference(values, i, spacing[i])
        for j in range(i + 1, n):
            dij = np.gradient(grads[i], spacing[j], axis=j, edge_order=2)
            dji = np.gradient(grads[j], spacing[i], axis=i, edge_order=2)
            mixed = 0.5 * (dij + dji)
            hessian[..., i, j] = mixed
            hessian[..., j, i] = mixed
    return gradient, hessian


def _second_difference(values: FloatArray, axis: int, h: float) -> FloatArray:
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: FloatArray
    gradient: FloatArray
    hessian: FloatArray
    name: str = "field"
    exact: ExactDerivatives | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_exact(cls, grid: Grid, exact: ExactDerivatives, name: str) -> GridFunction:
        pts = grid.points
        return cls(
            grid=grid,
            values=np.asarray(exact.value(pts), dtype=float),
            gradient=np.asarray(exact.gradient(pts), dtype=float),
            hessian=np.asarray(exact.hessian(pts), dtype=float),
            name=name,
            exact=exact,
        )

    @classmethod
    def from_samples(cls, grid: Grid, values: FloatArray, name: str) -> GridFunction:
        arr = np.asarray(values, dtype=float)
        if arr.shape != grid.shape:
            raise PreconditionViolation(
                f"samples have shape {arr.shape}, grid has {grid.shape}"
            )
        gradient, hessian = finite_difference_derivatives(arr, grid.spacing)
        return cls(grid=grid, values=arr, gradient=gradient, hessian=hessian, name=name)

    @property
    def kind(self) -> Literal["analytic", "sampled"]:
        return "analytic" if self.exact is not None else "sampled"

    def evaluate(self, x: FloatArray | tuple[float, ...]) -> PointDerivatives:
        """Value, gradient and Hessian at one point.

        Analytic functions are evaluated exactly anywhere in the grid box;
        sampled ones at the nearest node.
        """
        p = np.asarray(x, dtype=float)
        if not self.grid.contains(p):
            raise OutOfDomain(tuple(p.tolist()))
        if self.exact is not None:
            return PointDerivatives(
                float(self.exact.value(p)),
                np.asarray(self.exact.gradient(p), dtype=float),
                np.asarray(self.exact.hessian(p), dtype=float),
            )
        idx = self.grid.nearest_index(p)
        return PointDerivatives(
            float(self.values[idx]), self.gradient[idx].copy(), self.hessian[idx].copy()
        )

    def value_at(self, points: FloatArray) -> FloatArray:
        """Values at a batch of points, exact when possible, else nearest node."""
        pts = np.asarray(points, dtype=float)
        if self.exact is not None:
            return np.asarray(self.exact.value(pts), dtype=float)
        idx = np.rint(
            (pts - np.asarray(self.grid.origin)) / np.asarray(self.grid.spacing)
        ).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.grid.extents) - 1)
        return self.values[tuple(np.moveaxis(idx, -1, 0))]


@dataclass(frozen=True, eq=False)
class Potential(GridFunction):
    pinching: tuple[float, float] = (1.0, 1.0)

    @cached_property
    def det_hessian(self) -> FloatArray:
        return np.linalg.det(self.hessian)

    @property
    def dim(self) -> int:
        return self.grid.dim

    def interior_mask(self) -> NDArray[np.bool_]:
        return ~self.grid.collar_mask()

    def check_convexity(self, tol: float = TAU_PSD) -> float:
        """Smallest Hessian eigenvalue over interior nodes.

        Raises:
            NotPSD: if it falls below ``-tol``.
        """
        eigs = np.linalg.eigvalsh(self.hessian[self.interior_mask()])
        smallest = float(eigs.min())
        if smallest < -tol:
            raise NotPSD(f"{self.name}: Hessian eigenvalue {smallest:.3e} < -{tol:g}")
        return smallest

    def check_pinching(self, tol: float = 0.0) -> bool:
        lam, Lam = self.pinching
        det = self.det_hessian[self.interior_mask()]
        return bool(det.min() >= lam * (1 - tol) and det.max() <= Lam * (1 + tol))

    def tilt(self, x0: FloatArray | tuple[float, ...]) -> FloatArray:
        """u(y) - u(x0) - Du(x0).(y - x0) on every node (non-negative)."""
        base = self.evaluate(x0)
        disp = self.grid.points - np.asarray(x0, dtype=float)
        return self.values - base.value - disp @ base.gradient

    def with_values(self, values: FloatArray, name: str | None = None) -> Potential:
        """Sampled potential on the same grid (certificate re-measured)."""
        return sampled_potential(self.grid, values, name or self.name)


def _certified_pinching(det: FloatArray, margin: float = PINCHING_MARGIN) -> tuple[float, float]:
    return float(det.min() * (1 - margin)), float(det.max() * (1 + margin))


def _build(
    grid: Grid,
    exact: ExactDerivatives,
    name: str,
    pinching: tuple[float, float] | None,
    sampled: bool,
) -> Potential:
    if sampled:
        return sampled_potential(grid, np.asarray(exact.value(grid.points)), name)
    base = GridFunction.from_exact(grid, exact, name)
    if pinching is None:
        pinching = _certified_pinching(np.linalg.det(base.hessian))
    return Potential(
        grid=grid,
        values=base.values,
        gradient=base.gradient,
        hessian=base.hessian,
        name=name,
        exact=exact,
        pinching=pinching,
    )


def sampled_potential(grid: Grid, values: FloatArray, name: str = "sampled") -> Potential:
    base = GridFunction.from_samples(grid, values, name)
    det = np.linalg.det(base.hessian)[~grid.collar_mask()]
    return Potential(
        grid=grid,
        values=base.values,
        gradient=base.gradient,
        hessian=base.hessian,
        name=name,
        pinching=_certified_pinching(det),
    )


def quadratic_form(
    grid: Grid,
    matrix: FloatArray,
    name: str = "quadratic",
    sampled: bool = False,
) -> Potential:
    """u(x) = x.Mx / 2 for a symmetric positive definite M."""
    M = np.asarray(matrix, dtype=float)
    if M.shape != (grid.dim, grid.dim):
        raise PreconditionViolation(f"matrix shape {M.shape} does not match dim {grid.dim}")
    det = float(np.linalg.det(M))
    exact = ExactDerivatives(
        value=lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, M, x),
        gradient=lambda x: x @ M.T,
        hessian=lambda x: np.broadcast_to(M, np.shape(x)[:-1] + M.shape).copy(),
    )
    return _build(grid, exact, name, (det, det), sampled)


def quadratic(grid: Grid, sampled: bool = False) -> Potential:
    return quadratic_form(grid, np.eye(grid.dim), "quadratic", sampled)


def eccentric(grid: Grid, s: float = 4.0, sampled: bool = False) -> Potential:
    """diag(1/s, s[, 1]) quadratic, determinant 1."""
    if not 1.0 <= s <= 16.0:
        raise PreconditionViolation(f"eccentricity s={s} outside [1, 16]")
    diag = [1.0 / s, s, 1.0][: grid.dim] if grid.dim > 1 else [1.0]
    return quadratic_form(grid, np.diag(diag), f"eccentric(s={s:g})", sampled)


def radial(grid: Grid, kappa: float = 0.5, sampled: bool = False) -> Potential:
    """u = psi(|x|^2/2) with psi(s) = s + kappa (s - log(1+s)).

    psi' = 1 + kappa s/(1+s) and psi'' = kappa/(1+s)^2, so
    det D2u = psi'^(n-1) (psi' + 2 s psi'') stays in [1, (1+kappa)^n (1+2kappa)).
    """
    if kappa < 0:
        raise PreconditionViolation("kappa must be non-negative")
    n = grid.dim

    def parts(x: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        s = 0.5 * np.sum(x * x, axis=-1)
        return s, 1.0 + kappa * s / (1.0 + s), kappa / (1.0 + s) ** 2

    def value(x: FloatArray) -> FloatArray:
        s, _, _ = parts(x)
        return s + kappa * (s - np.log1p(s))

    def gradient(x: FloatArray) -> FloatArray:
        _, d1, _ = parts(x)
        return d1[..., None] * x

    def hessian(x: FloatArray) -> FloatArray:
        _, d1, d2 = parts(x)
        eye = np.eye(n)
        return d1[..., None, None] * eye + d2[..., None, None] * np.einsum(
            "...i,...j->...ij", x, x
        )

    exact = ExactDerivatives(value, gradient, hessian)
    return _build(grid, exact, f"radial(kappa={kappa:g})", None, sampled)


def cosine(grid: Grid, eta: float = 0.3, omega: float = 1.5, sampled: bool = False) -> Potential:
    """|x|^2/2 + (eta/omega^2) cos(omega d.x) with d = (1,...,1)/sqrt(n).

    D2u = I - eta cos(omega d.x) d d^T, so det D2u = 1 - eta cos(omega d.x).
    """
    if not 0.0 <= eta < 1.0:
        raise PreconditionViolation(f"eta={eta} must lie in [0, 1) for convexity")
    n = grid.dim
    d = np.ones(n) / np.sqrt(n)
    ddT = np.outer(d, d)

    exact = ExactDerivatives(
        value=lambda x: 0.5 * np.sum(x * x, axis=-1) + eta / omega**2 * np.cos(omega * (x @ d)),
        gradient=lambda x: x - (eta / omega) * np.sin(omega * (x @ d))[..., None] * d,
        hessian=lambda x: np.eye(n) - eta * np.cos(omega * (x @ d))[..., None, None] * ddT,
    )
    return _build(
        grid, exact, f"cosine(eta={eta:g},omega={omega:g})", (1.0 - eta, 1.0 + eta), sampled
    )


FAMILIES: dict[str, Callable[..., Potential]] = {
    "quadratic": quadratic,
    "eccentric": eccentric,
    "radial": radial,
    "cosine": cosine,
}


def make_potential(family: str, grid: Grid, sampled: bool = False, **params: float) -> Potential:
    try:
        factory = FAMILIES[family]
    except KeyError:
        raise PreconditionViolation(f"unknown potential family '{family}'") from None
    potential = factory(grid, sampled=sampled, **params)
    logger.debug(
        "built %s potential %s, pinching [%.4g, %.4g]",
        potential.kind,
        potential.name,
        *potential.pinching,
    )
    return potential


def eval_derivatives(u: GridFunction, x: FloatArray | tuple[float, ...]) -> PointDerivatives:
    """u(x), Du(x), D2u(x) with stencil provenance.

    Sampled functions near the grid edge were differentiated with one-sided
    stencils; those evaluations emit :class:`BoundaryStencilWarning`.
    """
    p = np.asarray(x, dtype=float)
    if not u.grid.contains(p):
        raise OutOfDomain(tuple(p.tolist()))
    if u.exact is None and u.grid.in_collar(u.grid.nearest_index(p)):
        warnings.warn(
            f"one-sided stencils used at {tuple(p.tolist())}",
            BoundaryStencilWarning,
            stacklevel=2,
        )
    return u.evaluate(p)


@dataclass(frozen=True, eq=False)
class CofactorField:
    U: FloatArray
    det: FloatArray

    def identity_residual(self, hessian: FloatArray, mask: NDArray[np.bool_] | None = None) -> float:
        """max ||U D2u - det(D2u) I|| over the masked nodes."""
        n = hessian.shape[-1]
        prod = self.U @ hessian - self.det[..., None, None] * np.eye(n)
        norms = np.linalg.norm(prod, axis=(-2, -1))
        return float(norms[mask].max() if mask is not None else norms.max())


def cofactor_matrices(hessian: FloatArray) -> tuple[FloatArray, FloatArray]:
    n = hessian.shape[-1]
    det = np.linalg.det(hessian)
    if n == 1:
        return np.ones_like(hessian), det
    if n == 2:
        U = np.empty_like(hessian)
        U[..., 0, 0] = hessian[..., 1, 1]
        U[..., 1, 1] = hessian[..., 0, 0]
        U[..., 0, 1] = -hessian[..., 0, 1]
        U[..., 1, 0] = -hessian[..., 1, 0]
        return U, det
    return det[..., None, None] * np.linalg.inv(hessian), det


def cofactor(u: Potential, det_floor: float = 1e-10) -> CofactorField:
    """U = det(D2u) (D2u)^-1 on every node.

    Raises:
        SingularHessian: if det D2u drops below ``det_floor`` on an interior node.
    """
    U, det = cofactor_matrices(u.hessian)
    interior_det = det[u.interior_mask()]
    if interior_det.min() < det_floor:
        raise SingularHessian(float(interior_det.min()), det_floor)
    return CofactorField(U=U, det=det)


@dataclass(frozen=True)
class StructuralConstants:
    lam: float
    Lam: float
    lam_tilde: float
    Lam_tilde: float
    p: float

    def __post_init__(self) -> None:
        if not 0 < self.lam <= self.Lam:
            raise PreconditionViolation(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")
        if not 0 < self.lam_tilde <= self.Lam_tilde:
            raise PreconditionViolation(
                f"need 0 < lambda~ <= Lambda~, got {self.lam_tilde}, {self.Lam_tilde}"
            )

    @property
    def ellipticity_ratio(self) -> float:
        return self.Lam_tilde / self.lam_tilde

    def drift_exponent_ok(self, n: int, alpha_star: float) -> bool:
        """p > n(1+a*)/(2a*), needed by the Harnack experiments."""
        return self.p > n * (1 + alpha_star) / (2 * alpha_star)
