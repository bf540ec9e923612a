"""Forward-constructed solutions: pick v >= 0, derive f from the operator.

Every sample is an exact solution of a^ij v_ij + b.Dv + c v = f with its own
right-hand side, so the estimates under test never see solver error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ..core.grid import Grid
from ..core.normalization import ProblemInstance
from ..core.potentials import ExactDerivatives, GridFunction, Potential
from ..utils.errors import PreconditionViolation
from ..utils.logging import get_logger

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]

FAMILIES = ("harmonic", "radial", "bump-sum", "potential-composed")


@dataclass(frozen=True, eq=False)
class SolutionSample:
    v: GridFunction
    f: FloatArray
    family: str
    params: dict[str, object] = field(default_factory=dict)
    trace_closed_form: FloatArray | None = None

    def instance(self, P: ProblemInstance) -> ProblemInstance:
        """``P`` with this sample's right-hand side."""
        return P.with_rhs(self.f)

    def scaled(self, factor: float) -> SolutionSample:
        """factor * v solves the same operator with right-hand side factor * f."""
        if factor <= 0:
            raise PreconditionViolation("scale factor must be positive")
        v = self.v
        exact = None
        if v.exact is not None:
            ex = v.exact
            exact = ExactDerivatives(
                value=lambda x: factor * ex.value(x),
                gradient=lambda x: factor * ex.gradient(x),
                hessian=lambda x: factor * ex.hessian(x),
            )
        scaled_v = GridFunction(
            v.grid, factor * v.values, factor * v.gradient, factor * v.hessian, v.name, exact
        )
        trace = None if self.trace_closed_form is None else factor * self.trace_closed_form
        return SolutionSample(scaled_v, factor * self.f, self.family, self.params, trace)


def _outer(x: FloatArray) -> FloatArray:
    return np.einsum("...i,...j->...ij", x, x)


def affine_solution(grid: Grid, kappa: float, slope: FloatArray | None = None, centre: FloatArray | None = None) -> GridFunction:
    """kappa + slope.(x - centre)."""
    n = grid.dim
    g = np.zeros(n) if slope is None else np.asarray(slope, dtype=float)
    z = np.zeros(n) if centre is None else np.asarray(centre, dtype=float)
    exact = ExactDerivatives(
        value=lambda x: kappa + (x - z) @ g,
        gradient=lambda x: np.broadcast_to(g, np.shape(x)).copy(),
        hessian=lambda x: np.zeros(np.shape(x)[:-1] + (n, n)),
    )
    return GridFunction.from_exact(grid, exact, "affine")


def radial_solution(
    grid: Grid, kappa: float, sigma: float, q: float = 1.0, centre: FloatArray | None = None, normalized: bool = True
) -> GridFunction:
    """kappa (sigma^2 + |x - z|^2)^(-q/2), times sigma^q when ``normalized``."""
    n = grid.dim
    z = np.zeros(n) if centre is None else np.asarray(centre, dtype=float)
    scale = kappa * (sigma**q if normalized else 1.0)

    def w(x: FloatArray) -> FloatArray:
        return sigma**2 + np.sum((x - z) ** 2, axis=-1)

    def hessian(x: FloatArray) -> FloatArray:
        d = x - z
        ww = w(x)
        coeff = -q * scale * ww ** (-q / 2 - 1)
        return coeff[..., None, None] * (np.eye(n) - (q + 2) * _outer(d) / ww[..., None, None])

    exact = ExactDerivatives(
        value=lambda x: scale * w(x) ** (-q / 2),
        gradient=lambda x: (-q * scale * w(x) ** (-q / 2 - 1))[..., None] * (x - z),
        hessian=hessian,
    )
    return GridFunction.from_exact(grid, exact, f"radial(q={q:g},sigma={sigma:g})")


def bump_sum_solution(
    grid: Grid, kappa: float, weights: FloatArray, centres: FloatArray, widths: FloatArray
) -> GridFunction:
    """kappa + sum_k gamma_k exp(-|x - z_k|^2 / (2 sigma_k^2))."""
    n = grid.dim
    weights = np.asarray(weights, dtype=float)
    centres = np.asarray(centres, dtype=float)
    widths = np.asarray(widths, dtype=float)
    if np.any(weights < 0):
        raise PreconditionViolation("bump weights must be non-negative")

    def terms(x: FloatArray) -> tuple[FloatArray, FloatArray]:
        d = x[..., None, :] - centres
        e = weights * np.exp(-np.sum(d * d, axis=-1) / (2 * widths**2))
        return d, e

    def gradient(x: FloatArray) -> FloatArray:
        d, e = terms(x)
        return -np.sum((e / widths**2)[..., None] * d, axis=-2)

    def hessian(x: FloatArray) -> FloatArray:
        d, e = terms(x)
        inv = 1.0 / widths**2
        outer = np.einsum("...ki,...kj->...kij", d, d) * (inv**2)[:, None, None]
        return np.sum(e[..., None, None] * (outer - inv[:, None, None] * np.eye(n)), axis=-3)

    exact = ExactDerivatives(
        value=lambda x: kappa + np.sum(terms(x)[1], axis=-1),
        gradient=gradient,
        hessian=hessian,
    )
    return GridFunction.from_exact(grid, exact, f"bump-sum({len(weights)})")


def paraboloid_solution(grid: Grid, kappa: float, curvature: float, centre: FloatArray | None = None) -> GridFunction:
    """kappa + (curvature/2)|x - centre|^2."""
    n = grid.dim
    z = np.zeros(n) if centre is None else np.asarray(centre, dtype=float)
    exact = ExactDerivatives(
        value=lambda x: kappa + 0.5 * curvature * np.sum((x - z) ** 2, axis=-1),
        gradient=lambda x: curvature * (x - z),
        hessian=lambda x: np.broadcast_to(curvature * np.eye(n), np.shape(x)[:-1] + (n, n)).copy(),
    )
    return GridFunction.from_exact(grid, exact, f"paraboloid(b={curvature:g})")


def exponential_profile(u: Potential, x0: FloatArray, t0: float, rate: float) -> GridFunction:
    """exp(rate (1 - s/t0)) with s the tilt of u at x0; equals 1 on the boundary of S(x0, t0)."""
    base = u.evaluate(x0)
    k = rate / t0

    def assemble(val: FloatArray, grad: FloatArray, hess: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        g = np.exp(rate - k * val)
        ds = grad - base.gradient
        return g, (-k * g)[..., None] * ds, (k * g)[..., None, None] * (k * _outer(ds) - hess)

    values, gradient, hessian = assemble(u.tilt(x0), u.gradient, u.hessian)
    exact = None
    if u.exact is not None:
        ex = u.exact

        def tilt_at(x: FloatArray) -> FloatArray:
            return ex.value(x) - base.value - (x - np.asarray(x0)) @ base.gradient

        exact = ExactDerivatives(
            value=lambda x: assemble(tilt_at(x), ex.gradient(x), ex.hessian(x))[0],
            gradient=lambda x: assemble(tilt_at(x), ex.gradient(x), ex.hessian(x))[1],
            hessian=lambda x: assemble(tilt_at(x), ex.gradient(x), ex.hessian(x))[2],
        )
    return GridFunction(u.grid, values, gradient, hessian, f"exp-profile(rate={rate:g})", exact)


def composed_solution(u: Potential, x0: FloatArray, kappa: float, gamma: float, q: float) -> tuple[GridFunction, FloatArray]:
    """v = kappa + gamma s^q with s the tilt of u at x0.

    Also returns trace((D2u)^-1 D2v) = g' n + g'' u^ij s_i s_j.
    """
    if q < 2:
        raise PreconditionViolation("composition exponent must be at least 2")
    base = u.evaluate(x0)
    n = u.dim

    def parts(val: FloatArray, grad: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
        s = np.clip(val, 0.0, None)
        ds = grad - base.gradient
        return s, ds, gamma * q * s ** (q - 1), gamma * q * (q - 1) * s ** (q - 2)

    def assemble(val: FloatArray, grad: FloatArray, hess: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        s, ds, g1, g2 = parts(val, grad)
        return (
            kappa + gamma * s**q,
            g1[..., None] * ds,
            g1[..., None, None] * hess + g2[..., None, None] * _outer(ds),
        )

    tilt = u.tilt(x0)
    values, gradient, hessian = assemble(tilt, u.gradient, u.hessian)
    exact = None
    if u.exact is not None:
        ex = u.exact

        def tilt_at(x: FloatArray) -> FloatArray:
            return ex.value(x) - base.value - (x - np.asarray(x0)) @ base.gradient

        exact = ExactDerivatives(
            value=lambda x: assemble(tilt_at(x), ex.gradient(x), ex.hessian(x))[0],
            gradient=lambda x: assemble(tilt_at(x), ex.gradient(x), ex.hessian(x))[1],
            hessian=lambda x: assemble(tilt_at(x), ex.gradient(x), ex.hessian(x))[2],
        )
    s, ds, g1, g2 = parts(tilt, u.gradient)
    inv = np.linalg.inv(u.hessian)
    trace = g1 * n + g2 * np.einsum("...i,...ij,...j->...", ds, inv, ds)
    v = GridFunction(u.grid, values, gradient, hessian, f"composed(q={q:g})", exact)
    return v, trace


def trace_crosscheck(u: Potential, sample: SolutionSample, mask: NDArray[np.bool_]) -> float:
    """max |trace((D2u)^-1 D2v) - closed form| over the masked nodes."""
    if sample.trace_closed_form is None:
        raise PreconditionViolation(f"family {sample.family} has no closed-form trace")
    inv = np.linalg.inv(u.hessian[mask])
    direct = np.einsum("kij,kji->k", inv, sample.v.hessian[mask])
    return float(np.abs(direct - sample.trace_closed_form[mask]).max())


def _draw(P: ProblemInstance, family: str, rng: np.random.Generator) -> tuple[GridFunction, dict[str, object], FloatArray | None]:
    grid = P.grid
    n = grid.dim
    x0 = np.asarray(P.section.center)
    reach = float(np.linalg.norm(grid.points, axis=-1).max())
    if family == "harmonic":
        slope = rng.normal(0.0, 0.5, n)
        kappa = 1.0 + float(np.linalg.norm(slope)) * (reach + float(np.linalg.norm(x0)))
        return affine_solution(grid, kappa, slope, x0), {"kappa": kappa, "slope": slope.tolist()}, None
    if family == "radial":
        kappa = float(rng.uniform(0.5, 2.0))
        sigma = float(rng.uniform(0.1, 0.3))
        q = float(rng.uniform(0.5, 2.0))
        z = x0 + rng.uniform(-0.25, 0.25, n) * P.section.max_radius()
        v = radial_solution(grid, kappa, sigma, q, z)
        return v, {"kappa": kappa, "sigma": sigma, "q": q, "centre": z.tolist()}, None
    if family == "bump-sum":
        count = int(rng.integers(1, 4))
        kappa = float(rng.uniform(0.5, 1.5))
        weights = rng.uniform(0.0, 2.0, count)
        radius = max(P.section.max_radius(), grid.min_spacing)
        centres = x0 + rng.uniform(-0.5, 0.5, (count, n)) * radius
        widths = rng.uniform(0.2, 0.5, count) * radius
        v = bump_sum_solution(grid, kappa, weights, centres, widths)
        return v, {"kappa": kappa, "weights": weights.tolist(), "widths": widths.tolist()}, None
    if family == "potential-composed":
        kappa = float(rng.uniform(0.5, 1.5))
        gamma = float(rng.uniform(0.5, 2.0))
        q = float(rng.choice([2.0, 3.0]))
        v, trace = composed_solution(P.potential, x0, kappa, gamma, q)
        return v, {"kappa": kappa, "gamma": gamma, "q": q}, trace
    raise PreconditionViolation(f"unknown solution family '{family}'")


def make_sample(P: ProblemInstance, v: GridFunction, family: str, params: dict[str, object] | None = None) -> SolutionSample:
    """Wrap a non-negative v with its derived right-hand side."""
    if np.any(v.values[P.section.closure] < 0):
        raise PreconditionViolation(f"{v.name} is negative on the section")
    f = P.operator(v)
    if not np.all(np.isfinite(f)):
        raise PreconditionViolation(f"{v.name} has a non-finite right-hand side")
    return SolutionSample(v, f, family, params or {})


def generate_solutions(P: ProblemInstance, family: str, count: int, seed: int) -> list[SolutionSample]:
    """``count`` samples from one family, reproducible from ``seed``."""
    if family not in FAMILIES:
        raise PreconditionViolation(f"unknown solution family '{family}'")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        v, params, trace = _draw(P, family, rng)
        sample = make_sample(P, v, family, params)
        if trace is not None:
            sample = SolutionSample(sample.v, sample.f, family, params, trace)
        samples.append(sample)
    logger.debug("generated %d %s samples (seed %d)", count, family, seed)
    return samples
