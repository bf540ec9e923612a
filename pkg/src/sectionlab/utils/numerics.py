"""Small numerical helpers shared across modules: fits, bisection, quadrature."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq
from scipy.special import gamma

from .errors import FitDegenerate

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class PowerFit:
    """y ~ C * x**slope fitted in log-log coordinates."""

    slope: float
    coefficient: float
    points: int

    def __call__(self, x: float | FloatArray) -> float | FloatArray:
        return self.coefficient * np.asarray(x, dtype=float) ** self.slope


def loglog_fit(
    x: Sequence[float] | FloatArray,
    y: Sequence[float] | FloatArray,
    min_points: int = 2,
) -> PowerFit:
    """Least-squares fit of log y against log x over the positive, finite pairs.

    Raises:
        FitDegenerate: fewer than ``min_points`` usable pairs, or all x equal.
    """
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    keep = np.isfinite(xs) & np.isfinite(ys) & (xs > 0) & (ys > 0)
    xs, ys = xs[keep], ys[keep]
    distinct = np.unique(xs).size
    if xs.size < min_points or distinct < 2:
        raise FitDegenerate(int(min(xs.size, distinct)), min_points)
    slope, intercept = np.polyfit(np.log(xs), np.log(ys), 1)
    return PowerFit(float(slope), float(np.exp(intercept)), int(xs.size))


def bracket_and_bisect(
    predicate: Callable[[float], bool],
    lo: float,
    hi: float,
    tol: float = 1e-3,
    coarse: int = 8,
) -> float:
    """Largest value in [lo, hi] where a monotone predicate still holds.

    The predicate is assumed true at small values and false past a threshold.
    A coarse geometric sweep brackets the switch, then bisection narrows it
    down to a relative width ``tol``. Returns ``lo`` if the predicate fails
    everywhere and ``hi`` if it never fails.
    """
    if not predicate(lo):
        return lo
    if predicate(hi):
        return hi
    grid = np.geomspace(lo, hi, coarse) if lo > 0 else np.linspace(lo, hi, coarse)
    good, bad = lo, hi
    for value in grid[1:]:
        if predicate(float(value)):
            good = float(value)
        else:
            bad = float(value)
            break
    while bad - good > tol * max(abs(good), tol):
        mid = 0.5 * (good + bad)
        if predicate(mid):
            good = mid
        else:
            bad = mid
    return good


def root_in(func: Callable[[float], float], lo: float, hi: float) -> float:
    """Root of a continuous scalar function with a sign change on [lo, hi]."""
    return float(brentq(func, lo, hi, xtol=1e-12))


def lp_norm(
    values: FloatArray, mask: NDArray[np.bool_], cell_measure: float, p: float
) -> float:
    """Midpoint-rule L^p norm of a scalar or vector field over the masked cells."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim > mask.ndim:
        arr = np.linalg.norm(arr, axis=-1)
    selected = np.abs(arr[mask])
    if selected.size == 0:
        return 0.0
    if np.isinf(p):
        return float(selected.max())
    return float((np.sum(selected**p) * cell_measure) ** (1.0 / p))


def symmetric_sqrt(matrices: FloatArray) -> FloatArray:
    """Principal square root of a stack of symmetric PSD matrices."""
    eigvals, eigvecs = np.linalg.eigh(matrices)
    roots = np.sqrt(np.clip(eigvals, 0.0, None))
    return np.einsum("...ik,...k,...jk->...ij", eigvecs, roots, eigvecs)


def operator_norm(matrix: FloatArray) -> float:
    return float(np.linalg.norm(matrix, ord=2))


def unit_ball_volume(n: int) -> float:
    return float(np.pi ** (n / 2) / gamma(n / 2 + 1))
