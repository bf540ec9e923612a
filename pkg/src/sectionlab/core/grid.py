"""Uniform node grids on axis-aligned boxes.

Every node is the center of a cell whose measure is the product of the
spacings; sums over nodes are midpoint-rule integrals.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from ..utils.errors import OutOfDomain, PreconditionViolation

MIN_CELLS_PER_AXIS = 8
COLLAR_WIDTH = 2


@dataclass(frozen=True)
class Grid:
    dim: int
    spacing: tuple[float, ...]
    origin: tuple[float, ...]
    extents: tuple[int, ...]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise PreconditionViolation(f"dimension {self.dim} not in {{1, 2, 3}}")
        if not (len(self.spacing) == len(self.origin) == len(self.extents) == self.dim):
            raise PreconditionViolation("spacing, origin and extents must have length dim")
        if min(self.spacing) <= 0:
            raise PreconditionViolation("grid spacing must be positive")
        if min(self.extents) < MIN_CELLS_PER_AXIS:
            raise PreconditionViolation(
                f"need at least {MIN_CELLS_PER_AXIS} cells per axis, got {self.extents}"
            )

    @classmethod
    def box(cls, dim: int, half_width: float | Sequence[float], resolution: int) -> Grid:
        """Nodes on [-L, L]^dim with ``resolution`` intervals per axis.

        ``half_width`` may give one L per axis. With an even resolution the
        origin is a node.
        """
        widths = np.broadcast_to(np.asarray(half_width, dtype=float), (dim,))
        return cls(
            dim=dim,
            spacing=tuple(float(2.0 * w / resolution) for w in widths),
            origin=tuple(float(-w) for w in widths),
            extents=(resolution + 1,) * dim,
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.extents

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def min_spacing(self) -> float:
        return float(min(self.spacing))

    @cached_property
    def axes(self) -> tuple[NDArray[np.float64], ...]:
        return tuple(
            o + h * np.arange(m)
            for o, h, m in zip(self.origin, self.spacing, self.extents, strict=True)
        )

    @cached_property
    def points(self) -> NDArray[np.float64]:
        """Node coordinates, shape ``extents + (dim,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def upper(self) -> NDArray[np.float64]:
        return np.array([ax[-1] for ax in self.axes])

    def contains(self, x: NDArray[np.float64] | tuple[float, ...]) -> bool:
        p = np.asarray(x, dtype=float)
        lo = np.asarray(self.origin)
        return bool(np.all(p >= lo - 1e-12) and np.all(p <= self.upper + 1e-12))

    def nearest_index(self, x: NDArray[np.float64] | tuple[float, ...]) -> tuple[int, ...]:
        p = np.asarray(x, dtype=float)
        if p.shape != (self.dim,) or not self.contains(p):
            raise OutOfDomain(tuple(np.atleast_1d(p).tolist()))
        idx = np.rint((p - np.asarray(self.origin)) / np.asarray(self.spacing))
        idx = np.clip(idx, 0, np.asarray(self.extents) - 1).astype(int)
        return tuple(int(i) for i in idx)

    def point(self, index: tuple[int, ...]) -> NDArray[np.float64]:
        return np.asarray(self.origin) + np.asarray(self.spacing) * np.asarray(index)

    def collar_mask(self, width: int = COLLAR_WIDTH) -> NDArray[np.bool_]:
        """Nodes within ``width`` cells of the grid boundary."""
        key = ("collar", width)
        if key not in self._cache:
            inner = np.zeros(self.extents, dtype=bool)
            inner[tuple(slice(width, m - width) for m in self.extents)] = True
            self._cache[key] = ~inner
        return self._cache[key]

    def in_collar(self, index: tuple[int, ...], width: int = COLLAR_WIDTH) -> bool:
        return any(i < width or i >= m - width for i, m in zip(index, self.extents, strict=True))

    def refined(self, factor: int = 2) -> Grid:
        """Same box, ``factor`` times as many intervals per axis."""
        return Grid(
            dim=self.dim,
            spacing=tuple(h / factor for h in self.spacing),
            origin=self.origin,
            extents=tuple((m - 1) * factor + 1 for m in self.extents),
        )

    def distance_to(self, mask: NDArray[np.bool_]) -> NDArray[np.float64]:
        """Euclidean distance from every node to the nearest node of ``mask``."""
        if not mask.any():
            return np.full(self.extents, np.inf)
        return ndimage.distance_transform_edt(~mask, sampling=self.spacing)


def full_structure(dim: int) -> NDArray[np.bool_]:
    """Connectivity including diagonal neighbours."""
    return ndimage.generate_binary_structure(dim, dim)


def outer_boundary(mask: NDArray[np.bool_]) -> NDArray[np.bool_]:
    """Non-member nodes adjacent (incl. diagonals) to a member."""
    return ndimage.binary_dilation(mask, structure=full_structure(mask.ndim)) & ~mask


def inner_boundary(mask: NDArray[np.bool_]) -> NDArray[np.bool_]:
    """Member nodes with a non-member neighbour (incl. diagonals)."""
    eroded = ndimage.binary_erosion(
        mask, structure=full_structure(mask.ndim), border_value=0
    )
    return mask & ~eroded
