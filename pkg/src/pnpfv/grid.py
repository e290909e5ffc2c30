"""Structured tensor-product grids.

Cells are stored in a flat array in lexicographic order with axis 0
fastest, i.e. ``flat = i0 + N0 * (i1 + N1 * i2)``.  All indices and axes
are zero-based.  A field of length ``grid.size`` can be viewed as an
``(N0, N1, N2)`` array with ``values.reshape(grid.shape, order="F")``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

MINUS = "minus"
PLUS = "plus"
SIDES = (MINUS, PLUS)


class FaceId(NamedTuple):
    """A cell face: owning cell multi-index, normal axis and side."""

    cell: tuple
    axis: int
    side: str


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid over ``(0, L0) x ... x (0, L_{d-1})``."""

    dim: int
    lengths: tuple
    counts: tuple
    spacings: tuple = field(init=False)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if len(self.lengths) != self.dim or len(self.counts) != self.dim:
            raise ValueError("lengths and counts must have one entry per axis")
        lengths = tuple(float(v) for v in self.lengths)
        counts = tuple(int(v) for v in self.counts)
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise ValueError(f"lengths must be positive, got {lengths}")
        if any(n < 1 for n in counts):
            raise ValueError(f"counts must be >= 1, got {counts}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "spacings", tuple(L / n for L, n in zip(lengths, counts)))

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def strides(self) -> tuple:
        """Flat-index increment for a unit step along each axis."""
        return tuple(int(np.prod(self.counts[:j])) for j in range(self.dim))

    def flat_index(self, cell) -> int:
        return int(np.ravel_multi_index(tuple(cell), self.counts, order="F"))

    def multi_index(self, flat: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(flat, self.counts, order="F"))

    def as_array(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.counts, order="F")

    def as_flat(self, array: np.ndarray) -> np.ndarray:
        return np.asarray(array).reshape(-1, order="F")

    @cached_property
    def axis_indices(self) -> np.ndarray:
        """``(dim, size)`` array: index along each axis of every flat cell."""
        idx = np.unravel_index(np.arange(self.size), self.counts, order="F")
        return np.array(idx, dtype=np.int64)

    def cell_centers(self) -> tuple:
        """Coordinates ``(x, y, z)`` of all cell midpoints; absent axes are 0."""
        return self._centers

    @cached_property
    def _centers(self) -> tuple:
        coords = []
        for j in range(3):
            if j < self.dim:
                coords.append((self.axis_indices[j] + 0.5) * self.spacings[j])
            else:
                coords.append(np.zeros(self.size))
        return tuple(coords)

    def interior_faces(self, axis: int) -> tuple:
        """Flat indices ``(lower, upper)`` of the cell pairs sharing an interior face.

        Each interior face is owned by its lower cell.
        """
        self._check_axis(axis)
        return self._interior[axis]

    @cached_property
    def _interior(self) -> list:
        pairs = []
        for j in range(self.dim):
            lower = np.flatnonzero(self.axis_indices[j] < self.counts[j] - 1)
            pairs.append((lower, lower + self.strides[j]))
        return pairs

    def boundary_cells(self, axis: int, side: str) -> np.ndarray:
        """Flat indices of the cells touching the boundary plane ``(axis, side)``."""
        self._check_axis(axis)
        if side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {side!r}")
        target = 0 if side == MINUS else self.counts[axis] - 1
        return np.flatnonzero(self.axis_indices[axis] == target)

    def face_centers(self, cells: np.ndarray, axis: int, side: str) -> tuple:
        """Coordinates of the ``(axis, side)`` face of each cell in ``cells``."""
        x = [c[cells] for c in self.cell_centers()]
        shift = 0.5 * self.spacings[axis]
        x[axis] = x[axis] - shift if side == MINUS else x[axis] + shift
        return tuple(x)

    def _check_axis(self, axis):
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis must be in [0, {self.dim}), got {axis}")


def build_grid(dim: int, lengths, counts) -> Grid:
    return Grid(dim, tuple(lengths), tuple(counts))


def boundary_faces(grid: Grid, axis: int, side: str) -> list:
    """All faces lying on the boundary plane ``x_axis = 0`` (minus) or ``L`` (plus)."""
    return [FaceId(grid.multi_index(c), axis, side) for c in grid.boundary_cells(axis, side)]


def canonical_face(grid: Grid, face: FaceId) -> FaceId:
    """Map an interior face to its representation on the lower cell."""
    if face.side == MINUS and face.cell[face.axis] > 0:
        cell = list(face.cell)
        cell[face.axis] -= 1
        return FaceId(tuple(cell), face.axis, PLUS)
    return face


def face_center(grid: Grid, face: FaceId) -> tuple:
    x = [0.0, 0.0, 0.0]
    for j in range(grid.dim):
        x[j] = (face.cell[j] + 0.5) * grid.spacings[j]
    shift = 0.5 * grid.spacings[face.axis]
    x[face.axis] += -shift if face.side == MINUS else shift
    return tuple(x)
