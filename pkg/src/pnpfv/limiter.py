"""Local mass-conserving scaling limiter.

For a negative cell ``beta`` an index box around it is grown until the
volume-weighted average of its non-zero cells is positive.  Values in the
box are then pulled toward that average just far enough to make the
smallest one vanish:

    rho~ = theta * rho + (1 - theta) * mean / |K|,
    theta = min(1, mean / (mean - rho_min)),

with ``mean = sum |K| rho / |S|`` and ``rho_min = min |K| rho`` over the
patch ``S``.  The patch mass is unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LimiterError(RuntimeError):
    """No patch with positive average exists (non-positive global mass)."""


@dataclass
class LimiterPatch:
    """One limiter application: center cell, patch cells and scaling data."""

    center: int
    cells: np.ndarray
    mean: float
    theta: float
    rho_min: float
    radius: int

    @property
    def size(self) -> int:
        return int(self.cells.size)


def _box(grid, beta, p):
    """Flat indices of the box of half-width ``p`` around ``beta``, clipped to the grid."""
    center = grid.multi_index(beta)
    ranges = [np.arange(max(0, c - p), min(c + p, n - 1) + 1) for c, n in zip(center, grid.counts)]
    mesh = np.meshgrid(*ranges, indexing="ij")
    return np.ravel_multi_index(tuple(m.ravel() for m in mesh), grid.counts, order="F")


def grow_patch(grid, values, beta: int) -> LimiterPatch:
    """Smallest box around cell ``beta`` whose non-zero cells have a positive average.

    Raises
    ------
    LimiterError
        If even the whole domain has a non-positive average.
    """
    values = np.asarray(values, dtype=float)
    vol = grid.cell_volume
    largest = max(grid.counts)
    for p in range(1, largest + 1):
        box = _box(grid, beta, p)
        cells = np.sort(box[(values[box] != 0.0) | (box == beta)])
        mean = vol * float(np.sum(values[cells])) / cells.size
        if mean > 0.0:
            rho_min = vol * float(np.min(values[cells]))
            theta = 1.0 if rho_min >= 0 else min(1.0, mean / (mean - rho_min))
            return LimiterPatch(int(beta), cells, mean, theta, rho_min, p)
    raise LimiterError(
        f"no neighborhood of cell {grid.multi_index(beta)} has positive mass; "
        f"total mass {vol * float(np.sum(values)):.3e}"
    )


def limit_patch(grid, values, patch: LimiterPatch) -> np.ndarray:
    """Apply the scaling of ``patch`` to a copy of ``values``."""
    out = np.array(values, dtype=float, copy=True)
    cells = patch.cells
    out[cells] = patch.theta * out[cells] + (1.0 - patch.theta) * patch.mean / grid.cell_volume
    # The minimum lands on zero exactly in exact arithmetic.
    if patch.theta < 1.0:
        out[cells[np.argmin(values[cells])]] = 0.0
    out[cells] = np.where(out[cells] < 0.0, 0.0, out[cells])
    return out


def apply_limiter(grid, values, max_patches: int = None) -> tuple:
    """Remove negative values patch by patch.

    Negative cells are visited in flat (lexicographic) order; after each
    patch the scan restarts, because a patch can also repair later cells.

    Returns
    -------
    values : ndarray
        Limited copy, non-negative everywhere.
    patches : list of LimiterPatch
    """
    out = np.array(values, dtype=float, copy=True)
    if max_patches is None:
        max_patches = 4 * out.size
    patches = []
    while True:
        negative = np.flatnonzero(out < 0.0)
        if negative.size == 0:
            return out, patches
        if len(patches) >= max_patches:
            raise LimiterError(f"limiter did not terminate after {len(patches)} patches")
        patch = grow_patch(grid, out, int(negative[0]))
        out = limit_patch(grid, out, patch)
        patches.append(patch)
