"""Semi-implicit Slotboom density update for a single species.

The drift-diffusion flux is written as ``D e^{-psi} grad(rho e^{psi})`` and
the implicit step is solved for ``G = rho e^{psi}``.  In that unknown the
matrix is symmetric, strictly diagonally dominant and an M-matrix, so the
updated density is non-negative for any step size.

Exponentials are taken of ``psi - max(psi)``; every equation is homogeneous
of degree zero in a common rescaling of ``e^{psi}``, so the shift only
guards against overflow and does not change the result.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sparse import CsrMatrix, stencil_pattern

HARMONIC = "harmonic"
GEOMETRIC = "geometric"
ALGEBRAIC = "algebraic"
MEANS = (HARMONIC, GEOMETRIC, ALGEBRAIC)


def slotboom_weight(psi_left, psi_right, kind: str = HARMONIC):
    """Face value of ``e^{-psi}`` from the two adjacent cell values.

    Evaluated with the larger exponent factored out, so the result is finite
    whenever the mean itself is representable.
    """
    a = np.asarray(psi_left, dtype=float)
    b = np.asarray(psi_right, dtype=float)
    if kind == HARMONIC:
        # 2 e^{-a-b} / (e^{-a} + e^{-b}) = 2 / (e^a + e^b)
        m = np.maximum(a, b)
        return 2.0 * np.exp(-m) / (np.exp(a - m) + np.exp(b - m))
    if kind == GEOMETRIC:
        return np.exp(-0.5 * (a + b))
    if kind == ALGEBRAIC:
        lo = np.minimum(a, b)
        return 0.5 * np.exp(-lo) * (1.0 + np.exp(lo - np.maximum(a, b)))
    raise ValueError(f"interface mean must be one of {MEANS}, got {kind!r}")


@dataclass
class DirichletFace:
    """Data on one Dirichlet plane for one species.

    ``psi`` is the boundary potential used in the face weight, ``rho`` the
    density trace and ``diffusion`` the coefficient, all at face centers.
    """

    axis: int
    side: str
    psi: np.ndarray
    rho: np.ndarray
    diffusion: np.ndarray


@dataclass
class DensitySystem:
    """Linear system for ``G = rho^{n+1} e^{psi - shift}``."""

    matrix: CsrMatrix
    rhs: np.ndarray
    psi: np.ndarray
    shift: float
    scale: np.ndarray = field(repr=False, default=None)

    def density(self, g) -> np.ndarray:
        return np.asarray(g) * self.scale

    def slotboom(self, rho) -> np.ndarray:
        return np.asarray(rho) / self.scale


def assemble_density_step(grid, rho_n, psi, diffusion_faces, dirichlet, tau, mean=HARMONIC,
                          source: Optional[np.ndarray] = None, check_sign=True) -> DensitySystem:
    """Assemble ``(rho^{n+1} - rho^n)/tau = sum_j (C_{+} - C_{-})/h_j (+ source)``.

    Parameters
    ----------
    rho_n : array
        Densities at the old level (cells).
    psi : array
        Cell values of the potential used in the fluxes (``psi^n`` or an
        extrapolant).
    diffusion_faces : list of arrays
        Diffusion coefficient at the interior faces of each axis.
    dirichlet : list of DirichletFace
    tau : float
        Step size.
    source : array, optional
        Explicit cell source added as ``tau * source`` to the right-hand side.
    """
    rho_n = np.asarray(rho_n, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if tau <= 0:
        raise ValueError(f"time step must be positive, got {tau}")
    if not np.all(np.isfinite(psi)):
        raise ValueError("non-finite potential in density step")
    if check_sign and np.any(rho_n < 0):
        bad = int(np.argmin(rho_n))
        raise ValueError(f"negative density {rho_n[bad]:.3e} at cell {grid.multi_index(bad)}")

    shift = float(psi.max())
    p = psi - shift
    scale = np.exp(-p)

    weights = []
    for axis in range(grid.dim):
        lo, hi = grid.interior_faces(axis)
        d = np.asarray(diffusion_faces[axis], dtype=float)
        if np.any(d <= 0):
            raise ValueError(f"diffusion coefficient must be positive on axis {axis}")
        weights.append(tau * d * slotboom_weight(p[lo], p[hi], mean) / grid.spacings[axis] ** 2)

    diag = scale.copy()
    rhs = rho_n.copy()
    if source is not None:
        rhs += tau * np.asarray(source, dtype=float)
    for face in dirichlet:
        if np.any(face.rho < 0):
            raise ValueError(f"negative Dirichlet density trace on plane ({face.axis}, {face.side})")
        if np.any(face.diffusion <= 0):
            raise ValueError(f"diffusion coefficient must be positive on plane ({face.axis}, {face.side})")
        cells = grid.boundary_cells(face.axis, face.side)
        coef = 2.0 * tau * face.diffusion / grid.spacings[face.axis] ** 2
        diag[cells] += coef * np.exp(-(face.psi - shift))
        rhs[cells] += coef * face.rho

    matrix = stencil_pattern(grid).build(diag, weights)
    return DensitySystem(matrix, rhs, psi, shift, scale)


def interior_fluxes(grid, rho_next, psi, diffusion_faces, mean=HARMONIC) -> list:
    """Interior-face fluxes ``C`` per axis from new densities and the flux potential."""
    shift = float(np.max(psi))
    p = psi - shift
    g = rho_next * np.exp(p)
    fluxes = []
    for axis in range(grid.dim):
        lo, hi = grid.interior_faces(axis)
        w = diffusion_faces[axis] * slotboom_weight(p[lo], p[hi], mean)
        fluxes.append(w * (g[hi] - g[lo]) / grid.spacings[axis])
    return fluxes
