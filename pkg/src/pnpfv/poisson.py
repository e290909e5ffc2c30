"""Finite-volume Poisson problem ``-div(eps grad phi) = 4 pi (f + sum_i q_i rho_i)``.

Interior faces use ``eps`` sampled at the face center, Dirichlet faces a
half-cell difference to the trace, and no-flux faces contribute nothing.
Without Dirichlet faces the operator has the constants as null space; the
source is then projected to mean zero and the potential is pinned so that
the first cell carries ``phi = 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import field as fld
from .sparse import CsrMatrix, SolveResult, SolverConfig, solve, stencil_pattern

logger = logging.getLogger(__name__)

DIRICHLET_PRESENT = "dirichlet_present"
PURE_NEUMANN = "pure_neumann"
_COMPATIBILITY_RTOL = 1e-8


class CompatibilityError(ValueError):
    """Pure-Neumann source with non-zero total charge."""


@dataclass
class PoissonSystem:
    matrix: CsrMatrix
    rhs: np.ndarray
    gauge: str
    background: float = 0.0


def net_charge(grid, charge) -> float:
    return float(grid.cell_volume * np.sum(charge))


def check_compatibility(grid, charge) -> float:
    """Return the total charge, raising if it violates the pure-Neumann condition."""
    total = net_charge(grid, charge)
    scale = grid.cell_volume * grid.size * float(np.max(np.abs(charge), initial=0.0))
    if abs(total) > _COMPATIBILITY_RTOL * scale:
        raise CompatibilityError(
            f"no-flux Poisson problem needs zero net charge (compatibility condition "
            f"for the source), got integral {total:.6e}"
        )
    return total


class PoissonOperator:
    """Time-independent part of the Poisson system on a fixed grid.

    The matrix depends only on ``epsilon`` and the boundary partition, so
    it is assembled once; ``system`` then only builds right-hand sides.
    """

    def __init__(self, grid, epsilon, boundaries):
        self.grid = grid
        self.boundaries = boundaries
        weights = []
        for axis in range(grid.dim):
            eps = fld.sample_interior_faces(grid, epsilon, axis)
            _check_positive(eps, "permittivity")
            weights.append(eps / grid.spacings[axis] ** 2)
        diag = np.zeros(grid.size)
        self._lift = []
        for axis, side, bc in boundaries.dirichlet_planes():
            cells = grid.boundary_cells(axis, side)
            eps_b = fld.sample_boundary(grid, epsilon, axis, side)
            _check_positive(eps_b, "permittivity")
            coef = 2.0 * eps_b / grid.spacings[axis] ** 2
            diag[cells] += coef
            self._lift.append((cells, coef, axis, side, bc.phi))
        self.matrix = stencil_pattern(grid).build(diag, weights)
        self.gauge = PURE_NEUMANN if boundaries.all_no_flux else DIRICHLET_PRESENT

    def system(self, fixed_charge, densities, charges, t=0.0, neutralize=False) -> PoissonSystem:
        grid = self.grid
        if not isinstance(fixed_charge, np.ndarray):
            fixed_charge = fld.sample_cells(grid, fixed_charge, t)
        charge = np.array(fixed_charge, dtype=float, copy=True)
        for rho, q in zip(densities, charges):
            charge += q * np.asarray(rho)
        if not np.all(np.isfinite(charge)):
            raise ValueError("non-finite charge density")

        background = 0.0
        if self.gauge == PURE_NEUMANN:
            try:
                check_compatibility(grid, charge)
            except CompatibilityError:
                if not neutralize:
                    raise
            background = float(np.mean(charge))
            charge = charge - background
        rhs = 4.0 * np.pi * charge
        for cells, coef, axis, side, phi_b in self._lift:
            rhs[cells] += coef * fld.sample_boundary(grid, phi_b, axis, side, t)
        return PoissonSystem(self.matrix, rhs, self.gauge, background)


def assemble_poisson(grid, epsilon, fixed_charge, densities, charges, boundaries, t=0.0,
                     neutralize=False) -> PoissonSystem:
    """Assemble the cell equations of the Poisson problem at time ``t``.

    Parameters
    ----------
    epsilon : analytic field
        Permittivity, sampled at face centers.
    fixed_charge : array or analytic field
        Fixed charge ``f`` at cells.
    densities, charges : sequences
        Species densities (cell arrays) and their valences.
    boundaries : BoundarySpec
        Dirichlet planes contribute ``phi^b(t)``.
    neutralize : bool
        In the pure-Neumann case subtract the mean charge instead of raising
        when the compatibility condition fails.
    """
    op = PoissonOperator(grid, epsilon, boundaries)
    return op.system(fixed_charge, densities, charges, t, neutralize)


def solve_poisson(system: PoissonSystem, config: SolverConfig = None, initial_guess=None) -> SolveResult:
    """Solve an assembled system; pure-Neumann solutions satisfy ``phi[0] == 0``."""
    neumann = system.gauge == PURE_NEUMANN
    result = solve(system.matrix, system.rhs, config, initial_guess, constant_nullspace=neumann)
    if neumann:
        phi = result.x - result.x[0]
        return SolveResult(phi, result.iterations, result.residual)
    return result


def _check_positive(values, what):
    if np.any(values <= 0):
        raise ValueError(f"{what} must be strictly positive, min {values.min():.3e}")
