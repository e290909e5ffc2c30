"""Discrete invariants: mass, free energy, dissipation, step-size estimate,
steady-state residual and l1 errors.

All functions work on flat cell arrays of a :class:`~pnpfv.grid.Grid`.
``0 log 0`` is taken as 0 throughout.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import field as fld
from .transport import HARMONIC, slotboom_weight

logger = logging.getLogger(__name__)


def total_mass(grid, rho) -> float:
    """``sum |K| rho``."""
    return float(grid.cell_volume * np.sum(rho))


def entropy_density(rho) -> np.ndarray:
    """``rho (log rho - 1)`` with the value 0 at ``rho = 0``."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    pos = rho > 0
    out[pos] = rho[pos] * (np.log(rho[pos]) - 1.0)
    return out


def discrete_energy(grid, densities, phi, charges, kT, fixed_charge, mus=None) -> float:
    """Free energy ``sum |K| [sum rho(log rho - 1) + (f + sum q rho) phi / 2kT + sum rho mu / kT]``.

    Parameters
    ----------
    densities : sequence of arrays
    phi : array
    charges : sequence of float
    fixed_charge : array
        Cell values of ``f`` (including any neutralizing background).
    mus : sequence of arrays, optional
        Chemical potentials per species; omitted means zero.
    """
    total = np.zeros(grid.size)
    charge = np.array(fixed_charge, dtype=float, copy=True) * np.ones(grid.size)
    for i, (rho, q) in enumerate(zip(densities, charges)):
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0):
            bad = grid.multi_index(int(np.argmin(rho)))
            raise ValueError(f"energy needs non-negative densities; species {i} negative at cell {bad}")
        total += entropy_density(rho)
        charge += q * rho
        if mus is not None:
            total += rho * np.asarray(mus[i]) / kT
    total += 0.5 * charge * np.asarray(phi) / kT
    return float(grid.cell_volume * np.sum(total))


def entropy_dissipation(grid, densities_next, psis, diffusion_faces, mean=HARMONIC) -> tuple:
    """Dissipation ``I`` of one step and the number of skipped face pairs.

    ``I = sum_i sum_j sum_faces |K| (C / h_j) (log G_hi - log G_lo)`` with
    ``G = rho^{n+1} e^{psi^n}`` and the face flux ``C`` of the scheme.  A
    face with exactly one zero density has an undefined logarithm; it is
    skipped and counted.
    """
    total = 0.0
    skipped = 0
    for rho, psi, dfaces in zip(densities_next, psis, diffusion_faces):
        rho = np.asarray(rho, dtype=float)
        p = np.asarray(psi, dtype=float) - float(np.max(psi))
        g = rho * np.exp(p)
        for axis in range(grid.dim):
            lo, hi = grid.interior_faces(axis)
            h = grid.spacings[axis]
            g_lo, g_hi = g[lo], g[hi]
            both = (g_lo > 0) & (g_hi > 0)
            one = (g_lo > 0) ^ (g_hi > 0)
            skipped += int(np.count_nonzero(one))
            w = np.asarray(dfaces[axis])[both] * slotboom_weight(p[lo][both], p[hi][both], mean)
            flux = w * (g_hi[both] - g_lo[both]) / h
            total += float(np.sum(flux / h * (np.log(g_hi[both]) - np.log(g_lo[both]))))
    if skipped:
        logger.debug("dissipation: skipped %d faces with one zero density", skipped)
    return grid.cell_volume * total, skipped


def max_psi_jump(grid, psis) -> float:
    jump = 0.0
    for psi in psis:
        for axis in range(grid.dim):
            lo, hi = grid.interior_faces(axis)
            if lo.size:
                jump = max(jump, float(np.max(np.abs(psi[hi] - psi[lo]))))
    return jump


def tau_star(kT, eps_min, eps_max, d_max, rho_max, charges, psi_jump) -> float:
    """Step-size bound under which the energy estimate is guaranteed.

    ``kT eps_min^2 / (4 pi eps_max D_max max rho sum q^2) * exp(-max |jump psi|)``;
    ``inf`` when no species is charged or all densities vanish.
    """
    q2 = float(np.sum(np.square(charges)))
    denom = 4.0 * np.pi * eps_max * d_max * rho_max * q2
    if denom == 0.0:
        return float("inf")
    return kT * eps_min ** 2 / denom * float(np.exp(-psi_jump))


@dataclass
class TauStarTracker:
    """Running estimate of the step-size bound over a trajectory.

    Both the maximal density and the maximal potential jump are taken over
    all states seen so far, so the estimate never increases.
    """

    kT: float
    eps_min: float
    eps_max: float
    d_max: float
    charges: tuple
    rho_max: float = 0.0
    psi_jump: float = 0.0

    def update(self, grid, densities, psis) -> float:
        self.rho_max = max(self.rho_max, max(float(np.max(r)) for r in densities))
        self.psi_jump = max(self.psi_jump, max_psi_jump(grid, psis))
        return self.value

    @property
    def value(self) -> float:
        return tau_star(self.kT, self.eps_min, self.eps_max, self.d_max, self.rho_max,
                        self.charges, self.psi_jump)


def boltzmann_constants(grid, masses, psis) -> np.ndarray:
    """``c_i = mass_i / sum |K| e^{-psi_i}`` (computed with shifted exponentials).

    The returned constants pair with ``e^{-psi}`` of the unshifted potential.
    """
    out = []
    for mass, psi in zip(masses, psis):
        s = float(np.min(psi))
        z = grid.cell_volume * float(np.sum(np.exp(-(psi - s))))
        out.append(mass / z * np.exp(s))
    return np.array(out)


def steady_state_residual(grid, densities, psis) -> float:
    """``max_i max_cell |rho e^psi - c_i| / c_i`` with the mass-matched constant ``c_i``.

    Zero-mass species contribute 0.
    """
    worst = 0.0
    for rho, psi in zip(densities, psis):
        rho = np.asarray(rho, dtype=float)
        mass = total_mass(grid, rho)
        if mass == 0.0:
            continue
        p = np.asarray(psi) - float(np.max(psi))
        c = mass / (grid.cell_volume * float(np.sum(np.exp(-p))))
        worst = max(worst, float(np.max(np.abs(rho * np.exp(p) - c))) / c)
    return worst


def l1_error(grid, values, exact, t: float = 0.0, reference: str = "midpoint") -> float:
    """``sum |K| |g~ - values|`` for the exact solution's cell values ``g~``.

    ``reference='midpoint'`` samples the exact solution at cell midpoints,
    ``'average'`` uses its cell averages (Gauss quadrature).
    """
    if reference == "midpoint":
        ref = fld.sample_cells(grid, exact, t)
    elif reference == "average":
        ref = fld.cell_average(grid, exact, t)
    else:
        raise ValueError(f"reference must be 'midpoint' or 'average', got {reference!r}")
    return float(grid.cell_volume * np.sum(np.abs(ref - np.asarray(values))))


# -- per-step records ------------------------------------------------------

@dataclass
class DiagnosticsRow:
    """Quantities recorded after one time step."""

    step: int
    time: float
    tau: float
    masses: tuple
    energy: float
    dissipation: float
    energy_margin: float
    min_density: float
    tau_star: float
    limiter_patches: int = 0
    limiter_max_patch: int = 0
    limiter_min_theta: float = 1.0
    solver_iterations: int = 0
    skipped_faces: int = 0
    clamped_cells: int = 0
    extra: dict = field(default_factory=dict)


def csv_header(n_species: int) -> list:
    cols = ["step", "time", "tau"]
    cols += [f"mass_{i}" for i in range(n_species)]
    cols += ["energy", "dissipation", "energy_margin", "min_density", "tau_star",
             "limiter_patches", "limiter_max_patch", "limiter_min_theta",
             "solver_iterations", "skipped_faces", "clamped_cells"]
    return cols


def csv_values(row: DiagnosticsRow) -> list:
    def num(v):
        return repr(float(v))
    vals = [row.step, num(row.time), num(row.tau)]
    vals += [num(m) for m in row.masses]
    vals += [num(row.energy), num(row.dissipation), num(row.energy_margin),
             num(row.min_density), num(row.tau_star), row.limiter_patches,
             row.limiter_max_patch, num(row.limiter_min_theta), row.solver_iterations,
             row.skipped_faces, row.clamped_cells]
    return vals


class DiagnosticsWriter:
    """Append :class:`DiagnosticsRow` records to a CSV file with a fixed column order."""

    def __init__(self, path, n_species: int):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(csv_header(n_species))

    def __call__(self, row: DiagnosticsRow):
        self._writer.writerow(csv_values(row))

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
