"""Manufactured-solution convergence tests on the unit cube.

The exact triple is

    rho1 = 4 (A + B) e^{-t},  rho2 = (B + C) e^{-t},  phi = (A + B + C) e^{-t},

with ``A = x^2 (1-x)^2``, ``B = y (1-y)``, ``C = z^2 (1-z)^2``, for two
species of charge +1 and -1, ``D = 1``, ``kT = 1`` and ``eps = 4 pi`` so
that the potential solves ``-lap(phi) = rho1 - rho2 + f3``.  The planes
``y = 0, 1`` carry the exact traces; on the other planes both species
fluxes and the normal field vanish identically, so plain no-flux
conditions are exact there.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time as _time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diagnostics as diag
from . import field as fld
from .grid import MINUS, PLUS, build_grid
from .marching import run
from .scenario import Scenario, SpeciesSpec

logger = logging.getLogger(__name__)


# -- the exact triple and its derivatives -------------------------------------

def _a(s):
    return s * s * (1 - s) ** 2


def _da(s):
    return 2 * s - 6 * s * s + 4 * s ** 3


def _dda(s):
    return 2 - 12 * s + 12 * s * s


def _b(s):
    return s * (1 - s)


def _db(s):
    return 1 - 2 * s


def rho1_exact(x, y, z, t):
    return 4.0 * (_a(x) + _b(y)) * np.exp(-t)


def rho2_exact(x, y, z, t):
    return (_b(y) + _a(z)) * np.exp(-t)


def phi_exact(x, y, z, t):
    return (_a(x) + _b(y) + _a(z)) * np.exp(-t)


def f1(x, y, z, t):
    """``d_t rho1 - div(grad rho1 + rho1 grad phi)``."""
    e = np.exp(-t)
    lap_phi = (_dda(x) - 2.0 + _dda(z)) * e
    lap_rho = 4.0 * (_dda(x) - 2.0) * e
    grad_dot = 4.0 * (_da(x) ** 2 + _db(y) ** 2) * e * e
    rho = rho1_exact(x, y, z, t)
    return -rho - (lap_rho + grad_dot + rho * lap_phi)


def f2(x, y, z, t):
    """``d_t rho2 - div(grad rho2 - rho2 grad phi)``."""
    e = np.exp(-t)
    lap_phi = (_dda(x) - 2.0 + _dda(z)) * e
    lap_rho = (-2.0 + _dda(z)) * e
    grad_dot = (_db(y) ** 2 + _da(z) ** 2) * e * e
    rho = rho2_exact(x, y, z, t)
    return -rho - (lap_rho - grad_dot - rho * lap_phi)


def f3(x, y, z, t):
    """``-lap(phi) - rho1 + rho2``."""
    lap_phi = (_dda(x) - 2.0 + _dda(z)) * np.exp(-t)
    return -lap_phi - rho1_exact(x, y, z, t) + rho2_exact(x, y, z, t)


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution, sources and boundary partition of the convergence test."""

    rho1: object = rho1_exact
    rho2: object = rho2_exact
    phi: object = phi_exact
    sources: tuple = (f1, f2, f3)
    dirichlet_axis: int = 1


def derive_sources(case: ManufacturedCase = ManufacturedCase()) -> tuple:
    """Closed-form sources ``(f1, f2, f3)``, checked against finite differences."""
    validate_sources(case)
    return case.sources


def _central(fn, point, axis, h):
    """Fourth-order central difference of ``fn`` along ``axis`` (3 = time)."""
    def at(k):
        p = list(point)
        p[axis] = p[axis] + k * h
        return fn(*p)
    return (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * h)


def _fd_sources(case, x, y, z, t, h=1e-3):
    """Sources from nested finite differences of the exact triple."""
    point = (x, y, z, t)

    def div_flux(rho, sign):
        total = 0.0
        for axis in range(3):
            def flux(*p, axis=axis):
                return _central(rho, p, axis, h) + sign * rho(*p) * _central(case.phi, p, axis, h)
            total = total + _central(flux, point, axis, h)
        return total

    g1 = _central(case.rho1, point, 3, h) - div_flux(case.rho1, 1.0)
    g2 = _central(case.rho2, point, 3, h) - div_flux(case.rho2, -1.0)
    g3 = -div_flux(case.phi, 0.0) - case.rho1(*point) + case.rho2(*point)
    return g1, g2, g3


class SourceValidationError(RuntimeError):
    pass


def validate_sources(case: ManufacturedCase = ManufacturedCase(), points: int = 100, seed: int = 0,
                     rtol: float = 1e-6) -> float:
    """Compare closed-form sources with finite differences at random points.

    Returns the worst relative error; raises if it exceeds ``rtol``.
    """
    rng = np.random.default_rng(seed)
    x, y, z = rng.uniform(0.05, 0.95, size=(3, points))
    t = rng.uniform(0.0, 1.0, size=points)
    worst = 0.0
    for exact, approx in zip((fn(x, y, z, t) for fn in case.sources), _fd_sources(case, x, y, z, t)):
        scale = max(1.0, float(np.max(np.abs(approx))))
        worst = max(worst, float(np.max(np.abs(exact - approx))) / scale)
    if worst > rtol:
        raise SourceValidationError(f"manufactured sources disagree with finite differences: {worst:.3e}")
    return worst


def neumann_flux_residual(case: ManufacturedCase = ManufacturedCase(), n: int = 16,
                          times: Sequence[float] = (0.0, 0.5, 1.0)) -> float:
    """Largest exact normal flux on the no-flux planes (should vanish)."""
    grid = build_grid(3, [1, 1, 1], [n, n, n])
    worst = 0.0
    for axis in (0, 2):
        for side in (MINUS, PLUS):
            cells = grid.boundary_cells(axis, side)
            x, y, z = grid.face_centers(cells, axis, side)
            for t in times:
                e = np.exp(-t)
                s = x if axis == 0 else z
                dphi = _da(s) * e
                drho1 = 4.0 * _da(s) * e if axis == 0 else 0.0 * s
                drho2 = _da(s) * e if axis == 2 else 0.0 * s
                fluxes = (drho1 + case.rho1(x, y, z, t) * dphi,
                          drho2 - case.rho2(x, y, z, t) * dphi, dphi)
                worst = max(worst, max(float(np.max(np.abs(f))) for f in fluxes))
    return worst


def example1(n: int, order: int = 1, tau: Optional[float] = None, end_time: float = 1.0,
             limiter: bool = True, mean: str = "harmonic", solver=None) -> Scenario:
    """Scenario of the convergence test on an ``n^3`` grid."""
    case = ManufacturedCase()
    grid = build_grid(3, [1.0, 1.0, 1.0], [n, n, n])
    species = [
        SpeciesSpec(1.0, 1.0, 0.0, fld.FunctionField(case.rho1), fld.FunctionField(f1), "rho1"),
        SpeciesSpec(-1.0, 1.0, 0.0, fld.FunctionField(case.rho2), fld.FunctionField(f2), "rho2"),
    ]
    trace = fld.Dirichlet((fld.FunctionField(case.rho1), fld.FunctionField(case.rho2)),
                          fld.FunctionField(case.phi))
    bcs = fld.BoundarySpec(3, {(1, MINUS): trace, (1, PLUS): trace})
    extra = {} if solver is None else {"solver": solver}
    return Scenario(grid, species, epsilon=4.0 * math.pi, fixed_charge=fld.FunctionField(f3), kT=1.0,
                    boundaries=bcs, order=order, mean=mean, limiter=limiter,
                    tau=(1.0 / n if tau is None else tau), end_time=end_time, name=f"example1-{n}",
                    **extra)


# -- sweeps --------------------------------------------------------------------

PRESETS = {
    "table1": {"order": 1, "tau_rule": "h"},
    "table2": {"order": 1, "tau_rule": "h2"},
    "table3": {"order": 2, "tau_rule": "h"},
}
DEFAULT_GRIDS = (8, 16, 32, 64)
UNKNOWNS = ("rho1", "rho2", "phi")


def tau_for(n: int, rule: str) -> float:
    h = 1.0 / n
    if rule == "h":
        return h
    if rule == "h2":
        return h * h
    raise ValueError(f"tau rule must be 'h' or 'h2', got {rule!r}")


@dataclass
class SweepRow:
    n: int
    errors: dict
    orders: dict
    steps: int = 0
    seconds: float = 0.0
    limiter_patches: int = 0
    error: str = ""


@dataclass
class ErrorTable:
    order: int
    tau_rule: str
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["grid"]
        for u in UNKNOWNS:
            header += [f"{u}_error", f"{u}_order"]
        writer.writerow(header + ["steps", "limiter_patches", "seconds", "failure"])
        for row in self.rows:
            line = [f"{row.n}x{row.n}x{row.n}"]
            for u in UNKNOWNS:
                err, order = row.errors.get(u, math.nan), row.orders.get(u, math.nan)
                line += [f"{err:.4e}", "-" if math.isnan(order) else f"{order:.4f}"]
            writer.writerow(line + [row.steps, row.limiter_patches, f"{row.seconds:.1f}", row.error])
        return buf.getvalue()


def errors_at(scenario, state, reference: str = "average") -> dict:
    """l1 errors of both densities and the potential against the exact solution."""
    case = ManufacturedCase()
    t = state.time
    g = scenario.grid
    return {
        "rho1": diag.l1_error(g, state.densities[0], case.rho1, t, reference),
        "rho2": diag.l1_error(g, state.densities[1], case.rho2, t, reference),
        "phi": diag.l1_error(g, state.phi, case.phi, t, reference),
    }


def convergence_sweep(order: int = 1, tau_rule: str = "h", grids: Sequence[int] = DEFAULT_GRIDS,
                      end_time: float = 1.0, limiter: bool = True, mean: str = "harmonic",
                      solver=None, reference: str = "average") -> ErrorTable:
    """Run the convergence test on each grid and tabulate errors and observed orders.

    Errors compare with exact cell averages by default
    (``reference='midpoint'`` uses midpoint samples).  Failures are recorded
    in the row and the sweep moves on.
    """
    if any(b <= a for a, b in zip(grids, grids[1:])):
        raise ValueError(f"grids must be strictly refining, got {list(grids)}")
    if neumann_flux_residual() > 1e-12:
        raise SourceValidationError("exact solution has non-zero flux on the no-flux planes")
    validate_sources()
    table = ErrorTable(order, tau_rule)
    prev = None
    for n in grids:
        sc = example1(n, order, tau_for(n, tau_rule), end_time, limiter, mean, solver)
        start = _time.perf_counter()
        try:
            result = run(sc)
        except Exception as exc:  # recorded per row, the sweep continues
            logger.error("grid %d failed: %s", n, exc)
            table.rows.append(SweepRow(n, {}, {}, error=str(exc)))
            prev = None
            continue
        errs = errors_at(sc, result.state, reference)
        orders = {u: math.nan for u in UNKNOWNS}
        if prev is not None:
            for u in UNKNOWNS:
                orders[u] = math.log(prev.errors[u] / errs[u]) / math.log(n / prev.n)
        row = SweepRow(n, errs, orders, len(result.rows), _time.perf_counter() - start,
                       sum(r.limiter_count for r in result.reports))
        logger.info("grid %d: %s", n, errs)
        table.rows.append(row)
        prev = row
    return table


def preset_sweep(name: str, grids: Sequence[int] = DEFAULT_GRIDS, **kwargs) -> ErrorTable:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return convergence_sweep(grids=grids, **PRESETS[name], **kwargs)
