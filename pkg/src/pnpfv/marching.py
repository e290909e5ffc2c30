"""Time marching: first-order steps, second-order prediction-correction
steps with a first-order startup, and a driver to steady state.

One step updates every species density with the potential of the previous
level and then re-solves the Poisson problem with the new densities.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import diagnostics as diag
from . import field as fld
from .limiter import apply_limiter
from .poisson import PoissonOperator, solve_poisson
from .sparse import solve
from .transport import DirichletFace, assemble_density_step, slotboom_weight

logger = logging.getLogger(__name__)

# Negative values this small relative to the largest density are linear
# solver round-off and are set to zero.
ROUNDOFF = 1e-12


@dataclass
class State:
    """Solution at one time level.

    ``psis`` are the scaled potentials ``(q phi + mu) / kT`` of ``phi``;
    ``psis_prev`` and ``tau_prev`` belong to the previous level and feed
    the second-order extrapolation.
    """

    time: float
    step: int
    densities: list
    phi: np.ndarray
    psis: list
    psis_prev: Optional[list] = None
    tau_prev: Optional[float] = None
    background: float = 0.0


@dataclass
class StepReport:
    """What happened during one step."""

    step: int
    time: float
    tau: float
    order: int
    iterations: int = 0
    raw_min_density: float = 0.0
    min_density: float = 0.0
    clamped_cells: int = 0
    patches: list = field(default_factory=list)
    positivity_bound: float = math.inf

    @property
    def limiter_count(self) -> int:
        return len(self.patches)


class Discretization:
    """Grid samples of all static scenario data plus the Poisson operator."""

    def __init__(self, scenario):
        self.scenario = sc = scenario
        self.grid = g = scenario.grid
        self.charges = sc.charges
        self.kT = sc.kT
        self.mean = sc.mean
        self.mus = [fld.sample_cells(g, sp.mu) for sp in sc.species]
        self.d_faces = []
        for i, sp in enumerate(sc.species):
            faces = [fld.sample_interior_faces(g, sp.diffusion, axis) for axis in range(g.dim)]
            _require_positive([d for d in faces if d.size], f"species {i} diffusion")
            self.d_faces.append(faces)
        self.planes = []
        for axis, side, bc in sc.boundaries.dirichlet_planes():
            d_b = [fld.sample_boundary(g, sp.diffusion, axis, side) for sp in sc.species]
            _require_positive(d_b, "boundary diffusion")
            mu_b = [fld.sample_boundary(g, sp.mu, axis, side) for sp in sc.species]
            self.planes.append((axis, side, bc, d_b, mu_b))
        self.poisson = PoissonOperator(g, sc.epsilon, sc.boundaries)
        self._static_f = None
        if not sc.fixed_charge.depends_on_time:
            self._static_f = fld.sample_cells(g, sc.fixed_charge)

        eps = [fld.sample_cells(g, sc.epsilon)]
        eps += [fld.sample_interior_faces(g, sc.epsilon, a) for a in range(g.dim)]
        d_all = [fld.sample_cells(g, sp.diffusion) for sp in sc.species]
        d_all += [d for faces in self.d_faces for d in faces if d.size]
        self.tau_star = diag.TauStarTracker(
            sc.kT,
            min(float(e.min()) for e in eps if e.size),
            max(float(e.max()) for e in eps if e.size),
            max(float(d.max()) for d in d_all),
            tuple(self.charges),
        )

    # -- data at a time level --------------------------------------------

    def psi(self, i: int, phi) -> np.ndarray:
        return (self.charges[i] * phi + self.mus[i]) / self.kT

    def psis(self, phi) -> list:
        return [self.psi(i, phi) for i in range(len(self.charges))]

    def fixed_charge(self, t: float) -> np.ndarray:
        if self._static_f is not None:
            return self._static_f
        return fld.sample_cells(self.grid, self.scenario.fixed_charge, t)

    def source(self, i: int, t: float):
        src = self.scenario.species[i].source
        return None if src is None else fld.sample_cells(self.grid, src, t)

    def dirichlet_faces(self, i: int, psi_time: float, rho_time: float) -> list:
        """Boundary data of species ``i``: potential at ``psi_time``, trace at ``rho_time``."""
        faces = []
        for axis, side, bc, d_b, mu_b in self.planes:
            phi_b = fld.sample_boundary(self.grid, bc.phi, axis, side, psi_time)
            psi_b = (self.charges[i] * phi_b + mu_b[i]) / self.kT
            rho_b = fld.sample_boundary(self.grid, bc.rho[i], axis, side, rho_time)
            faces.append(DirichletFace(axis, side, psi_b, rho_b, d_b[i]))
        return faces

    def solve_poisson(self, densities, t: float, guess=None):
        system = self.poisson.system(self.fixed_charge(t), densities, self.charges, t,
                                     self.scenario.neutralize)
        result = solve_poisson(system, self.scenario.solver, guess)
        return result.x, system.background, result.iterations

    # -- diagnostics -------------------------------------------------------

    def energy(self, state: State) -> float:
        return diag.discrete_energy(self.grid, state.densities, state.phi, self.charges, self.kT,
                                    self.fixed_charge(state.time) - state.background, self.mus)

    def masses(self, state: State) -> tuple:
        return tuple(diag.total_mass(self.grid, r) for r in state.densities)


def _require_positive(arrays, what):
    for a in arrays:
        if np.any(np.asarray(a) <= 0):
            raise ValueError(f"{what} must be strictly positive, min {np.min(a):.3e}")


def _clamp_roundoff(rho) -> tuple:
    """Zero out round-off negatives; larger negatives are kept."""
    top = float(np.max(np.abs(rho), initial=0.0))
    tiny = (rho < 0) & (rho >= -ROUNDOFF * top)
    count = int(np.count_nonzero(tiny))
    if count:
        rho = np.where(tiny, 0.0, rho)
    return rho, count


def _as_discretization(obj) -> Discretization:
    return obj if isinstance(obj, Discretization) else Discretization(obj)


def init_state(scenario_or_disc) -> State:
    """Midpoint samples of the initial densities and the matching potential."""
    disc = _as_discretization(scenario_or_disc)
    densities = [fld.sample_cells(disc.grid, sp.initial, 0.0) for sp in disc.scenario.species]
    return state_from_densities(disc, densities, 0.0)


def state_from_densities(disc: Discretization, densities, t: float = 0.0) -> State:
    """A consistent state: solve the Poisson problem for given densities at time ``t``."""
    densities = [np.array(r, dtype=float) for r in densities]
    phi, background, _ = disc.solve_poisson(densities, t)
    return State(t, 0, densities, phi, disc.psis(phi), background=background)


def _solve_species(disc, i, rho_n, psi, faces, tau, source, check_sign=True):
    system = assemble_density_step(disc.grid, rho_n, psi, disc.d_faces[i], faces, tau, disc.mean,
                                   source, check_sign)
    guess = system.slotboom(np.maximum(rho_n, 0.0))
    result = solve(system.matrix, system.rhs, disc.scenario.solver, guess)
    return system.density(result.x), result.iterations


def step_first_order(disc: Discretization, state: State, tau: float) -> tuple:
    """Advance one implicit step of size ``tau`` with the potential of ``state``.

    Dirichlet weights use the boundary potential at the old time and the
    density traces at the new time.  Species sources are taken at the time
    level selected by ``scenario.source_time``.
    """
    t_new = state.time + tau
    t_src = state.time if disc.scenario.source_time == "old" else t_new
    report = StepReport(state.step + 1, t_new, tau, 1)
    densities = []
    raw_min = math.inf
    for i, rho_n in enumerate(state.densities):
        faces = disc.dirichlet_faces(i, state.time, t_new)
        rho, its = _solve_species(disc, i, rho_n, state.psis[i], faces, tau, disc.source(i, t_src))
        report.iterations += its
        raw_min = min(raw_min, float(rho.min()))
        rho, clamped = _clamp_roundoff(rho)
        report.clamped_cells += clamped
        densities.append(rho)
    return _finish(disc, state, densities, tau, t_new, raw_min, report)


def _finish(disc, state, densities, tau, t_new, raw_min, report):
    phi, background, its = disc.solve_poisson(densities, t_new, state.phi)
    report.iterations += its
    report.raw_min_density = raw_min
    report.min_density = min(float(r.min()) for r in densities)
    new = State(t_new, state.step + 1, densities, phi, disc.psis(phi), state.psis, tau, background)
    return new, report


def _extrapolated_psis(state: State, tau: float) -> list:
    ratio = 0.5 * tau / state.tau_prev
    return [p + ratio * (p - q) for p, q in zip(state.psis, state.psis_prev)]


def step_second_order(disc: Discretization, state: State, tau: float, limiter: bool = True) -> tuple:
    """Prediction-correction step.

    The predictor is an implicit half step with the potential extrapolated
    to ``t + tau/2``; the corrector ``rho^{n+1} = 2 rho* - rho^n`` is second
    order but may go negative, in which case the limiter repairs it.
    Boundary data and sources are evaluated at the half step.
    """
    if state.psis_prev is None or state.tau_prev is None:
        raise ValueError("second-order step needs the previous potential; start with a first-order step")
    t_half = state.time + 0.5 * tau
    t_new = state.time + tau
    report = StepReport(state.step + 1, t_new, tau, 2)
    report.positivity_bound = positivity_bound(disc, state, tau)
    psi_star = _extrapolated_psis(state, tau)
    densities = []
    raw_min = math.inf
    for i, rho_n in enumerate(state.densities):
        faces = disc.dirichlet_faces(i, t_half, t_half)
        rho_half, its = _solve_species(disc, i, rho_n, psi_star[i], faces, 0.5 * tau,
                                       disc.source(i, t_half), check_sign=limiter)
        report.iterations += its
        if limiter:
            rho_half, clamped = _clamp_roundoff(rho_half)
            report.clamped_cells += clamped
        rho = 2.0 * rho_half - rho_n
        raw_min = min(raw_min, float(rho.min()))
        if limiter:
            rho, clamped = _clamp_roundoff(rho)
            report.clamped_cells += clamped
            if np.any(rho < 0):
                rho, patches = apply_limiter(disc.grid, rho)
                report.patches.extend(patches)
        densities.append(rho)
    return _finish(disc, state, densities, tau, t_new, raw_min, report)


def positivity_bound(disc: Discretization, state: State, tau: Optional[float] = None) -> float:
    """Step size below which the second-order corrector stays non-negative.

    ``min_cell g* / sum_faces (D e^{-psi*})_face / h^2`` with ``g* = e^{psi*}``
    and the extrapolated potential ``psi*``; Dirichlet faces enter with
    their factor 2.  ``tau`` only matters for non-uniform steps.
    """
    if state.psis_prev is None:
        return math.inf
    grid = disc.grid
    tau = state.tau_prev if tau is None else tau
    t_half = state.time + 0.5 * tau
    bound = math.inf
    for i, psi in enumerate(_extrapolated_psis(state, tau)):
        shift = float(psi.max())
        p = psi - shift
        total = np.zeros(grid.size)
        for axis in range(grid.dim):
            lo, hi = grid.interior_faces(axis)
            w = disc.d_faces[i][axis] * slotboom_weight(p[lo], p[hi], disc.mean) / grid.spacings[axis] ** 2
            total += np.bincount(lo, weights=w, minlength=grid.size)
            total += np.bincount(hi, weights=w, minlength=grid.size)
        for face in disc.dirichlet_faces(i, t_half, t_half):
            cells = grid.boundary_cells(face.axis, face.side)
            total[cells] += 2.0 * face.diffusion * np.exp(-(face.psi - shift)) / grid.spacings[face.axis] ** 2
        active = total > 0
        if np.any(active):
            bound = min(bound, float(np.min(np.exp(p[active]) / total[active])))
    return bound


# -- drivers -----------------------------------------------------------------

@dataclass
class RunResult:
    state: State
    rows: list
    reports: list


def _row(disc, old, new, report, energy_old, energy_new) -> diag.DiagnosticsRow:
    dissipation, skipped = diag.entropy_dissipation(disc.grid, new.densities, old.psis, disc.d_faces, disc.mean)
    tau_star = disc.tau_star.update(disc.grid, new.densities, new.psis)
    patches = report.patches
    return diag.DiagnosticsRow(
        step=new.step, time=new.time, tau=report.tau, masses=disc.masses(new),
        energy=energy_new, dissipation=dissipation,
        energy_margin=energy_new - energy_old + 0.5 * report.tau * dissipation,
        min_density=report.raw_min_density, tau_star=tau_star,
        limiter_patches=len(patches),
        limiter_max_patch=max((p.size for p in patches), default=0),
        limiter_min_theta=min((p.theta for p in patches), default=1.0),
        solver_iterations=report.iterations, skipped_faces=skipped,
        clamped_cells=report.clamped_cells,
    )


def _safe_energy(disc, state):
    try:
        return disc.energy(state)
    except ValueError:
        return math.nan


def run(scenario, callbacks: Sequence[Callable] = (), tau: Optional[float] = None,
        end_time: Optional[float] = None, state: Optional[State] = None,
        disc: Optional[Discretization] = None) -> RunResult:
    """March ``scenario`` to its end time.

    Steps have size ``tau`` except possibly a shorter last one.  Second-order
    runs take their first step with the first-order scheme.  Each callback is
    called as ``cb(state, row, report)`` after every step.
    """
    disc = disc or Discretization(scenario)
    tau = scenario.tau if tau is None else tau
    end = scenario.end_time if end_time is None else end_time
    state = init_state(disc) if state is None else state
    disc.tau_star.update(disc.grid, state.densities, state.psis)
    energy = _safe_energy(disc, state)
    rows, reports = [], []
    while end - state.time > 1e-12 * max(1.0, abs(end)):
        step = min(tau, end - state.time)
        if end - state.time - step < 1e-9 * tau:
            step = end - state.time
        if scenario.order == 2 and state.psis_prev is not None:
            new, report = step_second_order(disc, state, step, scenario.limiter)
        else:
            new, report = step_first_order(disc, state, step)
        energy_new = _safe_energy(disc, new)
        row = _row(disc, state, new, report, energy, energy_new)
        rows.append(row)
        reports.append(report)
        for cb in callbacks:
            cb(new, row, report)
        logger.info("step %d t=%.6g min=%.3e E=%.10g iters=%d", new.step, new.time,
                    report.raw_min_density, energy_new, report.iterations)
        state, energy = new, energy_new
    return RunResult(state, rows, reports)


class SteadyStateError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class SteadyResult:
    state: State
    constants: np.ndarray
    residual: float
    steps: int
    rows: list


def run_to_steady(scenario, residual_tol: float = 1e-8, max_steps: int = 10000,
                  tau: Optional[float] = None, callbacks: Sequence[Callable] = ()) -> SteadyResult:
    """First-order march until ``rho e^psi`` is constant per species.

    Returns the final state and the constants ``c_i`` with
    ``rho_i = c_i e^{-psi_i}``, fixed by the initial masses.
    """
    if not scenario.no_flux:
        raise ValueError("steady-state driver needs no-flux conditions on every boundary plane")
    disc = Discretization(scenario)
    tau = scenario.tau if tau is None else tau
    state = init_state(disc)
    masses0 = disc.masses(state)
    disc.tau_star.update(disc.grid, state.densities, state.psis)
    energy = _safe_energy(disc, state)
    rows = []
    residual = diag.steady_state_residual(disc.grid, state.densities, state.psis)
    while residual >= residual_tol:
        if state.step >= max_steps:
            raise SteadyStateError(
                f"steady state not reached in {max_steps} steps (residual {residual:.3e})", residual)
        new, report = step_first_order(disc, state, tau)
        energy_new = _safe_energy(disc, new)
        row = _row(disc, state, new, report, energy, energy_new)
        rows.append(row)
        for cb in callbacks:
            cb(new, row, report)
        state, energy = new, energy_new
        residual = diag.steady_state_residual(disc.grid, state.densities, state.psis)
        logger.info("steady step %d residual %.3e", state.step, residual)
    constants = diag.boltzmann_constants(disc.grid, masses0, state.psis)
    return SteadyResult(state, constants, residual, state.step, rows)
