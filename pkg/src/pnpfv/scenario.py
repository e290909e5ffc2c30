"""Problem descriptions: species, coefficients, boundary data and scheme settings."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import field as fld
from .grid import Grid
from .sparse import SolverConfig
from .transport import MEANS

SOURCE_TIMES = ("old", "new")
# Mass conservation and the positivity checks are resolved at the level of
# the linear-solver residual, so scenarios solve tighter than the library default.
DEFAULT_SOLVER = SolverConfig(method="cg", preconditioner="ilu0", rtol=1e-13)


@dataclass
class SpeciesSpec:
    """One mobile species.

    ``diffusion``, ``mu``, ``initial`` and ``source`` accept anything
    :func:`pnpfv.field.as_field` understands (numbers, expression strings,
    callables ``f(x, y, z, t)``).  ``source`` is an optional volumetric
    production term added to the right-hand side of the density equation.
    """

    charge: float
    diffusion: object = 1.0
    mu: object = 0.0
    initial: object = 0.0
    source: Optional[object] = None
    name: str = ""

    def __post_init__(self):
        self.charge = float(self.charge)
        if not np.isfinite(self.charge):
            raise ValueError("species charge must be finite")
        self.diffusion = fld.as_field(self.diffusion)
        self.mu = fld.as_field(self.mu)
        self.initial = fld.as_field(self.initial)
        if self.source is not None:
            self.source = fld.as_field(self.source)


@dataclass
class Scenario:
    """Everything needed to march a PNP system.

    Parameters
    ----------
    grid : Grid
    species : list of SpeciesSpec
    epsilon : field
        Permittivity in ``-div(eps grad phi) = 4 pi (f + sum q rho)``.
    fixed_charge : field
        ``f(x, t)``.
    kT : float
        Thermal scale ``k_B T``.
    boundaries : BoundarySpec, optional
        Defaults to no-flux on every plane.
    order : {1, 2}
    mean : {'harmonic', 'geometric', 'algebraic'}
    limiter : bool
        Second order only: restore positivity after the corrector.
    tau, end_time : float
    neutralize : bool
        Pure-Neumann problems only: subtract a uniform background charge
        when the net charge is not zero.
    source_time : {'old', 'new'}
        Time level of species sources in first-order steps: ``t_n``
        (explicit, the default) or ``t_{n+1}``.  Second-order steps always
        use the half step.
    """

    grid: Grid
    species: list
    epsilon: object = 1.0
    fixed_charge: object = 0.0
    kT: float = 1.0
    boundaries: Optional[fld.BoundarySpec] = None
    order: int = 1
    mean: str = "harmonic"
    limiter: bool = True
    tau: float = 0.01
    end_time: float = 0.0
    solver: SolverConfig = field(default_factory=lambda: DEFAULT_SOLVER)
    neutralize: bool = False
    source_time: str = "old"
    name: str = ""

    def __post_init__(self):
        if not self.species:
            raise ValueError("a scenario needs at least one species")
        self.species = list(self.species)
        if not all(isinstance(s, SpeciesSpec) for s in self.species):
            raise TypeError("species must be SpeciesSpec instances")
        self.epsilon = fld.as_field(self.epsilon)
        self.fixed_charge = fld.as_field(self.fixed_charge)
        self.kT = float(self.kT)
        if not self.kT > 0:
            raise ValueError(f"kT must be positive, got {self.kT}")
        if self.boundaries is None:
            self.boundaries = fld.BoundarySpec(self.grid.dim)
        if self.boundaries.dim != self.grid.dim:
            raise ValueError("boundary spec dimension does not match the grid")
        for axis, side, bc in self.boundaries.dirichlet_planes():
            if len(bc.rho) != len(self.species):
                raise ValueError(
                    f"Dirichlet plane ({axis}, {side}) has {len(bc.rho)} density traces "
                    f"for {len(self.species)} species"
                )
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        if self.mean not in MEANS:
            raise ValueError(f"mean must be one of {MEANS}, got {self.mean!r}")
        if self.source_time not in SOURCE_TIMES:
            raise ValueError(f"source_time must be one of {SOURCE_TIMES}, got {self.source_time!r}")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not (self.end_time >= 0 and np.isfinite(self.end_time)):
            raise ValueError(f"end_time must be non-negative, got {self.end_time}")
        for i, sp in enumerate(self.species):
            rho0 = fld.sample_cells(self.grid, sp.initial, 0.0)
            if np.any(rho0 < 0):
                bad = self.grid.multi_index(int(np.argmin(rho0)))
                raise ValueError(f"species {i}: negative initial density at cell {bad}")

    @property
    def charges(self) -> np.ndarray:
        return np.array([s.charge for s in self.species])

    @property
    def no_flux(self) -> bool:
        return self.boundaries.all_no_flux
