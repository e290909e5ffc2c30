"""Finite-volume Poisson-Nernst-Planck solver with positivity-preserving,
energy-dissipating time marching on Cartesian grids."""
from ._backend import BACKEND
from .grid import Grid, build_grid
from .field import BoundarySpec, Dirichlet, NoFlux, as_field
from .scenario import Scenario, SpeciesSpec
from .marching import (Discretization, State, init_state, positivity_bound, run, run_to_steady,
                       step_first_order, step_second_order)
from .limiter import apply_limiter

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Grid", "build_grid", "BoundarySpec", "Dirichlet", "NoFlux", "as_field",
    "Scenario", "SpeciesSpec", "Discretization", "State", "init_state", "positivity_bound",
    "run", "run_to_steady", "step_first_order", "step_second_order", "apply_limiter",
]
