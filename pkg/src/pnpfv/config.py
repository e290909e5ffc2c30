"""TOML run configurations.

A configuration is one TOML document with the tables ``grid``,
``physics``, ``species`` (array of tables), ``boundaries``, ``time``,
``scheme``, ``solver``, ``output`` and ``steady``.  Unknown keys are
rejected and every validation error names the offending key path.
See the README for a complete example.
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on the interpreter
    import tomli as tomllib

from . import field as fld
from .grid import MINUS, PLUS, build_grid
from .poisson import CompatibilityError, check_compatibility
from .scenario import DEFAULT_SOLVER, Scenario, SpeciesSpec
from .sparse import SolverConfig

PLANES = {
    f"{name}_{side}": (axis, side)
    for axis, name in enumerate("xyz")
    for side in (MINUS, PLUS)
}

_SCHEMA = {
    "": {"name", "grid", "physics", "species", "boundaries", "time", "scheme", "solver", "output", "steady"},
    "grid": {"dim", "lengths", "counts"},
    "physics": {"kT", "epsilon", "fixed_charge", "neutralize"},
    "species": {"name", "charge", "diffusion", "mu", "initial", "source"},
    "boundaries": set(PLANES),
    "boundaries.plane": {"type", "phi", "rho"},
    "time": {"tau", "tau_over_h", "end", "source_time"},
    "scheme": {"order", "mean", "limiter"},
    "solver": {"method", "preconditioner", "rtol", "max_iter"},
    "output": {"dir", "snapshot_every", "diagnostics_csv", "vtk", "matrix_dump"},
    "steady": {"tol", "max_steps"},
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the key path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@dataclass
class RunConfig:
    """A validated scenario together with output and driver settings."""

    scenario: Scenario
    out_dir: Path
    snapshot_every: int = 0
    diagnostics_csv: bool = True
    vtk: bool = True
    matrix_dump: bool = False
    steady_tol: float = 1e-8
    steady_max_steps: int = 10000
    document: Optional[dict] = None


def _check_keys(table, schema_key, path):
    if not isinstance(table, dict):
        raise ConfigError(path, "expected a table")
    unknown = sorted(set(table) - _SCHEMA[schema_key])
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, f"unknown key (allowed: {', '.join(sorted(_SCHEMA[schema_key]))})")


def _get(table, key, path, kind, default=None, required=False):
    where = f"{path}.{key}" if path else key
    if key not in table:
        if required:
            raise ConfigError(where, "required key is missing")
        return default
    value = table[key]
    if kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(where, f"expected a finite number, got {value!r}")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, f"expected an integer, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected true or false, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(where, f"expected a string, got {value!r}")
        return value
    if kind == "field":
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(where, f"expected a number or an expression string, got {value!r}")
        try:
            return fld.as_field(value)
        except fld.ExpressionError as exc:
            raise ConfigError(where, str(exc)) from None
    raise AssertionError(kind)


def _sampled(grid, fn, path, positive=False):
    """Sample ``fn`` on cells and faces of ``grid``; optionally require positivity."""
    try:
        samples = [fld.sample_cells(grid, fn)]
        for axis in range(grid.dim):
            samples.append(fld.sample_interior_faces(grid, fn, axis))
            for side in (MINUS, PLUS):
                samples.append(fld.sample_boundary(grid, fn, axis, side))
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    lo = min(float(np.min(v)) for v in samples if v.size)
    if positive and not lo > 0:
        raise ConfigError(path, f"must be strictly positive, minimum sample {lo:.3e}")


def parse_config(document: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a configuration document and build the scenario."""
    doc = document
    _check_keys(doc, "", "")

    g = doc.get("grid")
    if g is None:
        raise ConfigError("grid", "required table is missing")
    _check_keys(g, "grid", "grid")
    dim = _get(g, "dim", "grid", "int", required=True)
    lengths = g.get("lengths", [1.0] * dim if isinstance(dim, int) else None)
    counts = g.get("counts")
    if counts is None:
        raise ConfigError("grid.counts", "required key is missing")
    try:
        grid = build_grid(dim, lengths, counts)
    except (TypeError, ValueError) as exc:
        raise ConfigError("grid", str(exc)) from None

    phys = doc.get("physics", {})
    _check_keys(phys, "physics", "physics")
    kT = _get(phys, "kT", "physics", "number", 1.0)
    if not kT > 0:
        raise ConfigError("physics.kT", f"must be positive, got {kT}")
    epsilon = _get(phys, "epsilon", "physics", "field", fld.Constant(1.0))
    _sampled(grid, epsilon, "physics.epsilon", positive=True)
    fixed = _get(phys, "fixed_charge", "physics", "field", fld.Constant(0.0))
    _sampled(grid, fixed, "physics.fixed_charge")
    neutralize = _get(phys, "neutralize", "physics", "bool", False)

    species_doc = doc.get("species")
    if not isinstance(species_doc, list) or not species_doc:
        raise ConfigError("species", "at least one [[species]] table is required")
    species = []
    for i, sp in enumerate(species_doc):
        path = f"species[{i}]"
        _check_keys(sp, "species", path)
        charge = _get(sp, "charge", path, "number", required=True)
        diffusion = _get(sp, "diffusion", path, "field", fld.Constant(1.0))
        _sampled(grid, diffusion, f"{path}.diffusion", positive=True)
        mu = _get(sp, "mu", path, "field", fld.Constant(0.0))
        _sampled(grid, mu, f"{path}.mu")
        initial = _get(sp, "initial", path, "field", fld.Constant(0.0))
        try:
            rho0 = fld.sample_cells(grid, initial)
        except ValueError as exc:
            raise ConfigError(f"{path}.initial", str(exc)) from None
        if np.any(rho0 < 0):
            raise ConfigError(f"{path}.initial", "initial density must be non-negative at every cell midpoint")
        source = _get(sp, "source", path, "field", None)
        name = _get(sp, "name", path, "str", f"rho{i}")
        species.append(SpeciesSpec(charge, diffusion, mu, initial, source, name))

    bdoc = doc.get("boundaries", {})
    _check_keys(bdoc, "boundaries", "boundaries")
    faces = {}
    for plane, table in bdoc.items():
        path = f"boundaries.{plane}"
        axis, side = PLANES[plane]
        if axis >= dim:
            raise ConfigError(path, f"plane does not exist in {dim} dimensions")
        _check_keys(table, "boundaries.plane", path)
        kind = _get(table, "type", path, "str", required=True)
        if kind == "noflux":
            extra = sorted(set(table) - {"type"})
            if extra:
                raise ConfigError(f"{path}.{extra[0]}", "no-flux planes take no data")
            faces[(axis, side)] = fld.NoFlux()
        elif kind == "dirichlet":
            phi = _get(table, "phi", path, "field", required=True)
            rho = table.get("rho")
            if not isinstance(rho, list) or len(rho) != len(species):
                raise ConfigError(f"{path}.rho", f"expected a list of {len(species)} density traces")
            traces = []
            for k, r in enumerate(rho):
                fn = _get({"v": r}, "v", f"{path}.rho[{k}]", "field")
                traces.append(fn)
                if np.any(fld.sample_boundary(grid, fn, axis, side, 0.0) < 0):
                    raise ConfigError(f"{path}.rho[{k}]", "density trace must be non-negative")
            faces[(axis, side)] = fld.Dirichlet(tuple(traces), phi)
        else:
            raise ConfigError(f"{path}.type", f"expected 'noflux' or 'dirichlet', got {kind!r}")
    boundaries = fld.BoundarySpec(dim, faces)

    tdoc = doc.get("time", {})
    _check_keys(tdoc, "time", "time")
    if "tau" in tdoc and "tau_over_h" in tdoc:
        raise ConfigError("time", "give either tau or tau_over_h, not both")
    if "tau_over_h" in tdoc:
        tau = _get(tdoc, "tau_over_h", "time", "number") * min(grid.spacings)
    else:
        tau = _get(tdoc, "tau", "time", "number", 0.01)
    if not tau > 0:
        raise ConfigError("time.tau", f"must be positive, got {tau}")
    end = _get(tdoc, "end", "time", "number", 0.0)
    if end < 0:
        raise ConfigError("time.end", f"must be non-negative, got {end}")
    source_time = _get(tdoc, "source_time", "time", "str", "old")
    if source_time not in ("old", "new"):
        raise ConfigError("time.source_time", f"expected 'old' or 'new', got {source_time!r}")

    sdoc = doc.get("scheme", {})
    _check_keys(sdoc, "scheme", "scheme")
    order = _get(sdoc, "order", "scheme", "int", 1)
    if order not in (1, 2):
        raise ConfigError("scheme.order", f"expected 1 or 2, got {order}")
    mean = _get(sdoc, "mean", "scheme", "str", "harmonic")
    if mean not in ("harmonic", "geometric", "algebraic"):
        raise ConfigError("scheme.mean", f"expected harmonic, geometric or algebraic, got {mean!r}")
    limiter = _get(sdoc, "limiter", "scheme", "bool", True)

    vdoc = doc.get("solver", {})
    _check_keys(vdoc, "solver", "solver")
    try:
        solver = SolverConfig(
            method=_get(vdoc, "method", "solver", "str", DEFAULT_SOLVER.method),
            preconditioner=_get(vdoc, "preconditioner", "solver", "str", DEFAULT_SOLVER.preconditioner),
            rtol=_get(vdoc, "rtol", "solver", "number", DEFAULT_SOLVER.rtol),
            max_iter=_get(vdoc, "max_iter", "solver", "int", None),
        )
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None

    name = _get(doc, "name", "", "str", "")
    try:
        scenario = Scenario(grid, species, epsilon, fixed, kT, boundaries, order, mean, limiter,
                            tau, end, solver, neutralize, source_time, name)
    except ValueError as exc:
        raise ConfigError("", str(exc)) from None
    if scenario.no_flux and not neutralize:
        charge = fld.sample_cells(grid, fixed) + sum(
            sp.charge * fld.sample_cells(grid, sp.initial) for sp in species)
        try:
            check_compatibility(grid, charge)
        except CompatibilityError as exc:
            raise ConfigError("physics.neutralize", f"{exc}; set neutralize = true to subtract "
                              "a uniform background charge") from None

    odoc = doc.get("output", {})
    _check_keys(odoc, "output", "output")
    out_dir = Path(_get(odoc, "dir", "output", "str", "out"))
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = Path(base_dir) / out_dir
    every = _get(odoc, "snapshot_every", "output", "int", 0)
    if every < 0:
        raise ConfigError("output.snapshot_every", f"must be >= 0, got {every}")

    steady = doc.get("steady", {})
    _check_keys(steady, "steady", "steady")
    tol = _get(steady, "tol", "steady", "number", 1e-8)
    if not 0 < tol < 1:
        raise ConfigError("steady.tol", f"must lie in (0, 1), got {tol}")
    max_steps = _get(steady, "max_steps", "steady", "int", 10000)
    if max_steps < 1:
        raise ConfigError("steady.max_steps", f"must be >= 1, got {max_steps}")

    return RunConfig(
        scenario=scenario, out_dir=out_dir, snapshot_every=every,
        diagnostics_csv=_get(odoc, "diagnostics_csv", "output", "bool", True),
        vtk=_get(odoc, "vtk", "output", "bool", True),
        matrix_dump=_get(odoc, "matrix_dump", "output", "bool", False),
        steady_tol=tol, steady_max_steps=max_steps, document=doc,
    )


def load_document(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("", f"{path}: {exc}") from None


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read a TOML file, apply ``overrides`` (see :func:`apply_overrides`) and validate."""
    doc = load_document(path)
    if overrides:
        doc = apply_overrides(doc, **overrides)
    return parse_config(doc)


def apply_overrides(document: dict, tau=None, grid=None, scheme=None, mean=None, limiter=None,
                    out=None, snapshot_every=None) -> dict:
    """Return a copy of ``document`` with command-line settings patched in.

    ``grid`` is a list of counts (one entry is broadcast to every axis).
    """
    doc = copy.deepcopy(document)
    if tau is not None:
        t = doc.setdefault("time", {})
        t.pop("tau_over_h", None)
        t["tau"] = float(tau)
    if grid is not None:
        g = doc.setdefault("grid", {})
        dim = g.get("dim", len(grid))
        counts = list(grid) * dim if len(grid) == 1 else list(grid)
        g["counts"] = counts
    if scheme is not None:
        doc.setdefault("scheme", {})["order"] = {"first": 1, "second": 2}[scheme]
    if mean is not None:
        doc.setdefault("scheme", {})["mean"] = mean
    if limiter is not None:
        doc.setdefault("scheme", {})["limiter"] = bool(limiter)
    if out is not None:
        doc.setdefault("output", {})["dir"] = str(out)
    if snapshot_every is not None:
        doc.setdefault("output", {})["snapshot_every"] = int(snapshot_every)
    return doc
