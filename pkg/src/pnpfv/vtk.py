"""Legacy ASCII VTK snapshots (STRUCTURED_POINTS with cell data).

VTK counts grid *points* in ``DIMENSIONS``, so a grid of ``N0 x N1 x N2``
cells is written as ``DIMENSIONS N0+1 N1+1 N2+1`` followed by
``CELL_DATA N0*N1*N2``.  Missing axes of 1D and 2D grids are padded with a
single cell of unit width.  Values are written with ``repr`` so a snapshot
reads back bit-exactly; the cell order is the flat order of the grid
(axis 0 fastest), which is also the VTK order.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _padded(grid):
    counts = list(grid.counts) + [1] * (3 - grid.dim)
    spacing = list(grid.spacings) + [1.0] * (3 - grid.dim)
    return counts, spacing


def format_snapshot(grid, fields: dict, title: str = "pnpfv snapshot") -> str:
    """Text of a VTK file holding the cell arrays in ``fields`` (name -> values)."""
    counts, spacing = _padded(grid)
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(n + 1) for n in counts),
        "ORIGIN 0 0 0",
        "SPACING " + " ".join(repr(float(h)) for h in spacing),
        f"CELL_DATA {grid.size}",
    ]
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.size,):
            raise ValueError(f"field {name!r} has shape {values.shape}, expected ({grid.size},)")
        if any(c.isspace() for c in name) or not name:
            raise ValueError(f"invalid VTK array name {name!r}")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(repr(float(v)) for v in values)
    return "\n".join(lines) + "\n"


def write_snapshot(grid, fields: dict, path, title: str = "pnpfv snapshot") -> Path:
    path = Path(path)
    path.write_text(format_snapshot(grid, fields, title))
    return path


def state_fields(state, names=None) -> dict:
    """Arrays of a marching state in snapshot order: densities, then ``phi``."""
    names = names or [f"rho{i}" for i in range(len(state.densities))]
    fields = {n: r for n, r in zip(names, state.densities)}
    fields["phi"] = state.phi
    return fields


def read_snapshot(path) -> dict:
    """Parse a file written by :func:`write_snapshot`.

    Returns a dict with ``dimensions`` (cell counts), ``spacing`` and
    ``fields`` (name -> flat array).
    """
    tokens = Path(path).read_text().split("\n")
    out = {"fields": {}}
    i = 0
    n_cells = None
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("DIMENSIONS"):
            out["dimensions"] = [int(v) - 1 for v in line.split()[1:]]
        elif line.startswith("SPACING"):
            out["spacing"] = [float(v) for v in line.split()[1:]]
        elif line.startswith("CELL_DATA"):
            n_cells = int(line.split()[1])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            if not tokens[i + 1].startswith("LOOKUP_TABLE"):
                raise ValueError(f"{path}: expected LOOKUP_TABLE after SCALARS {name}")
            start = i + 2
            values = np.array([float(v) for v in tokens[start:start + n_cells]])
            out["fields"][name] = values
            i = start + n_cells
            continue
        i += 1
    return out
