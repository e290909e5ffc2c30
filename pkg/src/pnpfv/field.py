"""Cell fields, analytic expressions and boundary data.

Analytic fields are callables ``f(x, y, z, t)`` evaluated on numpy arrays.
Config files provide them as expression strings in a small language:

* numbers, ``pi``, ``e`` and the variables ``x``, ``y``, ``z``, ``t``
* ``+ - * /`` and ``^`` (or ``**``) for powers
* ``exp log sin cos sqrt abs min max``
* ``ind(v, a, b)``: 1 where ``a <= v <= b`` else 0 (indicator of an interval)
"""
from __future__ import annotations

import ast
import operator
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid import MINUS, PLUS, FaceId, Grid, face_center


def _indicator(v, a, b):
    return np.where((v >= a) & (v <= b), 1.0, 0.0)


_FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
    "ind": _indicator,
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_VARIABLES = ("x", "y", "z", "t")
_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


class ExpressionError(ValueError):
    pass


class Expression:
    """A parsed analytic expression in ``x, y, z, t``."""

    def __init__(self, source: str):
        self.source = str(source)
        try:
            tree = ast.parse(self.source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {self.source!r}: {exc.msg}") from None
        self._names = set()
        self._check(tree.body)
        self._tree = tree.body

    @property
    def depends_on_time(self) -> bool:
        return "t" in self._names

    def _check(self, node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            self._check(node.operand)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        elif isinstance(node, ast.Name):
            if node.id not in _VARIABLES and node.id not in _CONSTANTS:
                raise ExpressionError(f"unknown name {node.id!r} in {self.source!r}")
            self._names.add(node.id)
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            if node.func.id not in _FUNCTIONS or node.keywords:
                raise ExpressionError(f"unknown function {node.func.id!r} in {self.source!r}")
            if node.func.id == "ind" and len(node.args) != 3:
                raise ExpressionError(f"ind() takes 3 arguments in {self.source!r}")
            for arg in node.args:
                self._check(arg)
        else:
            raise ExpressionError(f"unsupported syntax in {self.source!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTANTS[node.id]
        return _FUNCTIONS[node.func.id](*(self._eval(a, env) for a in node.args))

    def __call__(self, x, y, z, t=0.0):
        x = np.asarray(x, dtype=float)
        env = {"x": x, "y": np.asarray(y, dtype=float), "z": np.asarray(z, dtype=float), "t": float(t)}
        with np.errstate(all="ignore"):
            value = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(value, dtype=float), x.shape).copy()

    def __repr__(self):
        return f"Expression({self.source!r})"


@dataclass(frozen=True)
class Constant:
    value: float
    depends_on_time = False

    def __call__(self, x, y, z, t=0.0):
        return np.full(np.shape(x), float(self.value))


class FunctionField:
    """Wrap a plain Python callable ``f(x, y, z, t)``."""

    def __init__(self, fn: Callable, depends_on_time: bool = True):
        self.fn = fn
        self.depends_on_time = depends_on_time

    def __call__(self, x, y, z, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(x, y, z, t), dtype=float), x.shape).copy()


def as_field(value):
    """Coerce a number, expression string or callable to an analytic field."""
    if isinstance(value, (Expression, Constant, FunctionField)):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool):
        return Constant(float(value))
    if isinstance(value, str):
        return Expression(value)
    if callable(value):
        return FunctionField(value)
    raise TypeError(f"cannot interpret {value!r} as an analytic field")


@dataclass
class ScalarField:
    """One finite value per cell of ``grid`` (flat, axis 0 fastest)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} values, got shape {self.values.shape}")
        _require_finite(self.grid, self.values, "field")

    def as_array(self) -> np.ndarray:
        return self.grid.as_array(self.values)


def _require_finite(grid, values, what):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        cell = grid.multi_index(int(bad[0]))
        raise ValueError(f"non-finite {what} value {values[bad[0]]!r} at cell {cell}")


def sample_cells(grid: Grid, fn, t: float = 0.0) -> np.ndarray:
    """Evaluate ``fn`` at every cell midpoint."""
    values = as_field(fn)(*grid.cell_centers(), t)
    _require_finite(grid, values, "sampled")
    return values


def sample_initial(grid: Grid, fn, t: float = 0.0) -> ScalarField:
    """Midpoint-quadrature cell values of an analytic field."""
    return ScalarField(grid, sample_cells(grid, fn, t))


def cell_average(grid: Grid, fn, t: float = 0.0, points: int = 3) -> np.ndarray:
    """Cell averages of ``fn`` by tensor Gauss-Legendre quadrature.

    ``points`` nodes per axis integrate polynomials of degree ``2 points - 1``
    in each variable exactly.
    """
    fn = as_field(fn)
    nodes, weights = np.polynomial.legendre.leggauss(points)
    centers = grid.cell_centers()
    total = np.zeros(grid.size)
    for idx in np.ndindex(*(points,) * grid.dim):
        x = list(centers)
        w = 1.0
        for j, k in enumerate(idx):
            x[j] = centers[j] + 0.5 * grid.spacings[j] * nodes[k]
            w *= 0.5 * weights[k]
        total += w * fn(*x, t)
    _require_finite(grid, total, "cell average")
    return total


def sample_interior_faces(grid: Grid, fn, axis: int, t: float = 0.0) -> np.ndarray:
    """Evaluate ``fn`` at the centers of the interior faces normal to ``axis``."""
    lower, _ = grid.interior_faces(axis)
    values = as_field(fn)(*grid.face_centers(lower, axis, PLUS), t)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite face value on axis {axis}")
    return values


def sample_boundary(grid: Grid, fn, axis: int, side: str, t: float = 0.0) -> np.ndarray:
    """Evaluate ``fn`` at the boundary face centers of the plane ``(axis, side)``."""
    cells = grid.boundary_cells(axis, side)
    values = as_field(fn)(*grid.face_centers(cells, axis, side), t)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite boundary value on face ({axis}, {side})")
    return values


def face_value(fn, grid: Grid, face: FaceId, t: float = 0.0) -> float:
    x, y, z = face_center(grid, face)
    value = float(as_field(fn)(np.array([x]), np.array([y]), np.array([z]), t)[0])
    if not np.isfinite(value):
        raise ValueError(f"non-finite value {value!r} at face {face}")
    return value


# -- boundary conditions -------------------------------------------------

@dataclass(frozen=True)
class NoFlux:
    """Zero normal species flux and zero normal displacement."""


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed density traces (one per species) and potential trace."""

    rho: tuple
    phi: object

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(as_field(r) for r in self.rho))
        object.__setattr__(self, "phi", as_field(self.phi))


class BoundarySpec:
    """Boundary condition for each ``(axis, side)`` plane; unlisted planes are no-flux."""

    def __init__(self, dim: int, faces: Optional[dict] = None):
        self.dim = dim
        self.faces = {}
        for key, bc in (faces or {}).items():
            axis, side = key
            if not 0 <= axis < dim or side not in (MINUS, PLUS):
                raise ValueError(f"invalid boundary plane {key!r}")
            if not isinstance(bc, (NoFlux, Dirichlet)):
                raise TypeError(f"boundary condition must be NoFlux or Dirichlet, got {bc!r}")
            self.faces[(axis, side)] = bc

    def get(self, axis: int, side: str):
        return self.faces.get((axis, side), NoFlux())

    def dirichlet_planes(self) -> list:
        return [(a, s, bc) for (a, s), bc in sorted(self.faces.items()) if isinstance(bc, Dirichlet)]

    @property
    def all_no_flux(self) -> bool:
        return not self.dirichlet_planes()
