"""CSR matrices and preconditioned Krylov solvers.

The schemes produce symmetric, diagonally dominant systems, so the default
is preconditioned conjugate gradients; BiCGStab is kept as a fallback for
non-symmetric experiments.  Hot loops (CSR product, ILU(0)) run in the
compiled kernels when the extension is built.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _backend

logger = logging.getLogger(__name__)

METHODS = ("cg", "bicgstab")
PRECONDITIONERS = ("none", "jacobi", "ilu0")
_TINY = 1e-300


class SolverError(RuntimeError):
    """Base class for linear-solver failures."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConvergenceError(SolverError):
    pass


class BreakdownError(SolverError):
    pass


@dataclass
class CsrMatrix:
    """Square matrix in compressed sparse row format.

    Column indices are strictly increasing within each row.  ``cache`` is
    shared between matrices built on the same sparsity pattern and holds
    pattern-only data such as the fallback ILU level schedule; ``factors``
    belongs to this matrix alone and memoizes its preconditioners, so the
    values in ``data`` must not be modified after the first solve.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int
    cache: dict = field(default_factory=dict, repr=False, compare=False)
    factors: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.indptr.shape != (self.n + 1,) or self.indptr[0] != 0:
            raise ValueError("indptr must have length n + 1 and start at 0")
        if self.indptr[-1] != self.indices.size or self.indices.size != self.data.size:
            raise ValueError("indptr, indices and data are inconsistent")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n):
            raise ValueError("column index out of range")
        d = np.diff(self.indices)
        row_start = np.zeros(self.indices.size, dtype=bool)
        row_start[self.indptr[:-1][np.diff(self.indptr) > 0]] = True
        if np.any((d <= 0) & ~row_start[1:]):
            raise ValueError("column indices must be strictly increasing within each row")

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    @property
    def row_of_entry(self) -> np.ndarray:
        if "rows" not in self.cache:
            self.cache["rows"] = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return self.cache["rows"]

    @property
    def diag_pos(self) -> np.ndarray:
        """Position of each diagonal entry in ``data`` (-1 when not stored)."""
        if "diag" not in self.cache:
            rows = self.row_of_entry
            pos = np.full(self.n, -1, dtype=np.int64)
            hit = np.flatnonzero(self.indices == rows)
            pos[rows[hit]] = hit
            self.cache["diag"] = pos
        return self.cache["diag"]

    def diagonal(self) -> np.ndarray:
        pos = self.diag_pos
        return np.where(pos >= 0, self.data[np.maximum(pos, 0)], 0.0)

    def matvec(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"dimension mismatch: matrix is {self.n}x{self.n}, vector has shape {x.shape}")
        return _backend.kernels.csr_matvec(self.indptr, self.indices, self.data, x)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n))
        np.add.at(dense, (self.row_of_entry, self.indices), self.data)
        return dense

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_triplets(self.indices, self.row_of_entry, self.data, self.n)

    def max_abs(self) -> float:
        return float(np.abs(self.data).max()) if self.nnz else 0.0

    def symmetry_error(self) -> float:
        """``max |A - A^T|`` (0 for an exactly symmetric matrix)."""
        t = self.transpose()
        if not (np.array_equal(t.indptr, self.indptr) and np.array_equal(t.indices, self.indices)):
            return float("inf")
        return float(np.abs(t.data - self.data).max()) if self.nnz else 0.0

    def is_structurally_symmetric(self) -> bool:
        t = self.transpose()
        return np.array_equal(t.indptr, self.indptr) and np.array_equal(t.indices, self.indices)

    @classmethod
    def from_triplets(cls, rows, cols, vals, n) -> "CsrMatrix":
        """Build from coordinate triplets, summing duplicates."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            keep = np.ones(rows.size, dtype=bool)
            keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            group = np.cumsum(keep) - 1
            vals = np.bincount(group, weights=vals, minlength=int(keep.sum()))
            rows, cols = rows[keep], cols[keep]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(indptr, cols, vals, n)

    @classmethod
    def from_dense(cls, dense) -> "CsrMatrix":
        dense = np.asarray(dense, dtype=float)
        rows, cols = np.nonzero(dense)
        return cls.from_triplets(rows, cols, dense[rows, cols], dense.shape[0])

    @classmethod
    def identity(cls, n) -> "CsrMatrix":
        idx = np.arange(n)
        return cls(np.arange(n + 1), idx, np.ones(n), n)


def matvec(matrix: CsrMatrix, x) -> np.ndarray:
    return matrix.matvec(x)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "cg"
    preconditioner: str = "ilu0"
    rtol: float = 1e-10
    max_iter: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}, got {self.preconditioner!r}")
        if not 0.0 < self.rtol < 1.0:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


class SolveResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


class _Jacobi:
    def __init__(self, matrix):
        d = matrix.diagonal()
        if np.any(d == 0):
            raise BreakdownError("zero diagonal entry: Jacobi preconditioner undefined")
        self.inv = 1.0 / d

    def __call__(self, r):
        return self.inv * r


class _Ilu0:
    # A pivot this small relative to the original diagonal is treated as a
    # null direction of a singular consistent system.
    pivot_floor = 1e-8

    def __init__(self, matrix):
        pos = matrix.diag_pos
        if np.any(pos < 0):
            raise BreakdownError("ILU(0) needs every diagonal entry stored")
        k = _backend.kernels
        self.args = (matrix.indptr, matrix.indices)
        self.pos = pos
        self.lu = k.ilu0_factor(matrix.indptr, matrix.indices, matrix.data, pos, self.pivot_floor)
        key = ("ilu0_plan", _backend.BACKEND)
        if key not in matrix.cache:
            matrix.cache[key] = k.ilu0_plan(matrix.indptr, matrix.indices, pos)
        self.plan = matrix.cache[key]

    def __call__(self, r):
        return _backend.kernels.ilu0_solve(*self.args, self.lu, self.pos, np.ascontiguousarray(r), self.plan)


def _identity(r):
    return r.copy()


def _preconditioner(matrix, kind):
    if kind == "none":
        return _identity
    key = (kind, _backend.BACKEND)
    if key not in matrix.factors:
        matrix.factors[key] = _Jacobi(matrix) if kind == "jacobi" else _Ilu0(matrix)
    return matrix.factors[key]


def solve(matrix: CsrMatrix, rhs, config: Optional[SolverConfig] = None, initial_guess=None,
          constant_nullspace: bool = False) -> SolveResult:
    """Solve ``A x = b`` to ``||A x - b|| <= rtol ||b||``.

    A residual that cannot be reduced further because it sits at the
    round-off level of ``|A| |x| + |b|`` is accepted as converged.

    With ``constant_nullspace`` the matrix is taken to be singular with the
    constant vector as its kernel (a pure-Neumann operator).  The right-hand
    side and every preconditioned residual are then projected onto mean-zero
    vectors, so the iteration stays in the range of ``A``; the returned
    solution has zero mean.

    Raises
    ------
    ConvergenceError
        If the tolerance is not met within ``max_iter`` iterations.
    BreakdownError
        If a recurrence denominator vanishes.
    """
    config = config or SolverConfig()
    b = np.array(rhs, dtype=np.float64)
    if b.shape != (matrix.n,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({matrix.n},)")
    x = np.zeros(matrix.n) if initial_guess is None else np.array(initial_guess, dtype=np.float64)
    if constant_nullspace:
        b -= b.mean()
        x -= x.mean()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return SolveResult(np.zeros(matrix.n), 0, 0.0)
    target = config.rtol * bnorm
    max_iter = config.max_iter if config.max_iter is not None else 10 * matrix.n
    precond = _preconditioner(matrix, config.preconditioner)
    if constant_nullspace:
        precond = _deflated(precond)
    krylov = _cg if config.method == "cg" else _bicgstab

    total = 0
    r = b - matrix.matvec(x)
    rnorm = float(np.linalg.norm(r))
    if rnorm > bnorm:
        # a guess worse than zero only costs digits through cancellation
        x, r, rnorm = np.zeros(matrix.n), b.copy(), bnorm
    # The recursive residual can drift from the true one; restart from the
    # current iterate until the true residual meets the target.
    for _ in range(8):
        if rnorm <= target:
            break
        x, used = krylov(matrix, x, r, precond, target, max_iter - total)
        total += used
        r = b - matrix.matvec(x)
        rnorm = float(np.linalg.norm(r))
        if total >= max_iter:
            break
    if constant_nullspace:
        x -= x.mean()
    if rnorm > target and rnorm <= _roundoff_floor(matrix, x, b):
        logger.debug("%s stopped at the round-off floor: relative residual %.3e", config.method, rnorm / bnorm)
        return SolveResult(x, total, rnorm / bnorm)
    if rnorm > target:
        raise ConvergenceError(
            f"{config.method} did not converge in {total} iterations "
            f"(relative residual {rnorm / bnorm:.3e} > {config.rtol:.1e})",
            residual=rnorm / bnorm, iterations=total,
        )
    logger.debug("%s converged in %d iterations, relative residual %.3e", config.method, total, rnorm / bnorm)
    return SolveResult(x, total, rnorm / bnorm)


def _deflated(precond):
    def apply(r):
        z = precond(r)
        return z - z.mean()
    return apply


def _roundoff_floor(A, x, b) -> float:
    """Residual norm attainable in floating point: a few ulps of ``|A||x| + |b|``."""
    ax = _backend.kernels.csr_matvec(A.indptr, A.indices, np.abs(A.data), np.abs(x))
    return 32.0 * np.finfo(float).eps * float(np.linalg.norm(ax + np.abs(b)))


def _cg(A, x, r, precond, target, max_iter):
    x = x.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        q = A.matvec(p)
        pq = float(p @ q)
        if abs(pq) < _TINY:
            raise BreakdownError("CG breakdown: p^T A p vanished", iterations=it)
        alpha = rz / pq
        x += alpha * p
        r = r - alpha * q
        if np.linalg.norm(r) <= target:
            return x, it
        z = precond(r)
        rz_new = float(r @ z)
        if abs(rz) < _TINY:
            raise BreakdownError("CG breakdown: r^T z vanished", iterations=it)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


def _bicgstab(A, x, r, precond, target, max_iter):
    x = x.copy()
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(r)
    p = np.zeros_like(r)
    for it in range(1, max_iter + 1):
        rho_new = float(r_hat @ r)
        if abs(rho_new) < _TINY or abs(omega) < _TINY:
            raise BreakdownError("BiCGStab breakdown", iterations=it)
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = precond(p)
        v = A.matvec(p_hat)
        denom = float(r_hat @ v)
        if abs(denom) < _TINY:
            raise BreakdownError("BiCGStab breakdown: r_hat^T v vanished", iterations=it)
        alpha = rho_new / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= target:
            return x + alpha * p_hat, it
        s_hat = precond(s)
        t = A.matvec(s_hat)
        tt = float(t @ t)
        if tt < _TINY:
            raise BreakdownError("BiCGStab breakdown: t vanished", iterations=it)
        omega = float(t @ s) / tt
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        rho = rho_new
        if np.linalg.norm(r) <= target:
            return x, it
    return x, max_iter


def write_matrix_market(matrix: CsrMatrix, path) -> None:
    """Dump ``matrix`` in MatrixMarket coordinate format (1-based indices)."""
    rows = matrix.row_of_entry
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{matrix.n} {matrix.n} {matrix.nnz}\n")
        for i, j, v in zip(rows, matrix.indices, matrix.data):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


class StencilPattern:
    """Sparsity pattern of the (2d+1)-point finite-volume stencil on a grid.

    ``build`` fills it from per-cell diagonal terms and per-axis interior-face
    weights ``w``: each face adds ``w`` to both diagonals and ``-w`` to the two
    off-diagonals, so the result is symmetric whenever ``w`` is.
    """

    def __init__(self, grid):
        self.grid = grid
        n = grid.size
        rows = [np.arange(n)]
        cols = [np.arange(n)]
        self.faces = []
        for axis in range(grid.dim):
            lo, hi = grid.interior_faces(axis)
            self.faces.append((lo, hi))
            rows += [lo, hi]
            cols += [hi, lo]
        pattern = CsrMatrix.from_triplets(np.concatenate(rows), np.concatenate(cols),
                                          np.zeros(sum(r.size for r in rows)), n)
        self.indptr, self.indices, self.n = pattern.indptr, pattern.indices, n
        self.cache = pattern.cache
        keys = pattern.row_of_entry * n + self.indices
        self.diag_pos = np.searchsorted(keys, np.arange(n) * (n + 1))
        self.offdiag_pos = [
            (np.searchsorted(keys, lo * n + hi), np.searchsorted(keys, hi * n + lo))
            for lo, hi in self.faces
        ]

    def build(self, diag, weights) -> CsrMatrix:
        n = self.n
        data = np.zeros(self.indices.size)
        total = np.array(diag, dtype=np.float64, copy=True)
        for (lo, hi), (p_lh, p_hl), w in zip(self.faces, self.offdiag_pos, weights):
            total += np.bincount(lo, weights=w, minlength=n)
            total += np.bincount(hi, weights=w, minlength=n)
            data[p_lh] = -w
            data[p_hl] = -w
        data[self.diag_pos] = total
        return CsrMatrix(self.indptr, self.indices, data, n, cache=self.cache)


_PATTERNS = {}


def stencil_pattern(grid) -> StencilPattern:
    """Shared pattern per grid (grids are immutable and hashable)."""
    if grid not in _PATTERNS:
        _PATTERNS[grid] = StencilPattern(grid)
    return _PATTERNS[grid]
