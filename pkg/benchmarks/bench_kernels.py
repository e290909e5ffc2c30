"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [N ...]   (default 16 32)

Times CSR matvec, ILU(0) factorization, one ILU(0) triangular solve pair and
a full preconditioned CG solve on the 7-point Laplacian-like matrix of an
N^3 grid, for both backends.
"""
import argparse
import timeit

import numpy as np

from pnpfv import _backend, _fallback
from pnpfv.grid import build_grid
from pnpfv.sparse import SolverConfig, solve, stencil_pattern


def test_matrix(n):
    grid = build_grid(3, [1.0] * 3, [n] * 3)
    rng = np.random.default_rng(0)
    pattern = stencil_pattern(grid)
    weights = [rng.uniform(0.5, 2.0, size=lo.size) for lo, _ in pattern.faces]
    return pattern.build(np.full(grid.size, 1e-2), weights)


def _time(fn, repeat=5):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_backend(kernels, name, A):
    x = np.random.default_rng(1).standard_normal(A.n)
    pos = A.diag_pos
    lu = kernels.ilu0_factor(A.indptr, A.indices, A.data, pos, 1e-8)
    plan = kernels.ilu0_plan(A.indptr, A.indices, pos)
    saved = _backend.kernels, _backend.BACKEND
    _backend.kernels, _backend.BACKEND = kernels, name
    try:
        def cg():
            A.factors.clear()
            solve(A, x, SolverConfig("cg", "ilu0", 1e-10))
        results = {
            "matvec": _time(lambda: kernels.csr_matvec(A.indptr, A.indices, A.data, x)),
            "ilu0_factor": _time(lambda: kernels.ilu0_factor(A.indptr, A.indices, A.data, pos, 1e-8)),
            "ilu0_solve": _time(lambda: kernels.ilu0_solve(A.indptr, A.indices, lu, pos, x, plan)),
            "cg_ilu0": _time(cg, repeat=3),
        }
    finally:
        _backend.kernels, _backend.BACKEND = saved
        A.factors.clear()
    return results


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("sizes", nargs="*", type=int, default=[16, 32])
    args = parser.parse_args(argv)
    if not _backend.COMPILED:
        print("compiled kernels unavailable; timing the fallback only")
    print(f"{'grid':>6} {'kernel':<12} {'compiled [s]':>13} {'python [s]':>12} {'speedup':>8}")
    for n in args.sizes:
        A = test_matrix(n)
        py = bench_backend(_fallback, "python", A)
        comp = bench_backend(_backend.kernels, "compiled", A) if _backend.COMPILED else None
        for key, t_py in py.items():
            if comp is None:
                print(f"{n:>5}^3 {key:<12} {'-':>13} {t_py:12.3e} {'-':>8}")
            else:
                print(f"{n:>5}^3 {key:<12} {comp[key]:13.3e} {t_py:12.3e} {t_py / comp[key]:8.1f}")


if __name__ == "__main__":
    main()
