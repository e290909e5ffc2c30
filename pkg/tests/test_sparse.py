import numpy as np
import pytest
import scipy.io
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from hypothesis import given, strategies as st

from pnpfv import _backend, _fallback
from pnpfv.grid import build_grid
from pnpfv.sparse import (BreakdownError, ConvergenceError, CsrMatrix, SolverConfig, matvec, solve,
                          stencil_pattern, write_matrix_market)

CONFIGS = [SolverConfig(m, p, 1e-12) for m in ("cg", "bicgstab") for p in ("none", "jacobi", "ilu0")]
BACKENDS = [_fallback] + ([_backend.kernels] if _backend.COMPILED else [])


def random_stencil_matrix(rng, counts, shift=1e-3):
    grid = build_grid(len(counts), [1.0] * len(counts), counts)
    pattern = stencil_pattern(grid)
    weights = [rng.uniform(0.1, 3.0, size=lo.size) for lo, _ in pattern.faces]
    return pattern.build(rng.uniform(0, shift, size=grid.size), weights)


def to_scipy(A):
    return scipy.sparse.csr_matrix((A.data, A.indices, A.indptr), shape=(A.n, A.n))


def dense_ilu0(dense):
    """Textbook IKJ ILU(0) on the nonzero pattern of ``dense`` (unit lower factor)."""
    a = dense.copy()
    n = a.shape[0]
    nz = dense != 0
    for i in range(1, n):
        for k in range(i):
            if not nz[i, k]:
                continue
            a[i, k] /= a[k, k]
            for j in range(k + 1, n):
                if nz[i, j]:
                    a[i, j] -= a[i, k] * a[k, j]
    return a


def test_identity_system():
    A = CsrMatrix.identity(3)
    res = solve(A, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(res.x, [1, 2, 3])
    assert res.iterations <= 1


@pytest.mark.parametrize("config", CONFIGS, ids=lambda c: f"{c.method}-{c.preconditioner}")
def test_two_by_two(config):
    A = CsrMatrix.from_dense([[2.0, -1.0], [-1.0, 2.0]])
    x = solve(A, np.array([2.0, 0.0]), config).x
    assert np.allclose(x, [4 / 3, 2 / 3], atol=1e-12)


def test_matvec_examples():
    x = np.array([1.0, 2.0])
    assert np.array_equal(CsrMatrix.identity(2).matvec(x), x)
    assert np.array_equal(matvec(CsrMatrix.from_dense([[2.0, -1.0], [-1.0, 2.0]]), np.ones(2)), [1.0, 1.0])
    zero = CsrMatrix(np.zeros(3, dtype=int), np.zeros(0, dtype=int), np.zeros(0), 2)
    assert np.array_equal(zero.matvec(x), [0.0, 0.0])


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        CsrMatrix.identity(3).matvec(np.ones(2))
    with pytest.raises(ValueError):
        solve(CsrMatrix.identity(3), np.ones(4))


@pytest.mark.parametrize("indptr, indices", [
    ([0, 1, 1], [0, 0]),      # indptr/indices inconsistent
    ([0, 2, 1], [0]),          # decreasing indptr
    ([0, 1, 2], [0, 5]),       # column out of range
    ([0, 2, 2], [1, 0]),       # unsorted row
])
def test_invalid_csr(indptr, indices):
    with pytest.raises(ValueError):
        CsrMatrix(np.array(indptr), np.array(indices), np.ones(len(indices)), 2)


def test_from_triplets_sums_duplicates():
    A = CsrMatrix.from_triplets([0, 0, 1], [1, 1, 0], [1.0, 2.0, 5.0], 2)
    assert np.array_equal(A.to_dense(), [[0, 3], [5, 0]])


@pytest.mark.parametrize("config", CONFIGS, ids=lambda c: f"{c.method}-{c.preconditioner}")
def test_matches_scipy_direct_solve(config, rng):
    A = random_stencil_matrix(rng, [6, 5, 4])
    b = rng.standard_normal(A.n)
    x_ref = scipy.sparse.linalg.spsolve(to_scipy(A).tocsc(), b)
    res = solve(A, b, config)
    assert np.linalg.norm(A.matvec(res.x) - b) <= 1e-12 * np.linalg.norm(b) * (1 + 1e-9)
    assert np.allclose(res.x, x_ref, rtol=1e-6, atol=1e-8 * np.abs(x_ref).max())


@pytest.mark.parametrize("kernels", BACKENDS, ids=lambda k: k.__name__.rsplit(".", 1)[-1])
def test_matvec_against_scipy(kernels, rng):
    A = random_stencil_matrix(rng, [7, 3])
    x = rng.standard_normal(A.n)
    assert np.allclose(kernels.csr_matvec(A.indptr, A.indices, A.data, x), to_scipy(A) @ x, rtol=1e-14)


@pytest.mark.parametrize("kernels", BACKENDS, ids=lambda k: k.__name__.rsplit(".", 1)[-1])
def test_ilu0_against_dense_reference(kernels, rng):
    A = random_stencil_matrix(rng, [4, 3, 2], shift=1.0)
    dense = A.to_dense()
    ref = dense_ilu0(dense)
    lu = kernels.ilu0_factor(A.indptr, A.indices, A.data, A.diag_pos, 1e-8)
    assert np.allclose(lu, ref[A.row_of_entry, A.indices], rtol=1e-12, atol=1e-14)

    b = rng.standard_normal(A.n)
    plan = kernels.ilu0_plan(A.indptr, A.indices, A.diag_pos)
    y = kernels.ilu0_solve(A.indptr, A.indices, lu, A.diag_pos, b, plan)
    L = np.tril(ref, -1) * (dense != 0) + np.eye(A.n)
    U = np.triu(ref) * (dense != 0)
    assert np.allclose(L @ U @ y, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("kernels", BACKENDS, ids=lambda k: k.__name__.rsplit(".", 1)[-1])
def test_ilu0_is_exact_lu_for_tridiagonal(kernels, rng):
    n = 12
    main = rng.uniform(2.5, 4.0, n)
    off = -rng.uniform(0.2, 1.0, n - 1)
    dense = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
    A = CsrMatrix.from_dense(dense)
    lu = kernels.ilu0_factor(A.indptr, A.indices, A.data, A.diag_pos, 1e-8)
    b = rng.standard_normal(n)
    plan = kernels.ilu0_plan(A.indptr, A.indices, A.diag_pos)
    x = kernels.ilu0_solve(A.indptr, A.indices, lu, A.diag_pos, b, plan)
    assert np.allclose(x, scipy.linalg.solve(dense, b), rtol=1e-12)


@pytest.mark.skipif(not _backend.COMPILED, reason="compiled kernels not built")
def test_backends_agree(rng):
    A = random_stencil_matrix(rng, [9, 8, 7])
    b = rng.standard_normal(A.n)
    k, f = _backend.kernels, _fallback
    lu_k = k.ilu0_factor(A.indptr, A.indices, A.data, A.diag_pos, 1e-8)
    lu_f = f.ilu0_factor(A.indptr, A.indices, A.data, A.diag_pos, 1e-8)
    assert np.allclose(lu_k, lu_f, rtol=1e-13)
    yk = k.ilu0_solve(A.indptr, A.indices, lu_k, A.diag_pos, b, k.ilu0_plan(A.indptr, A.indices, A.diag_pos))
    yf = f.ilu0_solve(A.indptr, A.indices, lu_f, A.diag_pos, b, f.ilu0_plan(A.indptr, A.indices, A.diag_pos))
    assert np.allclose(yk, yf, rtol=1e-11, atol=1e-14)


def test_singular_neumann_system_converges():
    # pure-Neumann Laplacian with a compatible rhs: consistent singular system
    g = build_grid(2, [1, 1], [6, 5])
    pattern = stencil_pattern(g)
    A = pattern.build(np.zeros(g.size), [np.ones(lo.size) for lo, _ in pattern.faces])
    b = np.random.default_rng(3).standard_normal(g.size)
    b -= b.mean()
    res = solve(A, b, SolverConfig("cg", "ilu0", 1e-12))
    assert np.linalg.norm(A.matvec(res.x) - b) <= 1e-12 * np.linalg.norm(b) * 1.0001


@pytest.mark.parametrize("counts", [[9], [6, 5], [3, 4, 2]])
def test_constant_nullspace_deflation(counts):
    g = build_grid(len(counts), [1.0] * len(counts), counts)
    pattern = stencil_pattern(g)
    A = pattern.build(np.zeros(g.size), [np.ones(lo.size) for lo, _ in pattern.faces])
    rng = np.random.default_rng(len(counts))
    b = rng.standard_normal(g.size)
    b -= b.mean()
    guess = 1e4 + rng.standard_normal(g.size)
    res = solve(A, b, SolverConfig("cg", "ilu0", 1e-13), guess, constant_nullspace=True)
    assert abs(res.x.mean()) <= 1e-14 * np.max(np.abs(res.x))
    # oracle: dense least squares, brought to the same (mean-zero) gauge
    ref = scipy.linalg.lstsq(A.to_dense(), b)[0]
    ref -= ref.mean()
    assert res.x == pytest.approx(ref, abs=1e-10 * np.max(np.abs(ref)))


def test_convergence_failure_raises(rng):
    A = random_stencil_matrix(rng, [10, 10])
    with pytest.raises(ConvergenceError) as info:
        solve(A, rng.standard_normal(A.n), SolverConfig("cg", "none", 1e-12, max_iter=2))
    assert info.value.residual > 1e-12


def test_jacobi_needs_diagonal():
    A = CsrMatrix.from_dense([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(BreakdownError):
        solve(A, np.ones(2), SolverConfig("cg", "jacobi"))


def test_zero_rhs_returns_zero():
    res = solve(CsrMatrix.identity(4), np.zeros(4))
    assert np.array_equal(res.x, np.zeros(4)) and res.iterations == 0


@pytest.mark.parametrize("kwargs", [{"method": "gmres"}, {"preconditioner": "ilu1"}, {"rtol": 0.0},
                                    {"rtol": 1.0}, {"max_iter": 0}])
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_matrix_market_round_trip(tmp_path, rng):
    A = random_stencil_matrix(rng, [3, 4])
    write_matrix_market(A, tmp_path / "a.mtx")
    back = scipy.io.mmread(str(tmp_path / "a.mtx")).toarray()
    assert np.array_equal(back, A.to_dense())


@given(st.lists(st.integers(1, 6), min_size=1, max_size=3), st.integers(0, 2 ** 31))
def test_stencil_matrices_symmetric_and_dominant(counts, seed):
    A = random_stencil_matrix(np.random.default_rng(seed), counts, shift=0.5)
    assert A.symmetry_error() == 0.0
    dense = A.to_dense()
    off = np.abs(dense).sum(axis=1) - np.abs(np.diag(dense))
    assert np.all(np.diag(dense) >= off)
    assert np.all(dense - np.diag(np.diag(dense)) <= 0)
