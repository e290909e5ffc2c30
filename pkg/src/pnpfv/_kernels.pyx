# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse kernels: CSR product and ILU(0) factor/solve.

Same call signatures as ``pnpfv._fallback``.  Rows must have strictly
increasing column indices and a stored diagonal entry.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef cnp.int64_t idx_t


def csr_matvec(const idx_t[::1] indptr, const idx_t[::1] indices,
               const double[::1] data, const double[::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double acc
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc
    return out


def ilu0_factor(const idx_t[::1] indptr, const idx_t[::1] indices,
                const double[::1] data, const idx_t[::1] diag_pos,
                double pivot_floor):
    """Incomplete LU with zero fill, stored in the pattern of ``data``.

    A pivot smaller than ``pivot_floor`` times the original diagonal is
    replaced by the original diagonal (singular but consistent systems).
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k, kk, jj, col, pos
    cdef double lik, orig
    lu_arr = np.array(data, dtype=np.float64, copy=True)
    cdef double[::1] lu = lu_arr
    work_arr = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] work = work_arr
    for i in range(n):
        for kk in range(indptr[i], indptr[i + 1]):
            work[indices[kk]] = kk
        for kk in range(indptr[i], diag_pos[i]):
            k = indices[kk]
            lik = lu[kk] / lu[diag_pos[k]]
            lu[kk] = lik
            for jj in range(diag_pos[k] + 1, indptr[k + 1]):
                pos = work[indices[jj]]
                if pos >= 0:
                    lu[pos] -= lik * lu[jj]
        orig = data[diag_pos[i]]
        if fabs(lu[diag_pos[i]]) <= pivot_floor * fabs(orig):
            lu[diag_pos[i]] = orig
        for kk in range(indptr[i], indptr[i + 1]):
            work[indices[kk]] = -1
    return lu_arr


def ilu0_plan(indptr, indices, diag_pos):
    return None


def ilu0_solve(const idx_t[::1] indptr, const idx_t[::1] indices,
               const double[::1] lu, const idx_t[::1] diag_pos,
               const double[::1] b, plan=None):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double acc
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] x = out
    for i in range(n):
        acc = b[i]
        for k in range(indptr[i], diag_pos[i]):
            acc -= lu[k] * x[indices[k]]
        x[i] = acc
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for k in range(diag_pos[i] + 1, indptr[i + 1]):
            acc -= lu[k] * x[indices[k]]
        x[i] = acc / lu[diag_pos[i]]
    return out
