"""Pure numpy implementations of the kernels in ``_kernels.pyx``.

The triangular sweeps of ILU(0) are vectorized with a level schedule:
rows whose dependencies are all resolved form one level and are updated
together.
"""
import numpy as np


def csr_matvec(indptr, indices, data, x):
    n = len(indptr) - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    return np.bincount(rows, weights=data * x[indices], minlength=n)


def ilu0_factor(indptr, indices, data, diag_pos, pivot_floor):
    n = len(indptr) - 1
    lu = np.array(data, dtype=np.float64, copy=True)
    indptr = indptr.tolist()
    cols = indices.tolist()
    diag = diag_pos.tolist()
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        where = {cols[kk]: kk for kk in range(start, stop)}
        for kk in range(start, diag[i]):
            k = cols[kk]
            lik = lu[kk] / lu[diag[k]]
            lu[kk] = lik
            for jj in range(diag[k] + 1, indptr[k + 1]):
                pos = where.get(cols[jj])
                if pos is not None:
                    lu[pos] -= lik * lu[jj]
        orig = data[diag[i]]
        if abs(lu[diag[i]]) <= pivot_floor * abs(orig):
            lu[diag[i]] = orig
    return lu


def _levels(rows, cols, n):
    """Longest dependency chain ending at each row (edges ``cols -> rows``)."""
    level = np.zeros(n, dtype=np.int64)
    if rows.size == 0:
        return level
    while True:
        new = level.copy()
        np.maximum.at(new, rows, level[cols] + 1)
        if np.array_equal(new, level):
            return level
        level = new


def _schedule(indptr, indices, mask, n):
    rows = np.repeat(np.arange(n), np.diff(indptr))
    sel = np.flatnonzero(mask(rows, indices))
    level = _levels(rows[sel], indices[sel], n)
    order = np.argsort(level, kind="stable")
    bounds = np.searchsorted(level[order], np.arange(level.max() + 2))
    entry_level = level[rows[sel]]
    eorder = np.argsort(entry_level, kind="stable")
    ebounds = np.searchsorted(entry_level[eorder], np.arange(level.max() + 2))
    steps = []
    for lv in range(level.max() + 1):
        lrows = order[bounds[lv]:bounds[lv + 1]]
        ents = sel[eorder[ebounds[lv]:ebounds[lv + 1]]]
        local = np.searchsorted(lrows, rows[ents])
        steps.append((lrows, ents, local))
    return steps


def ilu0_plan(indptr, indices, diag_pos):
    n = len(indptr) - 1
    lower = _schedule(indptr, indices, lambda r, c: c < r, n)
    upper = _schedule(indptr, indices, lambda r, c: c > r, n)
    return lower, upper


def ilu0_solve(indptr, indices, lu, diag_pos, b, plan=None):
    if plan is None:
        plan = ilu0_plan(indptr, indices, diag_pos)
    lower, upper = plan
    x = np.array(b, dtype=np.float64, copy=True)
    for lrows, ents, local in lower:
        if ents.size:
            x[lrows] -= np.bincount(local, weights=lu[ents] * x[indices[ents]], minlength=lrows.size)
    for lrows, ents, local in upper:
        if ents.size:
            x[lrows] -= np.bincount(local, weights=lu[ents] * x[indices[ents]], minlength=lrows.size)
        x[lrows] /= lu[diag_pos[lrows]]
    return x
