"""Compiled inner loops for block-sparse operations.

All block products accumulate in the same order (diagonal block first, then
off-diagonal blocks by ascending column) so that LDU and CSR storage of the
same matrix give bit-identical matrix-vector products.
"""

import numpy as np
from numba import njit

# pivots below this magnitude mark a block as singular
PIVOT_TOL = 1e-300


@njit(cache=True, inline="always")
def gemv_acc(a, x, y):
    n = a.shape[0]
    for r in range(n):
        s = 0.0
        for c in range(n):
            s += a[r, c] * x[c]
        y[r] += s


@njit(cache=True, inline="always")
def gemv_sub(a, x, y):
    n = a.shape[0]
    for r in range(n):
        s = 0.0
        for c in range(n):
            s += a[r, c] * x[c]
        y[r] -= s


@njit(cache=True)
def ldu_matvec(diag, upper, lower, owner, neighbour, cell_ptr, ent_face, ent_side, x, y):
    nc, n = x.shape
    for i in range(nc):
        for r in range(n):
            y[i, r] = 0.0
        gemv_acc(diag[i], x[i], y[i])
        for e in range(cell_ptr[i], cell_ptr[i + 1]):
            f = ent_face[e]
            if ent_side[e] == 0:
                gemv_acc(lower[f], x[owner[f]], y[i])
            else:
                gemv_acc(upper[f], x[neighbour[f]], y[i])


@njit(cache=True)
def csr_matvec(row_ptr, cols, vals, diag_idx, x, y):
    nr, n = y.shape
    for i in range(nr):
        for r in range(n):
            y[i, r] = 0.0
        d = diag_idx[i]
        gemv_acc(vals[d], x[cols[d]], y[i])
        for k in range(row_ptr[i], row_ptr[i + 1]):
            if k != d:
                gemv_acc(vals[k], x[cols[k]], y[i])


@njit(cache=True)
def halo_matvec_acc(rows, cols_local, blocks, xh, y):
    """y[rows[k]] += blocks[k] @ xh[cols_local[k]] for each halo entry."""
    for k in range(rows.shape[0]):
        gemv_acc(blocks[k], xh[cols_local[k]], y[rows[k]])


@njit(cache=True)
def invert_block(a, out):
    """Dense LU with partial pivoting; returns False when a pivot underflows."""
    n = a.shape[0]
    lu = a.copy()
    perm = np.arange(n)
    for k in range(n):
        p = k
        best = abs(lu[k, k])
        for r in range(k + 1, n):
            if abs(lu[r, k]) > best:
                best = abs(lu[r, k])
                p = r
        if not best >= PIVOT_TOL:
            return False
        if p != k:
            for c in range(n):
                t = lu[k, c]
                lu[k, c] = lu[p, c]
                lu[p, c] = t
            t2 = perm[k]
            perm[k] = perm[p]
            perm[p] = t2
        for r in range(k + 1, n):
            lu[r, k] /= lu[k, k]
            for c in range(k + 1, n):
                lu[r, c] -= lu[r, k] * lu[k, c]
    for col in range(n):
        # solve LU x = P e_col
        x = np.zeros(n)
        for r in range(n):
            s = 1.0 if perm[r] == col else 0.0
            for c in range(r):
                s -= lu[r, c] * x[c]
            x[r] = s
        for r in range(n - 1, -1, -1):
            s = x[r]
            for c in range(r + 1, n):
                s -= lu[r, c] * x[c]
            x[r] = s / lu[r, r]
        for r in range(n):
            out[r, col] = x[r]
    return True


@njit(cache=True)
def invert_blocks(blocks, out):
    """Invert every block; returns the index of the first singular one or -1."""
    for i in range(blocks.shape[0]):
        if not invert_block(blocks[i], out[i]):
            return i
    return -1


@njit(cache=True)
def dilu_factor(row_ptr, cols, vals, diag_idx, transpose_idx, dinv):
    """Modified diagonal D~_i = A_ii - sum_{j<i} A_ij D~_j^-1 A_ji, stored inverted.

    Returns the first row whose modified diagonal is singular, or -1.
    """
    nr = diag_idx.shape[0]
    n = vals.shape[1]
    tmp = np.empty((n, n))
    for i in range(nr):
        d = vals[diag_idx[i]].copy()
        for k in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[k]
            if j < i:
                a_ij = vals[k]
                a_ji = vals[transpose_idx[k]]
                dj = dinv[j]
                # tmp = dj @ a_ji
                for r in range(n):
                    for c in range(n):
                        s = 0.0
                        for q in range(n):
                            s += dj[r, q] * a_ji[q, c]
                        tmp[r, c] = s
                for r in range(n):
                    for c in range(n):
                        s = 0.0
                        for q in range(n):
                            s += a_ij[r, q] * tmp[q, c]
                        d[r, c] -= s
        if not invert_block(d, dinv[i]):
            return i
    return -1


@njit(cache=True)
def csr_sgs_apply(row_ptr, cols, vals, dinv, r, z):
    """z = (D+U)^-1 D (D+L)^-1 r for block CSR with inverse diagonal ``dinv``."""
    nr, n = r.shape
    y = np.empty(n)
    for i in range(nr):
        for c in range(n):
            y[c] = r[i, c]
        for k in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[k]
            if j < i:
                gemv_sub(vals[k], z[j], y)
        for c in range(n):
            z[i, c] = 0.0
        gemv_acc(dinv[i], y, z[i])
    for i in range(nr - 1, -1, -1):
        for c in range(n):
            y[c] = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[k]
            if j > i:
                gemv_acc(vals[k], z[j], y)
        gemv_sub(dinv[i], y, z[i])


@njit(cache=True)
def ldu_sgs_apply(upper, lower, owner, neighbour, cell_ptr, ent_face, ent_side, dinv, r, z):
    """Symmetric block Gauss-Seidel sweep pair directly on LDU storage."""
    nc, n = r.shape
    y = np.empty(n)
    for i in range(nc):
        for c in range(n):
            y[c] = r[i, c]
        for e in range(cell_ptr[i], cell_ptr[i + 1]):
            if ent_side[e] == 0:
                f = ent_face[e]
                gemv_sub(lower[f], z[owner[f]], y)
        for c in range(n):
            z[i, c] = 0.0
        gemv_acc(dinv[i], y, z[i])
    for i in range(nc - 1, -1, -1):
        for c in range(n):
            y[c] = 0.0
        for e in range(cell_ptr[i], cell_ptr[i + 1]):
            if ent_side[e] == 1:
                f = ent_face[e]
                gemv_acc(upper[f], z[neighbour[f]], y)
        gemv_sub(dinv[i], y, z[i])


@njit(cache=True)
def pairwise_aggregate(row_ptr, cols, strength, nr):
    """Greedy pairwise matching in row order on the strength graph.

    Each unmatched row is paired with its strongest unmatched neighbour
    (lowest column on ties); rows without one stay singletons.
    """
    agg = -np.ones(nr, dtype=np.int64)
    nagg = 0
    for i in range(nr):
        if agg[i] >= 0:
            continue
        best = -1
        best_s = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[k]
            if j == i or agg[j] >= 0:
                continue
            if strength[k] > best_s:
                best_s = strength[k]
                best = j
        agg[i] = nagg
        if best >= 0:
            agg[best] = nagg
        nagg += 1
    return agg, nagg
