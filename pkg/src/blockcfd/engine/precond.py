"""Block preconditioners: Jacobi, LU-SGS and DILU on block CSR, LU-SGS on LDU.

Every preconditioner maps a block vector ``r`` of shape ``(n_rows, n)`` to
``z = M^-1 r`` and is linear in ``r``.

LU-SGS uses ``M = (D + L) D^-1 (D + U)`` with ``D`` the block diagonal;
DILU uses the same form with the modified diagonal
``D~_i = A_ii - sum_{j<i} A_ij D~_j^-1 A_ji``.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..block_matrix import BlockLduMatrix
from ..errors import SingularBlockError
from .csr import BlockCsrMatrix


def _inverse_diagonal(blocks):
    dinv = np.empty_like(blocks)
    bad = kernels.invert_blocks(np.ascontiguousarray(blocks), dinv)
    if bad >= 0:
        raise SingularBlockError(f"singular diagonal block at cell {bad}", cell=int(bad))
    return dinv


class IdentityPreconditioner:
    name = "none"

    def __init__(self, A=None):
        pass

    def apply(self, r):
        return np.array(r, dtype=float, copy=True)


class BlockJacobi:
    name = "Jacobi"

    def __init__(self, csr: BlockCsrMatrix):
        self.dinv = _inverse_diagonal(csr.values[csr.diag_idx])

    def apply(self, r):
        return np.einsum("kij,kj->ki", self.dinv, r)


class LUSGS:
    """One forward and one backward block Gauss-Seidel sweep."""

    name = "LUSGS"

    def __init__(self, csr: BlockCsrMatrix):
        if not csr.has_full_diagonal():
            raise SingularBlockError("missing diagonal block", cell=int(np.argmin(csr.diag_idx)))
        self.csr = csr
        self.dinv = _inverse_diagonal(csr.values[csr.diag_idx])

    def apply(self, r):
        r = np.ascontiguousarray(r, dtype=float)
        z = np.empty_like(r)
        c = self.csr
        kernels.csr_sgs_apply(c.row_offsets, c.col_indices, c.values, self.dinv, r, z)
        return z


class DILU:
    """Diagonal incomplete LU: only the modified diagonal is stored."""

    name = "DILU"

    def __init__(self, csr: BlockCsrMatrix):
        if not csr.has_full_diagonal():
            raise SingularBlockError("missing diagonal block", cell=int(np.argmin(csr.diag_idx)))
        tidx = csr.transpose_idx
        if np.any(tidx < 0):
            raise ValueError("DILU needs a structurally symmetric sparsity pattern")
        self.csr = csr
        self.dinv = np.empty((csr.n_rows, csr.n, csr.n))
        bad = kernels.dilu_factor(csr.row_offsets, csr.col_indices, csr.values, csr.diag_idx,
                                  tidx, self.dinv)
        if bad >= 0:
            raise SingularBlockError(f"singular DILU diagonal at cell {bad}", cell=int(bad))

    def apply(self, r):
        r = np.ascontiguousarray(r, dtype=float)
        z = np.empty_like(r)
        c = self.csr
        kernels.csr_sgs_apply(c.row_offsets, c.col_indices, c.values, self.dinv, r, z)
        return z


class LduLUSGS:
    """LU-SGS evaluated directly on LDU storage (the host path)."""

    name = "LUSGS"

    def __init__(self, A: BlockLduMatrix):
        self.A = A
        self.dinv = _inverse_diagonal(A.diag)

    def apply(self, r):
        r = np.ascontiguousarray(r, dtype=float)
        z = np.empty_like(r)
        A, ad = self.A, self.A.addressing
        kernels.ldu_sgs_apply(A.upper, A.lower, ad.owner, ad.neighbour, ad.cell_ptr,
                              ad.ent_face, ad.ent_side, self.dinv, r, z)
        return z


def precondition_lusgs(A: BlockCsrMatrix, r):
    return LUSGS(A).apply(r)


def precondition_dilu(A: BlockCsrMatrix, r):
    return DILU(A).apply(r)
