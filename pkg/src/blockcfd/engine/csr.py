"""Block CSR storage (array-of-structures blocks) and LDU conversion.

Conversion follows the offload procedure: the LDU coefficients are first
flattened into one contiguous array of row-major blocks ordered
``[diag..., upper..., lower...]`` (the block AoS array), then permuted into
CSR order. The permutation is computed once per topology; later value
updates reuse it (``replace_values``).
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..block_matrix import BlockLduMatrix, Variable
from ..errors import StructureMismatchError
from ..mesh import Mesh


class BlockCsrMatrix:
    """Square block-sparse matrix with ``nnz`` dense ``n x n`` blocks.

    ``values[k]`` is the block at row ``r`` (``row_offsets[r] <= k <
    row_offsets[r+1]``) and block column ``col_indices[k]``. Columns are
    strictly increasing within a row and every row has a diagonal block.
    """

    def __init__(self, row_offsets, col_indices, values, *, n_cols=None, check=True):
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=float)
        self.n_rows = len(self.row_offsets) - 1
        self.n_cols = self.n_rows if n_cols is None else n_cols
        self.n = self.values.shape[1] if self.values.ndim == 3 else 0
        # filled by ldu_to_block_csr: AoS slot feeding each CSR entry
        self.source_slots = None
        self.topology = None
        self._transpose_idx = None
        if check:
            self.validate()
        self.diag_idx = self._find_diagonal()

    @property
    def nnz(self):
        return len(self.col_indices)

    @property
    def block_size(self):
        return self.n

    def validate(self):
        ro, ci = self.row_offsets, self.col_indices
        if self.values.ndim != 3 or self.values.shape[1] != self.values.shape[2]:
            raise ValueError(f"values must have shape (nnz, n, n), got {self.values.shape}")
        if ro[0] != 0 or ro[-1] != len(ci) or np.any(np.diff(ro) < 0):
            raise ValueError("row offsets must start at 0, end at nnz and be non-decreasing")
        if len(self.values) != len(ci):
            raise ValueError("one block per column index is required")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ValueError("column index out of range")
        rows = np.repeat(np.arange(self.n_rows), np.diff(ro))
        same_row = rows[1:] == rows[:-1]
        if np.any(same_row & (np.diff(ci) <= 0)):
            raise ValueError("column indices must be strictly increasing within each row")

    def _find_diagonal(self):
        ro, ci = self.row_offsets, self.col_indices
        diag = np.full(self.n_rows, -1, dtype=np.int64)
        rows = np.repeat(np.arange(self.n_rows), np.diff(ro))
        hit = np.flatnonzero(rows == ci)
        diag[rows[hit]] = hit
        return diag

    def has_full_diagonal(self):
        return bool(np.all(self.diag_idx >= 0))

    @classmethod
    def from_triples(cls, n_rows, rows, cols, blocks, n_cols=None):
        """Build from unsorted ``(row, col, block)`` triples; duplicates are summed in input order."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        blocks = np.asarray(blocks, dtype=float)
        ncol = n_rows if n_cols is None else n_cols
        key = rows * ncol + cols
        uniq, inv = np.unique(key, return_inverse=True)
        vals = np.zeros((len(uniq),) + blocks.shape[1:])
        np.add.at(vals, inv, blocks)
        urows = uniq // ncol
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(urows, minlength=n_rows), out=offsets[1:])
        return cls(offsets, uniq % ncol, vals, n_cols=n_cols)

    def row_of_entries(self):
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))

    @property
    def transpose_idx(self):
        """For each entry (i, j), the position of entry (j, i); -1 if absent."""
        if self._transpose_idx is None:
            rows = self.row_of_entries()
            key = rows * self.n_cols + self.col_indices
            tkey = self.col_indices * self.n_cols + rows
            pos = np.searchsorted(key, tkey)
            pos = np.minimum(pos, len(key) - 1)
            found = key[pos] == tkey
            self._transpose_idx = np.where(found, pos, -1).astype(np.int64)
        return self._transpose_idx

    def matvec(self, x):
        x = np.ascontiguousarray(x, dtype=float).reshape(self.n_cols, self.n)
        y = np.empty((self.n_rows, self.n))
        if not self.has_full_diagonal():
            raise ValueError("matvec requires a diagonal block in every row")
        kernels.csr_matvec(self.row_offsets, self.col_indices, self.values, self.diag_idx, x, y)
        return y

    def to_dense(self):
        n = self.n
        dense = np.zeros((self.n_rows * n, self.n_cols * n))
        for r, k0, k1 in zip(range(self.n_rows), self.row_offsets[:-1], self.row_offsets[1:]):
            for k in range(k0, k1):
                c = self.col_indices[k]
                dense[r * n:(r + 1) * n, c * n:(c + 1) * n] = self.values[k]
        return dense

    def copy(self):
        out = BlockCsrMatrix(self.row_offsets.copy(), self.col_indices.copy(), self.values.copy(),
                             n_cols=self.n_cols, check=False)
        out.source_slots = self.source_slots
        out.topology = self.topology
        return out

    def same_structure(self, other):
        return (self.n_rows == other.n_rows and self.n == other.n
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices))

    def __repr__(self):
        return f"BlockCsrMatrix(n_rows={self.n_rows}, n={self.n}, nnz={self.nnz})"


# ---------------------------------------------------------------------------
# LDU <-> CSR
# ---------------------------------------------------------------------------

def ldu_to_aos(A: BlockLduMatrix) -> np.ndarray:
    """Concatenate LDU blocks into one contiguous ``(n_cells + 2 n_faces, n, n)`` array."""
    return np.concatenate([A.diag, A.upper, A.lower])


def ldu_slot_coordinates(n_cells, owner, neighbour):
    """Block (row, column) of every AoS slot."""
    cells = np.arange(n_cells, dtype=np.int64)
    rows = np.concatenate([cells, owner, neighbour])
    cols = np.concatenate([cells, neighbour, owner])
    return rows, cols


def csr_structure(n_rows, rows, cols):
    """Row offsets, columns and the slot permutation putting slots in CSR order."""
    perm = np.lexsort((cols, rows))
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
    return offsets, cols[perm], perm


def _topology(A: BlockLduMatrix):
    return (A.n_cells, A.n, A.mesh.owner.copy(), A.mesh.neighbour.copy())


def _check_topology(csr: BlockCsrMatrix, A: BlockLduMatrix):
    if csr.topology is None or csr.source_slots is None:
        raise StructureMismatchError("CSR matrix was not built from an LDU matrix")
    nc, n, own, nei = csr.topology
    if nc != A.n_cells or n != A.n or not np.array_equal(own, A.mesh.owner) \
            or not np.array_equal(nei, A.mesh.neighbour):
        raise StructureMismatchError(
            "matrix topology changed since setup; rebuild the CSR structure")


def ldu_to_block_csr(A: BlockLduMatrix) -> BlockCsrMatrix:
    """Permute LDU blocks into canonical block CSR. Values are copied, never combined."""
    rows, cols = ldu_slot_coordinates(A.n_cells, A.mesh.owner, A.mesh.neighbour)
    offsets, ccols, perm = csr_structure(A.n_cells, rows, cols)
    csr = BlockCsrMatrix(offsets, ccols, ldu_to_aos(A)[perm])
    csr.source_slots = perm
    csr.topology = _topology(A)
    return csr


def replace_values(csr: BlockCsrMatrix, A: BlockLduMatrix):
    """Refresh CSR values in place from an LDU matrix with unchanged topology."""
    _check_topology(csr, A)
    np.take(ldu_to_aos(A), csr.source_slots, axis=0, out=csr.values)
    return csr


def block_csr_to_ldu(csr: BlockCsrMatrix, mesh: Mesh, variables=None) -> BlockLduMatrix:
    """Inverse permutation back to LDU storage on ``mesh``."""
    if variables is None:
        variables = [Variable(f"q{k}") for k in range(csr.n)]
    A = BlockLduMatrix(mesh, variables, vector_first=False)
    if A.n != csr.n:
        raise ValueError(f"variables give block size {A.n}, matrix has {csr.n}")
    rows, cols = ldu_slot_coordinates(mesh.n_cells, mesh.owner, mesh.neighbour)
    offsets, ccols, perm = csr_structure(mesh.n_cells, rows, cols)
    if not (np.array_equal(offsets, csr.row_offsets) and np.array_equal(ccols, csr.col_indices)):
        raise StructureMismatchError("CSR sparsity does not match the mesh addressing")
    aos = np.empty((len(perm), csr.n, csr.n))
    aos[perm] = csr.values
    nc, nf = mesh.n_cells, mesh.n_faces
    A.diag[:] = aos[:nc]
    A.upper[:] = aos[nc:nc + nf]
    A.lower[:] = aos[nc + nf:]
    return A
