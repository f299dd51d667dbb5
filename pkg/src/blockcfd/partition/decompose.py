"""Mesh decomposition, renumbering and per-rank matrix partitions.

Cells are split by recursive coordinate bisection and then renumbered so
that rank ``r`` owns the consecutive global rows
``[row_offsets[r], row_offsets[r+1])``. Within a rank, cells keep their
original relative order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..block_matrix import BlockLduMatrix
from ..engine.csr import BlockCsrMatrix, ldu_slot_coordinates, ldu_to_aos
from ..mesh import Mesh


@dataclass
class Decomposition:
    """Cell-to-rank map plus the renumbering that makes rank rows consecutive.

    ``order[g]`` is the original cell sitting at global row ``g``;
    ``new_index[c]`` is the global row of original cell ``c``.
    """

    n_ranks: int
    cell_to_rank: np.ndarray
    order: np.ndarray
    new_index: np.ndarray
    row_offsets: np.ndarray

    @property
    def n_cells(self):
        return len(self.cell_to_rank)

    def rows(self, rank):
        return range(int(self.row_offsets[rank]), int(self.row_offsets[rank + 1]))

    def n_rows(self, rank):
        return int(self.row_offsets[rank + 1] - self.row_offsets[rank])

    @property
    def local_to_global_row(self):
        return [np.arange(self.row_offsets[r], self.row_offsets[r + 1]) for r in range(self.n_ranks)]

    def rank_of_row(self, rows):
        return np.searchsorted(self.row_offsets, rows, side="right") - 1

    def scatter(self, x):
        """Split a per-cell array (original numbering) into per-rank slices."""
        x = np.asarray(x)[self.order]
        return [x[self.row_offsets[r]:self.row_offsets[r + 1]].copy() for r in range(self.n_ranks)]

    def gather(self, pieces):
        """Inverse of ``scatter``."""
        x = np.concatenate(pieces)
        return x[self.new_index]


def _bisect(centroids, cells, first_rank, n_ranks, out):
    if n_ranks == 1:
        out[cells] = first_rank
        return
    pts = centroids[cells]
    extent = pts.max(axis=0) - pts.min(axis=0)
    axis = int(np.argmax(extent))  # argmax returns the lowest axis on ties
    order = cells[np.lexsort((cells, pts[:, axis]))]
    left_ranks = n_ranks // 2
    n_left = (len(cells) * left_ranks) // n_ranks
    _bisect(centroids, order[:n_left], first_rank, left_ranks, out)
    _bisect(centroids, order[n_left:], first_rank + left_ranks, n_ranks - left_ranks, out)


def decompose(mesh: Mesh, n_ranks: int) -> Decomposition:
    """Recursive coordinate bisection on cell centroids, then renumbering."""
    n = mesh.n_cells
    if int(n_ranks) != n_ranks or n_ranks < 1:
        raise ValueError(f"number of ranks must be a positive integer, got {n_ranks}")
    if n_ranks > n:
        raise ValueError(f"cannot split {n} cells over {n_ranks} ranks")
    n_ranks = int(n_ranks)
    cell_to_rank = np.empty(n, dtype=np.int64)
    _bisect(np.asarray(mesh.cell_centroids), np.arange(n), 0, n_ranks, cell_to_rank)
    order = np.lexsort((np.arange(n), cell_to_rank))
    new_index = np.empty(n, dtype=np.int64)
    new_index[order] = np.arange(n)
    offsets = np.zeros(n_ranks + 1, dtype=np.int64)
    np.cumsum(np.bincount(cell_to_rank, minlength=n_ranks), out=offsets[1:])
    return Decomposition(n_ranks, cell_to_rank, order, new_index, offsets)


@dataclass
class HaloCoefficients:
    """Couplings from a rank's rows to columns owned elsewhere.

    Entry ``k`` couples local row ``local_rows[k]`` to global column
    ``global_cols[k]`` (owned by ``peers[k]``) through ``blocks[k]``.
    """

    local_rows: np.ndarray
    global_cols: np.ndarray
    blocks: np.ndarray
    peers: np.ndarray
    slots: np.ndarray = field(default=None, repr=False)

    @property
    def n_external_nz(self):
        return len(self.local_rows)

    def __len__(self):
        return self.n_external_nz

    @classmethod
    def empty(cls, n):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros((0, n, n)), z.copy(), z.copy())


@dataclass
class RankPartition:
    """Local rows of one rank in CSR form plus its halo coefficients.

    ``local.source_slots`` and ``halo.slots`` index the block AoS array of
    the serial LDU matrix, so values can be refreshed without rebuilding.
    """

    rank: int
    row_offset: int
    local: BlockCsrMatrix
    halo: HaloCoefficients

    @property
    def n_rows(self):
        return self.local.n_rows

    @property
    def row_range(self):
        return self.row_offset, self.row_offset + self.n_rows

    def refresh(self, aos):
        np.take(aos, self.local.source_slots, axis=0, out=self.local.values)
        if len(self.halo):
            np.take(aos, self.halo.slots, axis=0, out=self.halo.blocks)


def _renumbered_slots(A: BlockLduMatrix, dec: Decomposition):
    rows, cols = ldu_slot_coordinates(A.n_cells, A.mesh.owner, A.mesh.neighbour)
    return dec.new_index[rows], dec.new_index[cols]


def build_partitioned(A: BlockLduMatrix, dec: Decomposition) -> list[RankPartition]:
    """Split ``A`` into per-rank local CSR matrices and halo coefficient arrays.

    Every scalar coefficient of ``A`` lands in exactly one place: either a
    local CSR block or a halo block. Nothing is summed.
    """
    if dec.n_cells != A.n_cells:
        raise ValueError(f"decomposition has {dec.n_cells} cells, matrix has {A.n_cells}")
    aos = ldu_to_aos(A)
    grow, gcol = _renumbered_slots(A, dec)
    row_rank = dec.rank_of_row(grow)
    col_rank = dec.rank_of_row(gcol)
    parts = []
    for r in range(dec.n_ranks):
        lo, hi = int(dec.row_offsets[r]), int(dec.row_offsets[r + 1])
        mine = row_rank == r
        interior = np.flatnonzero(mine & (col_rank == r))
        lrow, lcol = grow[interior] - lo, gcol[interior] - lo
        perm = np.lexsort((lcol, lrow))
        slots = interior[perm]
        offsets = np.zeros(hi - lo + 1, dtype=np.int64)
        np.cumsum(np.bincount(lrow, minlength=hi - lo), out=offsets[1:])
        local = BlockCsrMatrix(offsets, lcol[perm], aos[slots])
        local.source_slots = slots

        ext = np.flatnonzero(mine & (col_rank != r))
        ext = ext[np.lexsort((gcol[ext], grow[ext]))]
        halo = HaloCoefficients(grow[ext] - lo, gcol[ext], aos[ext], col_rank[ext], ext)
        parts.append(RankPartition(r, lo, local, halo))
    return parts


@dataclass
class ConsolidationPlan:
    """Assignment of ranks to engine contexts.

    Member ranks of an engine are consecutive, so an engine owns one
    consecutive range of global rows. ``engine_row_offset[r]`` is the first
    row of rank ``r`` inside its engine's consolidated matrix.
    """

    n_engines: int
    rank_to_engine: np.ndarray
    engine_row_offset: np.ndarray

    @property
    def n_ranks(self):
        return len(self.rank_to_engine)

    def members(self, engine):
        return np.flatnonzero(self.rank_to_engine == engine).tolist()

    def root(self, engine):
        return self.members(engine)[0]

    @property
    def roots(self):
        return [self.root(e) for e in range(self.n_engines)]

    def validate(self, dec: Decomposition):
        if self.n_ranks != dec.n_ranks:
            raise ValueError(f"plan covers {self.n_ranks} ranks, decomposition has {dec.n_ranks}")
        if not 1 <= self.n_engines <= self.n_ranks:
            raise ValueError(f"need 1 <= engines <= ranks, got {self.n_engines} engines "
                             f"for {self.n_ranks} ranks")
        for e in range(self.n_engines):
            mem = self.members(e)
            if not mem or mem != list(range(mem[0], mem[-1] + 1)):
                raise ValueError(f"engine {e} must own a non-empty run of consecutive ranks")
            expect = 0
            for r in mem:
                if self.engine_row_offset[r] != expect:
                    raise ValueError(f"rank {r}: engine row offset {self.engine_row_offset[r]} "
                                     f"leaves a gap or overlap (expected {expect})")
                expect += dec.n_rows(r)


def make_plan(dec: Decomposition, n_engines: int) -> ConsolidationPlan:
    """Spread ranks over engines in contiguous, near-equal groups."""
    if int(n_engines) != n_engines or not 1 <= n_engines <= dec.n_ranks:
        raise ValueError(f"engines must be in [1, {dec.n_ranks}], got {n_engines}")
    n_engines = int(n_engines)
    r2e = (np.arange(dec.n_ranks) * n_engines) // dec.n_ranks
    off = np.zeros(dec.n_ranks, dtype=np.int64)
    for e in range(n_engines):
        acc = 0
        for r in np.flatnonzero(r2e == e):
            off[r] = acc
            acc += dec.n_rows(r)
    plan = ConsolidationPlan(n_engines, r2e.astype(np.int64), off)
    plan.validate(dec)
    return plan
