"""Distributed operators on partitioned block systems.

Halo values travel keyed by global column id: during setup every rank tells
each neighbour which of its rows it references, and on every exchange the
sender ships ``(ids, values)`` which the receiver places by id. Couplings
are structurally symmetric (every face has an upper and a lower block), so
the set of ranks a rank reads from equals the set it sends to.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..block_matrix import BlockLduMatrix
from ..engine.csr import BlockCsrMatrix, ldu_to_aos
from ..engine.pipeline import SolveReport, SolverConfig, STAGES, make_preconditioner, run_krylov
from ..errors import DistributedError
from .decompose import (ConsolidationPlan, Decomposition, HaloCoefficients, RankPartition,
                        build_partitioned, decompose, make_plan)
from .harness import Harness, allreduce_sum, gather_to


class HaloExchange:
    """Per-rank halo plan: which global columns come from which peer.

    ``peer_rank`` maps the peer ids stored in the halo (ranks or engines)
    to harness ranks.
    """

    def __init__(self, ctx, halo: HaloCoefficients, row_offset, peer_rank=None, tag="halo"):
        self.ctx = ctx
        self.tag = tag
        self.row_offset = row_offset
        self.halo = halo
        peer_rank = peer_rank or (lambda p: int(p))
        self.needed = np.unique(halo.global_cols)
        self.positions = np.searchsorted(self.needed, halo.global_cols).astype(np.int64)
        owner_of = dict(zip(halo.global_cols.tolist(), halo.peers.tolist()))
        self.peers = sorted({peer_rank(p) for p in halo.peers.tolist()})
        need_from = {r: [] for r in self.peers}
        for g in self.needed.tolist():
            need_from[peer_rank(owner_of[g])].append(g)
        for r in self.peers:
            ctx.send(r, tag + ":request", np.array(need_from[r], dtype=np.int64))
        self.send_ids = {r: ctx.recv(r, tag + ":request") for r in self.peers}

    def exchange(self, x_local, fault=None):
        """Return the halo buffer (one block row per needed global column)."""
        for r in self.peers:
            ids = self.send_ids[r]
            self.ctx.send(r, self.tag + ":values", (ids, x_local[ids - self.row_offset]))
        buf = np.zeros((len(self.needed), x_local.shape[1]))
        got = np.zeros(len(self.needed), dtype=bool)
        for r in self.peers:
            ids, vals = self.ctx.recv(r, self.tag + ":values")
            pos = np.searchsorted(self.needed, ids)
            if len(ids) and (np.any(pos >= len(self.needed)) or np.any(self.needed[np.minimum(pos, len(self.needed) - 1)] != ids)):
                raise DistributedError(f"rank {self.ctx.rank} received unexpected halo ids from rank {r}",
                                       waiting=[self.ctx.rank], peers=[r])
            buf[pos] = vals
            got[pos] = True
        if not got.all():
            missing = self.needed[~got][:5].tolist()
            raise DistributedError(f"rank {self.ctx.rank} is missing halo values for columns {missing}",
                                   waiting=[self.ctx.rank], peers=self.peers)
        if fault is not None:
            buf = fault(buf)
        return buf

    def apply(self, local: BlockCsrMatrix, x_local, fault=None):
        """``y = local x + halo x_halo``."""
        xh = self.exchange(x_local, fault)
        y = local.matvec(x_local)
        h = self.halo
        if len(h):
            kernels.halo_matvec_acc(h.local_rows, self.positions, h.blocks, xh, y)
        return y


def distributed_matvec(parts, x_parts, harness: Harness | None = None, fault=None):
    """Multiply a partitioned matrix by a partitioned block vector.

    ``fault`` optionally transforms every received halo buffer (used to
    inject corrupted or missing halo data in tests).
    """
    harness = harness or Harness(len(parts))
    if harness.n_ranks != len(parts):
        raise ValueError("harness size differs from number of partitions")

    def program(ctx):
        part = parts[ctx.rank]
        x = np.ascontiguousarray(x_parts[ctx.rank], dtype=float)
        ex = HaloExchange(ctx, part.halo, part.row_offset)
        return ex.apply(part.local, x, fault)

    return harness.run(program)


# ---------------------------------------------------------------------------
# consolidation
# ---------------------------------------------------------------------------

@dataclass
class EnginePartition:
    """Consolidated rows of one engine context.

    ``scatter[r]`` is the slice of engine rows owned by member rank ``r``.
    Halo peers are engine ids.
    """

    engine: int
    root: int
    members: list
    row_offset: int
    local: BlockCsrMatrix
    halo: HaloCoefficients
    scatter: dict

    @property
    def n_rows(self):
        return self.local.n_rows

    def refresh(self, aos):
        np.take(aos, self.local.source_slots, axis=0, out=self.local.values)
        if len(self.halo):
            np.take(aos, self.halo.slots, axis=0, out=self.halo.blocks)


def _merge(engine, members, pieces, plan: ConsolidationPlan, n):
    base = int(pieces[0]["row_offset"])
    rows, cols, vals, slots = [], [], [], []
    hrows, hcols, hvals, hpeers, hslots = [], [], [], [], []
    scatter = {}
    for r, pc in zip(members, pieces):
        off = int(plan.engine_row_offset[r])
        if int(pc["row_offset"]) - base != off:
            raise ValueError(f"rank {r}: engine offset {off} disagrees with its global rows")
        nr = len(pc["offsets"]) - 1
        scatter[r] = slice(off, off + nr)
        lr = np.repeat(np.arange(nr), np.diff(pc["offsets"])) + off
        rows.append(lr); cols.append(pc["cols"] + off); vals.append(pc["values"]); slots.append(pc["slots"])
        h = pc["halo"]
        inside = plan.rank_to_engine[h.peers] == engine
        rows.append(h.local_rows[inside] + off)
        cols.append(h.global_cols[inside] - base)
        vals.append(h.blocks[inside]); slots.append(h.slots[inside])
        out = ~inside
        hrows.append(h.local_rows[out] + off); hcols.append(h.global_cols[out])
        hvals.append(h.blocks[out]); hpeers.append(plan.rank_to_engine[h.peers[out]])
        hslots.append(h.slots[out])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    vals, slots = np.concatenate(vals), np.concatenate(slots)
    n_rows = sum(s.stop - s.start for s in scatter.values())
    perm = np.lexsort((cols, rows))
    rows, cols = rows[perm], cols[perm]
    if np.any((rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])):
        raise ValueError(f"engine {engine}: duplicate coefficients during consolidation")
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
    local = BlockCsrMatrix(offsets, cols, vals[perm].reshape(-1, n, n))
    local.source_slots = slots[perm]
    hrows, hcols = np.concatenate(hrows), np.concatenate(hcols)
    hp = np.lexsort((hcols, hrows))
    halo = HaloCoefficients(hrows[hp], hcols[hp], np.concatenate(hvals).reshape(-1, n, n)[hp],
                            np.concatenate(hpeers)[hp].astype(np.int64), np.concatenate(hslots)[hp])
    return EnginePartition(engine, members[0], list(members), base, local, halo, scatter)


def consolidate(parts, plan: ConsolidationPlan, harness: Harness | None = None):
    """Gather member partitions on each engine root and merge them.

    Row and column indices are offset by each rank's engine row offset;
    halo entries between ranks of the same engine become interior entries.
    Returns one ``EnginePartition`` per engine.
    """
    if plan.n_ranks != len(parts):
        raise ValueError(f"plan covers {plan.n_ranks} ranks, got {len(parts)} partitions")
    if not 1 <= plan.n_engines <= plan.n_ranks:
        raise ValueError("need 1 <= engines <= ranks")
    n = parts[0].local.n
    harness = harness or Harness(len(parts))

    def program(ctx):
        part = parts[ctx.rank]
        e = int(plan.rank_to_engine[ctx.rank])
        members = plan.members(e)
        piece = {"row_offset": part.row_offset, "offsets": part.local.row_offsets,
                 "cols": part.local.col_indices, "values": part.local.values,
                 "slots": part.local.source_slots, "halo": part.halo}
        pieces = gather_to(ctx, members[0], piece, members, tag="consolidate")
        if pieces is None:
            return None
        return _merge(e, members, pieces, plan, n)

    results = harness.run(program)
    return [results[plan.root(e)] for e in range(plan.n_engines)]


# ---------------------------------------------------------------------------
# distributed solve
# ---------------------------------------------------------------------------

def distributed_solve(parts, b_parts, x0_parts, cfg: SolverConfig | None = None,
                      plan: ConsolidationPlan | None = None, harness: Harness | None = None,
                      engines=None):
    """Solve a partitioned system on consolidated engines.

    Each rank uploads its slice of ``b`` and ``x0`` to its engine root. The
    roots run the same Krylov iteration in lockstep: matrix-vector products
    exchange halo values between engines and inner products are
    tree-all-reduced over the roots. Each engine preconditions with its own
    rows only (block Jacobi across engines). Every rank gets back its slice
    of the solution and a copy of the report.
    """
    cfg = cfg or SolverConfig()
    n_ranks = len(parts)
    if plan is None:
        plan = ConsolidationPlan(n_ranks, np.arange(n_ranks), np.zeros(n_ranks, dtype=np.int64))
    harness = harness or Harness(n_ranks)
    if engines is None:
        engines = consolidate(parts, plan, harness)
    roots = plan.roots
    n = parts[0].local.n

    def program(ctx):
        e = int(plan.rank_to_engine[ctx.rank])
        eng = engines[e]
        upload = (np.asarray(b_parts[ctx.rank], float), np.asarray(x0_parts[ctx.rank], float))
        pieces = gather_to(ctx, eng.root, upload, eng.members, tag="upload")
        if pieces is None:
            return ctx.recv(eng.root, "download")
        t0 = time.perf_counter()
        b = np.zeros((eng.n_rows, n))
        x0 = np.zeros((eng.n_rows, n))
        for r, (bp, xp) in zip(eng.members, pieces):
            b[eng.scatter[r]] = bp.reshape(-1, n)
            x0[eng.scatter[r]] = xp.reshape(-1, n)
        ex = HaloExchange(ctx, eng.halo, eng.row_offset, peer_rank=lambda p: roots[p],
                          tag="engine-halo")
        pre = make_preconditioner(cfg.preconditioner, eng.local, cfg.amg)
        shape = (eng.n_rows, n)

        def matvec(v):
            return ex.apply(eng.local, v.reshape(shape)).ravel()

        def psolve(v):
            return pre.apply(v.reshape(shape)).ravel()

        def dot(u, v):
            return allreduce_sum(ctx, float(np.dot(u, v)), group=roots)

        x, kres = run_krylov(cfg, matvec, b.ravel(), x0.ravel(), psolve, dot=dot)
        report = SolveReport(backend="engine", method=cfg.method, preconditioner=cfg.preconditioner)
        report.iterations = kres.iterations
        report.initial_residual = kres.initial_residual
        report.final_residual = kres.final_residual
        report.converged = kres.converged
        report.history = kres.history
        report.timings["solve"] = time.perf_counter() - t0
        x = x.reshape(shape)
        for r in eng.members:
            if r != ctx.rank:
                ctx.send(r, "download", (x[eng.scatter[r]].copy(), report))
        return x[eng.scatter[ctx.rank]].copy(), report

    results = harness.run(program)
    return [r[0] for r in results], results[0][1]


class DistributedPipeline:
    """Drop-in replacement for ``SolvePipeline`` running on simulated ranks.

    Vectors are passed in the original cell numbering. The first call
    decomposes, partitions and consolidates (``setup``); later calls with the
    same topology only refresh coefficient values (``replace``).
    """

    def __init__(self, n_ranks, n_engines=None, mode="deterministic", timeout=10.0):
        self.n_ranks = int(n_ranks)
        self.n_engines = int(n_engines or n_ranks)
        if not 1 <= self.n_engines <= self.n_ranks:
            raise ValueError(f"engines ({self.n_engines}) must not exceed ranks ({self.n_ranks})")
        self.mode = mode
        self.timeout = timeout
        self.dec = self.plan = self.parts = self.engines = None
        self._topology = None

    def harness(self):
        return Harness(self.n_ranks, self.mode, self.timeout)

    def _setup(self, A: BlockLduMatrix):
        self.dec = decompose(A.mesh, self.n_ranks)
        self.plan = make_plan(self.dec, self.n_engines)
        self.parts = build_partitioned(A, self.dec)
        self.engines = consolidate(self.parts, self.plan, self.harness())
        self._topology = (A.n, A.mesh.owner.copy(), A.mesh.neighbour.copy())

    def _same_topology(self, A):
        if self._topology is None:
            return False
        n, own, nei = self._topology
        return n == A.n and np.array_equal(own, A.mesh.owner) and np.array_equal(nei, A.mesh.neighbour)

    def solve(self, A: BlockLduMatrix, b, x0, backend="engine", cfg: SolverConfig | None = None):
        cfg = cfg or SolverConfig()
        timings = dict.fromkeys(STAGES, 0.0)
        t = time.perf_counter()
        aos = ldu_to_aos(A)
        timings["convert"] = time.perf_counter() - t
        t = time.perf_counter()
        if self._same_topology(A):
            for part in self.parts:
                part.refresh(aos)
            for eng in self.engines:
                eng.refresh(aos)
            stage = "replace"
        else:
            self._setup(A)
            stage = "setup"
        timings[stage] = time.perf_counter() - t
        t = time.perf_counter()
        b_parts = self.dec.scatter(np.asarray(b, float).reshape(A.n_cells, A.n))
        x_parts = self.dec.scatter(np.asarray(x0, float).reshape(A.n_cells, A.n))
        timings["convert"] += time.perf_counter() - t
        x_parts, report = distributed_solve(self.parts, b_parts, x_parts, cfg, self.plan,
                                            self.harness(), self.engines)
        timings["solve"] = report.timings["solve"]
        t = time.perf_counter()
        x = self.dec.gather(x_parts)
        timings["retrieve"] = time.perf_counter() - t
        report.timings = timings
        return x, report


def partition_report(dec: Decomposition, parts, plan: ConsolidationPlan | None = None,
                     engines=None):
    """Per-rank rows, halo sizes and engine assignment as a JSON-ready dict."""
    ranks = []
    for p in parts:
        lo, hi = p.row_range
        entry = {"rank": p.rank, "rows": [int(lo), int(hi)], "nRows": int(hi - lo),
                 "nExternalNZ": int(p.halo.n_external_nz)}
        if plan is not None:
            entry["engine"] = int(plan.rank_to_engine[p.rank])
        ranks.append(entry)
    out = {"nRanks": dec.n_ranks, "nCells": dec.n_cells, "ranks": ranks}
    if plan is not None:
        out["nEngines"] = plan.n_engines
    if engines is not None:
        out["engines"] = [{"engine": e.engine, "ranks": e.members,
                           "rows": [int(e.row_offset), int(e.row_offset + e.n_rows)],
                           "nExternalNZ": int(e.halo.n_external_nz)} for e in engines]
    return out
