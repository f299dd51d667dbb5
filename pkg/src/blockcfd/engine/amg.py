"""Aggregation AMG for block systems.

Rows are matched in pairs on a scalar strength graph, the coarse operator is
the Galerkin product with piecewise-constant block transfer (each coarse
block is the sum of the fine blocks coupling the two aggregates) and every
level is smoothed with DILU. The coarsest level is solved directly.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import scipy.linalg

from .. import kernels
from ..errors import CoarseSolveError
from .csr import BlockCsrMatrix
from .precond import DILU


@dataclass
class AmgConfig:
    max_levels: int = 20
    min_coarse_rows: int = 16
    pre_sweeps: int = 1
    post_sweeps: int = 1
    cycle_type: str = "V"
    aggregation_size: int = 2

    def __post_init__(self):
        if self.max_levels < 1:
            raise ValueError("maxLevels must be >= 1")
        if self.min_coarse_rows < 1:
            raise ValueError("minCoarseRows must be >= 1")
        if self.pre_sweeps < 0 or self.post_sweeps < 0:
            raise ValueError("smoothing sweeps must be >= 0")
        if self.cycle_type != "V":
            raise ValueError(f"unsupported cycle type {self.cycle_type!r}")
        if self.aggregation_size != 2:
            raise ValueError("only pairwise aggregation (size 2) is implemented")

    _keys = {"maxLevels": "max_levels", "minCoarseRows": "min_coarse_rows",
             "preSweeps": "pre_sweeps", "postSweeps": "post_sweeps",
             "cycleType": "cycle_type", "aggregationSize": "aggregation_size"}

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        kw = {cls._keys.get(k, k): v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self):
        inv = {v: k for k, v in self._keys.items()}
        return {inv[k]: v for k, v in asdict(self).items()}


def strength(csr: BlockCsrMatrix):
    """``||A_ij||_F / sqrt(||A_ii||_F ||A_jj||_F)`` for every stored entry (0 on the diagonal)."""
    norms = np.sqrt(np.einsum("kij,kij->k", csr.values, csr.values))
    dn = norms[csr.diag_idx]
    rows = csr.row_of_entries()
    scale = np.sqrt(dn[rows] * dn[csr.col_indices])
    s = np.divide(norms, scale, out=np.zeros_like(norms), where=scale > 0)
    s[rows == csr.col_indices] = 0.0
    return s


def aggregate(csr: BlockCsrMatrix):
    agg, nagg = kernels.pairwise_aggregate(csr.row_offsets, csr.col_indices, strength(csr),
                                           csr.n_rows)
    return agg, int(nagg)


def galerkin(csr: BlockCsrMatrix, agg, n_coarse):
    rows = agg[csr.row_of_entries()]
    cols = agg[csr.col_indices]
    return BlockCsrMatrix.from_triples(n_coarse, rows, cols, csr.values)


class AmgLevel:
    def __init__(self, A: BlockCsrMatrix):
        self.A = A
        self.agg = None
        self.n_coarse = None
        self.smoother = None


class AmgHierarchy:
    def __init__(self, levels, cfg):
        self.levels = levels
        self.cfg = cfg
        coarse = levels[-1].A
        dense = coarse.to_dense()
        self._lu = scipy.linalg.lu_factor(dense, check_finite=False) if dense.size else None
        if dense.size:
            piv = np.abs(np.diag(self._lu[0]))
            if not np.all(piv > 1e-14 * max(piv.max(), 1e-300)):
                raise CoarseSolveError(
                    f"coarsest AMG level ({coarse.n_rows} rows) is singular")

    @property
    def depth(self):
        return len(self.levels)

    def coarse_solve(self, b):
        n = self.levels[-1].A.n
        x = scipy.linalg.lu_solve(self._lu, b.ravel(), check_finite=False)
        return x.reshape(-1, n)

    def apply(self, r):
        return self._cycle(0, np.ascontiguousarray(r, dtype=float))

    def _cycle(self, lvl, b):
        if lvl == len(self.levels) - 1:
            return self.coarse_solve(b)
        level = self.levels[lvl]
        A, sm = level.A, level.smoother
        x = np.zeros_like(b)
        for s in range(self.cfg.pre_sweeps):
            x = sm.apply(b) if s == 0 else x + sm.apply(b - A.matvec(x))
        r = b - A.matvec(x) if self.cfg.pre_sweeps else b
        rc = np.zeros((level.n_coarse, b.shape[1]))
        np.add.at(rc, level.agg, r)
        x = x + self._cycle(lvl + 1, rc)[level.agg]
        for _ in range(self.cfg.post_sweeps):
            x = x + sm.apply(b - A.matvec(x))
        return x


def amg_build(csr: BlockCsrMatrix, cfg: AmgConfig | None = None) -> AmgHierarchy:
    cfg = cfg or AmgConfig()
    levels = [AmgLevel(csr)]
    while len(levels) < cfg.max_levels and levels[-1].A.n_rows > cfg.min_coarse_rows:
        fine = levels[-1]
        agg, nagg = aggregate(fine.A)
        if nagg >= fine.A.n_rows:
            break
        fine.agg, fine.n_coarse = agg, nagg
        fine.smoother = DILU(fine.A)
        levels.append(AmgLevel(galerkin(fine.A, agg, nagg)))
    return AmgHierarchy(levels, cfg)


def amg_vcycle(hierarchy: AmgHierarchy, r):
    return hierarchy.apply(r)
