"""Solver configuration, solve reports and the staged offload pipeline.

Two interchangeable backends solve a coupled ``BlockLduMatrix`` system:

``host``
    GMRES (or BiCGStab) with LU-SGS evaluated directly on LDU storage.
``engine``
    The staged procedure: convert source and solution to block AoS arrays,
    convert the coefficients, set up the CSR structure on the first call (or
    after a topology change) and otherwise replace values only, solve, and
    read the solution back. Each stage is timed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from ..block_matrix import BlockLduMatrix, block_matvec
from . import krylov
from .amg import AmgConfig, amg_build
from .csr import BlockCsrMatrix, csr_structure, ldu_slot_coordinates, ldu_to_aos
from .precond import DILU, LUSGS, IdentityPreconditioner, LduLUSGS

METHODS = ("GMRES", "PBiCGStab")
PRECONDITIONERS = ("none", "LUSGS", "DILU", "AMG")
BACKENDS = ("host", "engine")
STAGES = ("convert", "setup", "replace", "solve", "retrieve")


@dataclass
class SolverConfig:
    method: str = "GMRES"
    preconditioner: str = "LUSGS"
    rel_tol: float = 1e-6
    abs_tol: float = 1e-30
    max_iters: int = 500
    gmres_restart: int = 30
    amg: AmgConfig = field(default_factory=AmgConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}, got {self.preconditioner!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.gmres_restart < 1:
            raise ValueError("maxIters and gmresRestart must be >= 1")
        if isinstance(self.amg, dict):
            self.amg = AmgConfig.from_dict(self.amg)

    _keys = {"relTol": "rel_tol", "absTol": "abs_tol", "maxIters": "max_iters",
             "gmresRestart": "gmres_restart"}

    @classmethod
    def from_dict(cls, d):
        kw = {cls._keys.get(k, k): v for k, v in dict(d or {}).items()}
        if "amg" in kw:
            kw["amg"] = AmgConfig.from_dict(kw["amg"])
        return cls(**kw)

    def to_dict(self):
        inv = {v: k for k, v in self._keys.items()}
        out = {inv.get(k, k): v for k, v in asdict(self).items() if k != "amg"}
        out["amg"] = self.amg.to_dict()
        return out

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return SolverConfig(**d)


@dataclass
class SolveReport:
    iterations: int = 0
    initial_residual: float = 0.0
    final_residual: float = 0.0
    converged: bool = False
    timings: dict = field(default_factory=lambda: dict.fromkeys(STAGES, 0.0))
    history: list = field(default_factory=list)
    backend: str = "engine"
    method: str = "GMRES"
    preconditioner: str = "LUSGS"

    CSV_HEADER = ("iteration", "iterations", "converged", "initRes", "finalRes", "path", "tConvert",
                  "tSetup", "tSolve", "tRetrieve")

    def csv_row(self, it):
        """One ``linear.csv`` row; ``tSetup`` is the setup or replace time, ``path`` says which."""
        t = self.timings
        path = "replace" if t.get("replace", 0.0) > 0 or t.get("setup", 0.0) == 0 else "setup"
        return dict(zip(self.CSV_HEADER, (
            it, self.iterations, int(self.converged), self.initial_residual, self.final_residual,
            path, t.get("convert", 0.0), t.get("setup", 0.0) + t.get("replace", 0.0),
            t.get("solve", 0.0), t.get("retrieve", 0.0))))

    def to_dict(self):
        d = asdict(self)
        d.pop("history")
        return d


def make_preconditioner(name, csr: BlockCsrMatrix, amg_cfg=None):
    if name == "none":
        return IdentityPreconditioner()
    if name == "LUSGS":
        return LUSGS(csr)
    if name == "DILU":
        return DILU(csr)
    if name == "AMG":
        return amg_build(csr, amg_cfg)
    raise ValueError(f"unknown preconditioner {name!r}")


def run_krylov(cfg: SolverConfig, matvec, b, x0, psolve, dot=np.dot):
    if cfg.method == "GMRES":
        return krylov.gmres(matvec, b, x0, psolve, cfg.rel_tol, cfg.abs_tol, cfg.max_iters,
                            cfg.gmres_restart, dot=dot)
    return krylov.bicgstab(matvec, b, x0, psolve, cfg.rel_tol, cfg.abs_tol, cfg.max_iters, dot=dot)


def _fill_report(report, kres):
    report.iterations = kres.iterations
    report.initial_residual = kres.initial_residual
    report.final_residual = kres.final_residual
    report.converged = kres.converged
    report.history = kres.history


def solve(csr: BlockCsrMatrix, b, x0, cfg: SolverConfig, preconditioner=None):
    """Solve ``csr x = b`` from ``x0``; returns ``(x, SolveReport)`` with block vectors."""
    n = csr.n
    b = np.asarray(b, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if b.size != csr.n_rows * n or x0.size != csr.n_rows * n:
        raise ValueError(f"vector sizes {b.size}, {x0.size} do not match matrix {csr.n_rows} x {n}")
    t0 = time.perf_counter()
    if preconditioner is None:
        preconditioner = make_preconditioner(cfg.preconditioner, csr, cfg.amg)
    shape = (csr.n_rows, n)

    def matvec(v):
        return csr.matvec(v.reshape(shape)).ravel()

    def psolve(v):
        return preconditioner.apply(v.reshape(shape)).ravel()

    x, kres = run_krylov(cfg, matvec, b.ravel(), x0.ravel(), psolve)
    report = SolveReport(backend="engine", method=cfg.method, preconditioner=cfg.preconditioner)
    _fill_report(report, kres)
    report.timings["solve"] = time.perf_counter() - t0
    return x.reshape(shape), report


def host_solve(A: BlockLduMatrix, b, x0, cfg: SolverConfig):
    """Solve on LDU storage with LU-SGS (or no preconditioner when cfg says ``none``)."""
    t0 = time.perf_counter()
    shape = (A.n_cells, A.n)
    pre = IdentityPreconditioner() if cfg.preconditioner == "none" else LduLUSGS(A)

    def matvec(v):
        return block_matvec(A, v.reshape(shape)).ravel()

    def psolve(v):
        return pre.apply(v.reshape(shape)).ravel()

    x, kres = run_krylov(cfg, matvec, np.asarray(b, float).ravel(),
                         np.asarray(x0, float).ravel(), psolve)
    report = SolveReport(backend="host", method=cfg.method, preconditioner=pre.name)
    _fill_report(report, kres)
    report.timings["solve"] = time.perf_counter() - t0
    return x.reshape(shape), report


class EngineSession:
    """Engine-side state kept between calls: the CSR structure and its slot permutation."""

    def __init__(self):
        self.csr = None
        self._owner = None
        self._neighbour = None
        self._n = None
        self.setups = 0
        self.replacements = 0

    def _topology_unchanged(self, A):
        return (self.csr is not None and self._n == A.n and self.csr.n_rows == A.n_cells
                and np.array_equal(self._owner, A.mesh.owner)
                and np.array_equal(self._neighbour, A.mesh.neighbour))

    def upload(self, A: BlockLduMatrix, aos):
        """Set up the structure or replace values; returns the stage name used."""
        if self._topology_unchanged(A):
            np.take(aos, self.csr.source_slots, axis=0, out=self.csr.values)
            self.replacements += 1
            return "replace"
        rows, cols = ldu_slot_coordinates(A.n_cells, A.mesh.owner, A.mesh.neighbour)
        offsets, ccols, perm = csr_structure(A.n_cells, rows, cols)
        csr = BlockCsrMatrix(offsets, ccols, aos[perm])
        csr.source_slots = perm
        csr.topology = (A.n_cells, A.n, A.mesh.owner.copy(), A.mesh.neighbour.copy())
        csr.transpose_idx  # built during setup so replace calls never pay for it
        self.csr = csr
        self._owner = A.mesh.owner.copy()
        self._neighbour = A.mesh.neighbour.copy()
        self._n = A.n
        self.setups += 1
        return "setup"


class SolvePipeline:
    """Runtime-selectable linear solve, stateless apart from the engine session."""

    def __init__(self):
        self.session = EngineSession()

    def solve(self, A: BlockLduMatrix, b, x0, backend="engine", cfg: SolverConfig | None = None):
        cfg = cfg or SolverConfig()
        if backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
        if backend == "host":
            return host_solve(A, b, x0, cfg)

        timings = dict.fromkeys(STAGES, 0.0)
        t = time.perf_counter()
        b_aos = np.ascontiguousarray(b, dtype=float).reshape(A.n_cells, A.n).copy()
        x_aos = np.ascontiguousarray(x0, dtype=float).reshape(A.n_cells, A.n).copy()
        aos = ldu_to_aos(A)
        timings["convert"] = time.perf_counter() - t

        t = time.perf_counter()
        stage = self.session.upload(A, aos)
        timings[stage] = time.perf_counter() - t

        x, report = solve(self.session.csr, b_aos, x_aos, cfg)
        timings["solve"] = report.timings["solve"]

        t = time.perf_counter()
        x = np.array(x.reshape(A.n_cells, A.n), copy=True)
        timings["retrieve"] = time.perf_counter() - t
        report.timings = timings
        return x, report


def backend_solve_pipeline(A: BlockLduMatrix, b, x0, backend="engine", cfg=None, pipeline=None):
    pipeline = pipeline or SolvePipeline()
    return pipeline.solve(A, b, x0, backend, cfg)
