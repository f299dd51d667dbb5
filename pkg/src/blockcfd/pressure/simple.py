"""Segregated SIMPLE reference solver sharing the coupled discretization."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..block_matrix import BlockLduMatrix, scalar
from ..engine.pipeline import SolvePipeline, SolverConfig
from ..errors import ConfigError, SolverDivergedError
from ..fv import interpolate, scatter_add
from .coupled import (FIXED_PRESSURE, IncompressibleState, IterationResult, PressureDiscretization,
                      _patch_geometry, boundary_fluxes, divergence_check, momentum_diagonal_operator,
                      rhie_chow_flux)


@dataclass
class DivergenceMonitor:
    """Flags a run whose residual grows ``factor`` times above its best value, turns
    non-finite, or fails to improve on its best for ``patience`` iterations."""

    factor: float = 100.0
    patience: int | None = 500
    best: float = np.inf
    best_iteration: int = 0

    def check(self, residual, iteration):
        r = float(np.max(residual))
        diag = {"residual": np.asarray(residual).tolist(), "best": self.best,
                "bestIteration": self.best_iteration}
        if not np.isfinite(r) or r > self.factor * self.best:
            raise SolverDivergedError(
                f"residual {r:.3e} at iteration {iteration} exceeds {self.factor:g}x best {self.best:.3e}",
                iteration=iteration, diagnostics=diag)
        if r < self.best:
            self.best, self.best_iteration = r, iteration
        elif self.patience is not None and iteration - self.best_iteration > self.patience:
            raise SolverDivergedError(
                f"residual stalled: no improvement on {self.best:.3e} for {self.patience} iterations",
                iteration=iteration, diagnostics=diag)


STATE_BOUND = 1e12


def _scalar_matrix(mesh, diag, upper, lower):
    A = BlockLduMatrix(mesh, [scalar("s")])
    A.diag[:, 0, 0] = diag
    A.upper[:, 0, 0] = upper
    A.lower[:, 0, 0] = lower
    return A


def simple_iterate(state: IncompressibleState, disc: PressureDiscretization, relax_u=0.7, relax_p=0.3,
                   solve_cfg: SolverConfig | None = None, backend="engine", pipeline=None,
                   metric: PressureDiscretization | None = None, monitor: DivergenceMonitor | None = None,
                   iteration=1):
    """One SIMPLE sweep: momentum predictor, pressure correction, explicit corrections.

    ``disc`` supplies geometry, boundary conditions and the convection
    scheme; its own ``relax`` setting is ignored. The returned residuals are
    the coupled-system normalized residuals at the incoming state, measured
    with ``metric`` (a relaxation-free discretization) outside the timers.
    """
    if not (0 < relax_u <= 1 and 0 < relax_p <= 1):
        raise ConfigError(f"relaxation factors must lie in (0, 1], got {relax_u}, {relax_p}")
    cfg = solve_cfg or SolverConfig()
    pipeline = pipeline or SolvePipeline()
    metric = metric or disc
    t0 = time.perf_counter()
    res = metric.residuals(state)
    monitor_time = time.perf_counter() - t0
    if monitor is not None:
        monitor.check(res, iteration)

    mesh = disc.mesh
    nc = mesh.n_cells
    disc.timer.reset()
    saved = disc.relax
    disc.relax = relax_u
    try:
        sys_ = disc.assemble(state)
    finally:
        disc.relax = saved
    A = sys_.A
    D = sys_.D

    # momentum predictor: three scalar solves, tensor cross terms lagged
    p_only = np.zeros((nc, 4))
    p_only[:, 3] = state.p
    b_mom = sys_.b[:, :3] - A.matvec(p_only)[:, :3]
    auu = A.diag[:, :3, :3]
    u_star = state.u.copy()
    timings = {}
    for k in range(3):
        if not np.any(auu[:, k, k]):
            continue
        cross = np.einsum("cj,cj->c", np.delete(auu[:, k, :], k, axis=1), np.delete(state.u, k, axis=1))
        Ak = _scalar_matrix(mesh, auu[:, k, k], A.upper[:, k, k], A.lower[:, k, k])
        bk = (b_mom[:, k] - cross)[:, None]
        xk, rep = pipeline.solve(Ak, bk, state.u[:, k:k + 1].copy(), backend, cfg)
        u_star[:, k] = xk[:, 0]
        for key, v in rep.timings.items():
            timings[key] = timings.get(key, 0.0) + v

    # pressure correction on the Rhie-Chow flux of the predicted velocity
    with disc.timer.section("fluxes"):
        grad_p = disc.gradient(state.p)
        # unrelaxed D keeps the converged flux identical to the coupled one
        phi_star = rhie_chow_flux(mesh, u_star, state.p, grad_p, D / relax_u)
        bphi = boundary_fluxes(mesh, disc.conditions, u_star)
    S, mag, n, nd = disc.geometry
    Df = interpolate(mesh, D)
    c = np.einsum("fij,fj,fi->f", Df, S, n) / nd
    diag = scatter_add(mesh.owner, c, nc) + scatter_add(mesh.neighbour, c, nc)
    outlet = {}
    for patch in mesh.patches:
        bc = disc.conditions[patch.name]
        if bc.kind in FIXED_PRESSURE:
            Sb, magb, nb, dn = _patch_geometry(mesh, patch)
            DSb = np.einsum("fij,fj->fi", D[patch.cells], Sb)
            cb = np.einsum("fi,fi->f", DSb, nb) / dn
            bphi[patch.name] = (bphi[patch.name] + (np.einsum("fi,fi->f", DSb, grad_p[patch.cells])
                                - cb * (bc.pressure - state.p[patch.cells])) / relax_u)
            diag += scatter_add(patch.cells, cb, nc)
            outlet[patch.name] = cb
    rhs = -divergence_check(mesh, phi_star, bphi)
    if disc.reference_cell is not None:
        diag[disc.reference_cell] += float(np.mean(diag))
    L = _scalar_matrix(mesh, diag, -c, -c)
    pc, rep = pipeline.solve(L, rhs[:, None], np.zeros((nc, 1)), backend, cfg)
    for key, v in rep.timings.items():
        timings[key] = timings.get(key, 0.0) + v
    pc = pc[:, 0]

    t0 = time.perf_counter()
    phi = phi_star - c * (pc[mesh.neighbour] - pc[mesh.owner])
    for name, cb in outlet.items():
        bphi[name] = bphi[name] + cb * pc[mesh.patch(name).cells]
    # Gauss gradient of p' consistent with the momentum pressure term
    pcx = np.zeros((nc, 4))
    pcx[:, 3] = pc
    grad_pc = A.matvec(pcx)[:, :3] / np.asarray(mesh.cell_volumes)[:, None]
    u = u_star - np.einsum("cij,cj->ci", D, grad_pc)
    p_new = state.p + relax_p * pc
    if disc.reference_cell is not None:
        p_new += disc.reference_pressure - p_new[disc.reference_cell]
    new = IncompressibleState(u, p_new, phi, bphi)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p_new))) or np.abs(u).max() > STATE_BOUND:
        raise SolverDivergedError(f"SIMPLE update produced an unbounded state at iteration {iteration}",
                                  iteration=iteration,
                                  diagnostics={"maxU": float(np.nanmax(np.abs(u))),
                                               "residual": np.asarray(res).tolist()})
    disc.timer.add("update", time.perf_counter() - t0)

    t = disc.timer.snapshot()
    t["residualMonitor"] = monitor_time
    rep.timings = timings
    return new, IterationResult(res, rep, t)


__all__ = ["DivergenceMonitor", "simple_iterate", "momentum_diagonal_operator"]
