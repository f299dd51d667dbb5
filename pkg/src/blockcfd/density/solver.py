"""Implicit pseudo-time marching and an explicit time-accurate mode for the Euler equations."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..engine.pipeline import SolvePipeline, SolveReport, SolverConfig
from ..errors import NonPhysicalStateError, SolverDivergedError
from ..mesh import Mesh
from .assembly import DensityDiscretization

MAX_HALVINGS = 5


@dataclass
class PseudoTimeControl:
    """CFL schedule: linear ramp from ``start_cfl`` to ``courant`` over ``ramp_iters`` iterations."""

    courant: float = 50.0
    start_cfl: float = 1.0
    ramp_iters: int = 200
    local_time_stepping: bool = True

    def __post_init__(self):
        if not (self.courant > 0 and self.start_cfl > 0):
            raise ValueError("CFL numbers must be positive")
        if self.ramp_iters < 0:
            raise ValueError("ramp length must be >= 0")

    def cfl(self, iteration):
        """CFL at 1-based ``iteration``."""
        if self.ramp_iters == 0:
            return self.courant
        frac = min(1.0, (iteration - 1) / self.ramp_iters)
        return self.start_cfl + (self.courant - self.start_cfl) * frac

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        return cls(courant=d.get("end", d.get("courant", 50.0)), start_cfl=d.get("start", 1.0),
                   ramp_iters=d.get("rampIters", 200),
                   local_time_stepping=d.get("localTimeStepping", True))

    def to_dict(self):
        return {"start": self.start_cfl, "end": self.courant, "rampIters": self.ramp_iters,
                "localTimeStepping": self.local_time_stepping}


@dataclass
class StepResult:
    residual_norms: np.ndarray
    report: SolveReport | None
    cfl: float
    halvings: int = 0
    fallbacks: int = 0
    timings: dict = field(default_factory=dict)


def residual_norms(R):
    """L2 norm of each equation's residual."""
    return np.sqrt(np.sum(np.asarray(R) ** 2, axis=0))


def implicit_step(Q, disc: DensityDiscretization, control: PseudoTimeControl, iteration=1,
                  solve_cfg: SolverConfig | None = None, backend="engine", pipeline=None):
    """One implicit pseudo-time step ``[V/dtau I - dR/dQ] dQ = R(Q)``.

    Returns ``(Q_new, StepResult)``. The residual norms describe ``R(Q)``
    at the incoming state. Steps producing non-positive density or pressure
    are halved up to five times.
    """
    pipeline = pipeline or SolvePipeline()
    cfl = control.cfl(iteration)
    disc.timer.reset()
    if control.local_time_stepping:
        A, R, dtau = disc.assemble(Q, cfl)
    else:
        with disc.timer.section("jacobianAssembly"):
            lam = disc.spectral_radii(Q)
            A = disc.jacobian(Q, lam)
            dtau = np.full(disc.mesh.n_cells, disc.local_time_step(Q, cfl, lam).min())
            A.diag += (np.asarray(disc.mesh.cell_volumes) / dtau)[:, None, None] * np.eye(5)
        R = disc.residual(Q)
    norms = residual_norms(R)
    fallbacks = disc.last_fallbacks
    if not np.any(R):
        return Q.copy(), StepResult(norms, None, cfl, 0, fallbacks, disc.timer.snapshot())
    dQ, report = pipeline.solve(A, R, np.zeros_like(R), backend, solve_cfg or SolverConfig())
    t0 = time.perf_counter()
    alpha = 1.0
    for halvings in range(MAX_HALVINGS + 1):
        Qn = Q + alpha * dQ
        W = disc.gas.to_primitive(Qn)
        if np.all(disc.gas.is_physical(W)):
            break
        alpha *= 0.5
    else:
        W = disc.gas.to_primitive(Q + dQ)
        bad = np.flatnonzero(~disc.gas.is_physical(W))
        raise SolverDivergedError(
            f"update stays non-physical after {MAX_HALVINGS} halvings (first bad cell {bad[0]})",
            iteration=iteration,
            diagnostics={"cells": bad[:10].tolist(), "cfl": cfl,
                         "residual": norms.tolist()})
    timings = disc.timer.snapshot()
    timings["update"] = time.perf_counter() - t0
    return Qn, StepResult(norms, report, cfl, halvings, fallbacks, timings)


def explicit_march(Q, disc: DensityDiscretization, t_end, cfl=0.5):
    """Time-accurate SSP-RK2 march to ``t_end`` with a global CFL-limited step.

    Returns ``(Q, n_steps)``.
    """
    V = np.asarray(disc.mesh.cell_volumes)[:, None]
    t = 0.0
    steps = 0
    Q = np.array(Q, dtype=float, copy=True)
    while t < t_end * (1 - 1e-14):
        dt = disc.local_time_step(Q, cfl).min()
        dt = min(dt, t_end - t)
        Q1 = Q + dt / V * disc.residual(Q)
        _check(disc, Q1, t)
        Q = 0.5 * Q + 0.5 * (Q1 + dt / V * disc.residual(Q1))
        _check(disc, Q, t)
        t += dt
        steps += 1
    return Q, steps


def _check(disc, Q, t):
    if not np.all(disc.gas.is_physical(disc.gas.to_primitive(Q))):
        raise NonPhysicalStateError(f"explicit march produced a non-physical state at t={t:.4g}")


SOD_LEFT = np.array([1.0, 0.0, 0.0, 0.0, 1.0])
SOD_RIGHT = np.array([0.125, 0.0, 0.0, 0.0, 0.1])


def sod_initial(mesh: Mesh, gas, x0=0.5, left=SOD_LEFT, right=SOD_RIGHT):
    """Conservative Sod initial condition split at ``x = x0``."""
    x = np.asarray(mesh.cell_centroids)[:, 0]
    W = np.where((x < x0)[:, None], left, right)
    return gas.to_conservative(W)


def uniform_state(mesh: Mesh, gas, W):
    return gas.to_conservative(np.tile(np.asarray(W, dtype=float), (mesh.n_cells, 1)))
