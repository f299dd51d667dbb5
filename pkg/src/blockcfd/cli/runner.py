"""Nonlinear loop driver shared by the command line and the tests."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from ..density import (DensityDiscretization, GasModel, PseudoTimeControl, implicit_step,
                       make_boundaries, primitive_from_dict, sod_initial, uniform_state)
from ..density.assembly import VARIABLES
from ..engine.pipeline import SolvePipeline
from ..errors import ConfigError
from ..partition import DistributedPipeline, partition_report
from ..pressure import (DivergenceMonitor, IncompressibleState, PressureDiscretization, coupled_iterate,
                        divergence_check, make_patch_conditions, simple_iterate)
from ..pressure.coupled import COMPONENTS
from .config import CaseConfig
from .reports import RunReport, coefficient_converged, kernel_timings

log = logging.getLogger(__name__)


def make_pipeline(cfg: CaseConfig, deterministic=True):
    if cfg.ranks == 1 and cfg.engines == 1:
        return SolvePipeline()
    return DistributedPipeline(cfg.ranks, cfg.engines, "deterministic" if deterministic else "threaded")


def _force_columns(patches):
    return [f"force_{p}_{ax}" for p in patches for ax in "xyz"]


def _force_values(patches, forces):
    return {f"force_{p}_{ax}": float(forces[p][i]) for p in patches for i, ax in enumerate("xyz")}


# -- density -------------------------------------------------------------------------
def _density_setup(cfg: CaseConfig, mesh, rng):
    ph = cfg.physics
    gas = GasModel(gamma=ph["gamma"], R=ph["R"])
    free = ph.get("freestream")
    bcs = make_boundaries(mesh, gas, ph.get("boundaries"), free)
    disc = DensityDiscretization(mesh, gas, ph["flux"], ph["limiter"], bool(ph["firstOrder"]), bcs)
    init = ph.get("initial", {})
    kind = init.get("type", "sod")
    if kind == "sod":
        Q = sod_initial(mesh, gas, init.get("x0", 0.5))
    elif kind == "uniform":
        state = init.get("state", free)
        if state is None:
            raise ConfigError("uniform initial condition needs a state or a freestream")
        Q = uniform_state(mesh, gas, primitive_from_dict(state))
    else:
        raise ConfigError(f"unknown initial condition type {kind!r}")
    noise = float(init.get("noise", 0.0))
    if noise:
        Q = Q * (1.0 + noise * rng.uniform(-1.0, 1.0, size=Q.shape[0]))[:, None]
    return disc, Q


def _run_density(cfg, mesh, pipeline, report, rng, patches):
    disc, Q = _density_setup(cfg, mesh, rng)
    control = PseudoTimeControl.from_dict(cfg.physics["cfl"])
    tol = cfg.run["convergenceTol"]
    scale = None
    for it in range(1, cfg.run["maxIters"] + 1):
        t0 = time.perf_counter()
        Qn, step = implicit_step(Q, disc, control, it, cfg.linear_solver, cfg.backend, pipeline)
        wall = time.perf_counter() - t0
        norms = step.residual_norms
        if scale is None:
            scale = float(norms.max()) or 1.0
        rel = norms / scale
        forces = {p: disc.pressure_force(Q, p) for p in patches}
        row = {"iteration": it, **{f"res_{v}": float(r) for v, r in zip(VARIABLES, rel)},
               "cfl": float(step.cfl), "halvings": step.halvings, "fallbacks": step.fallbacks,
               "linearIterations": step.report.iterations if step.report else 0,
               **_force_values(patches, forces)}
        report.rows.append(row)
        lin = step.report.timings if step.report else {}
        kt = kernel_timings(step.timings, lin)
        report.timings.append({"iteration": it, **kt, "iterationTime": wall})
        if step.report:
            report.linear.append(step.report.csv_row(it))
        Q = Qn
        if rel.max() < tol:
            report.converged = True
            break
        _progress(cfg, it, rel.max())
    report.summary["finalState"] = {"minDensity": float(Q[:, 0].min()),
                                    "maxDensity": float(Q[:, 0].max())}
    return Q


# -- pressure ---------------------------------------------------------------------
def _pressure_setup(cfg: CaseConfig, mesh, rng, relax=None):
    ph = cfg.physics
    conds = make_patch_conditions(mesh, ph.get("boundaries"))
    disc = PressureDiscretization(mesh, ph["nu"], conds, ph.get("scheme", "upwind"),
                                  reference_pressure=ph.get("referencePressure", 0.0), relax=relax)
    init = ph.get("initial", {})
    st = IncompressibleState.quiescent(mesh, conds, init.get("p", 0.0))
    u0 = np.zeros(3)
    given = np.asarray(init.get("u", [0.0, 0.0, 0.0]), float)
    u0[:len(given)] = given
    st.u[:] = u0
    noise = float(init.get("noise", 0.0))
    if noise:
        st.u[:, :2] += noise * rng.uniform(-1.0, 1.0, size=(mesh.n_cells, 2))
    return disc, st


def _run_pressure(cfg, mesh, pipeline, report, rng, patches):
    simple = cfg.solver == "pressureSimple"
    disc, st = _pressure_setup(cfg, mesh, rng, relax=cfg.physics.get("relaxCoupled"))
    metric = _pressure_setup(cfg, mesh, rng)[0] if simple else None
    monitor = DivergenceMonitor(cfg.physics.get("divergenceFactor", 100.0),
                                cfg.physics.get("stallPatience", 500)) if simple else None
    tol = cfg.run["convergenceTol"]
    for it in range(1, cfg.run["maxIters"] + 1):
        t0 = time.perf_counter()
        if simple:
            new, res = simple_iterate(st, disc, cfg.physics["relaxU"], cfg.physics["relaxP"],
                                      cfg.linear_solver, cfg.backend, pipeline, metric, monitor, it)
        else:
            new, res = coupled_iterate(st, disc, cfg.linear_solver, cfg.backend, pipeline)
        wall = time.perf_counter() - t0 - res.timings.get("residualMonitor", 0.0)
        forces = {p: disc.wall_force(st, p) for p in patches}
        defect = float(np.abs(divergence_check(mesh, st.phi, st.boundary_phi)).max())
        row = {"iteration": it, **{f"res_{c}": float(r) for c, r in zip(COMPONENTS, res.residuals)},
               "continuityMax": defect, "linearIterations": res.report.iterations,
               **_force_values(patches, forces)}
        report.rows.append(row)
        report.timings.append({"iteration": it, **kernel_timings(res.timings, res.report.timings),
                               "iterationTime": wall})
        report.linear.append(res.report.csv_row(it))
        st = new
        if max(res.residuals) < tol:
            report.converged = True
            break
        _progress(cfg, it, max(res.residuals))
    report.summary["continuityDefect"] = float(
        np.abs(divergence_check(mesh, st.phi, st.boundary_phi)).max())
    return st


def _progress(cfg, it, r):
    every = cfg.run.get("reportEvery") or 0
    if every and it % every == 0:
        log.info("%s: iteration %d, max residual %.3e", cfg.name, it, r)


def run_case(cfg: CaseConfig, out_dir=None, deterministic=True, return_state=False):
    """Run the nonlinear loop described by ``cfg`` and write its outputs.

    Output files (when a directory is given): ``config.json`` (materialized),
    ``residuals.csv``, ``timings.csv``, ``linear.csv``, ``report.json`` and
    ``partition.json``.
    """
    cfg.validate()
    mesh = cfg.build_mesh()
    if cfg.ranks > mesh.n_cells:
        raise ConfigError(f"ranks ({cfg.ranks}) exceed the number of cells ({mesh.n_cells})")
    rng = np.random.default_rng(cfg.seed)
    patches = cfg.run.get("forcePatches")
    if patches is None:
        patches = [p.name for p in mesh.patches]
    unknown = set(patches) - {p.name for p in mesh.patches}
    if unknown:
        raise ConfigError(f"forcePatches names unknown patches {sorted(unknown)}")
    if cfg.is_density:
        cols = [f"res_{v}" for v in VARIABLES]
    else:
        cols = [f"res_{c}" for c in COMPONENTS]
    report = RunReport(cfg.name, cfg.solver, cols, _force_columns(patches))
    pipeline = make_pipeline(cfg, deterministic)

    runner = _run_density if cfg.is_density else _run_pressure
    state = runner(cfg, mesh, pipeline, report, rng, patches)

    window = int(cfg.run.get("coefficientWindow", 400))
    report.summary["coefficientsConverged"] = {
        c: coefficient_converged(report.column(c), window, cfg.run.get("coefficientTol", 0.005))
        for c in report.coefficient_columns}
    report.summary["linearSummary"] = _linear_summary(report.linear)
    report.summary["nCells"] = mesh.n_cells

    if isinstance(pipeline, DistributedPipeline) and pipeline.dec is not None:
        part = partition_report(pipeline.dec, pipeline.parts, pipeline.plan, pipeline.engines)
    else:
        part = {"nRanks": 1, "nEngines": 1, "nCells": mesh.n_cells,
                "ranks": [{"rank": 0, "nRows": mesh.n_cells, "nExternalNZ": 0, "engine": 0}]}

    out_dir = out_dir or cfg.output
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        report.write(out)
        (out / "partition.json").write_text(json.dumps(part, indent=2, sort_keys=True) + "\n")
    return (report, state) if return_state else report


def _linear_summary(rows):
    if not rows:
        return {}
    its = [int(r["iterations"]) for r in rows]
    return {"solves": len(rows), "meanIterations": float(np.mean(its)), "maxIterations": max(its),
            "unconverged": sum(1 for r in rows if not int(r["converged"]))}
