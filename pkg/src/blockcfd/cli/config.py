"""Case configuration: JSON in, validated dataclass out, every default materialized."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..engine.pipeline import BACKENDS, SolverConfig
from ..errors import ConfigError
from ..mesh import Mesh, generate_1d_tube, generate_structured_2d, load_mesh

SOLVERS = ("density", "pressureCoupled", "pressureSimple")

DEFAULT_RUN = {"maxIters": 200, "convergenceTol": 1e-8, "reportEvery": 10,
               "forcePatches": None, "coefficientWindow": 400, "coefficientTol": 0.005}

DEFAULT_DENSITY = {"gamma": 1.4, "R": 287.0, "flux": "roe", "limiter": "BarthJespersen",
                   "firstOrder": False, "initial": {"type": "sod", "x0": 0.5},
                   "freestream": None, "boundaries": {},
                   "cfl": {"start": 1.0, "end": 50.0, "rampIters": 200, "localTimeStepping": True}}

DEFAULT_PRESSURE = {"nu": 0.01, "scheme": "upwind", "boundaries": {}, "relaxU": 0.7, "relaxP": 0.3,
                    "referencePressure": 0.0, "divergenceFactor": 100.0, "stallPatience": 500,
                    "initial": {"u": [0.0, 0.0, 0.0], "p": 0.0}}


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in (given or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and out[k]:
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class CaseConfig:
    """One runnable case. ``to_dict`` gives the fully materialized JSON form."""

    name: str
    solver: str
    mesh: dict
    physics: dict
    linear_solver: SolverConfig = field(default_factory=SolverConfig)
    backend: str = "engine"
    ranks: int = 1
    engines: int = 1
    run: dict = field(default_factory=lambda: dict(DEFAULT_RUN))
    seed: int = 0
    output: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if int(self.ranks) != self.ranks or self.ranks < 1:
            raise ConfigError(f"ranks must be a positive integer, got {self.ranks}")
        if int(self.engines) != self.engines or self.engines < 1:
            raise ConfigError(f"engines must be a positive integer, got {self.engines}")
        if self.engines > self.ranks:
            raise ConfigError(f"engines ({self.engines}) must not exceed ranks ({self.ranks})")
        if self.backend == "host" and self.ranks > 1:
            raise ConfigError("the host backend runs on a single rank")
        mi = self.run.get("maxIters")
        if not isinstance(mi, int) or mi < 1:
            raise ConfigError(f"run.maxIters must be an integer >= 1, got {mi!r}")
        if not self.run.get("convergenceTol", 0) > 0:
            raise ConfigError("run.convergenceTol must be positive")
        if int(self.run.get("coefficientWindow", 1)) < 1:
            raise ConfigError("run.coefficientWindow must be >= 1")
        if "generator" not in self.mesh and "file" not in self.mesh:
            raise ConfigError("mesh needs either 'generator' or 'file'")
        if self.solver != "density":
            if not self.physics.get("nu", 0) > 0:
                raise ConfigError("physics.nu must be positive")
            for key in ("relaxU", "relaxP"):
                if not 0 < self.physics.get(key, 1) <= 1:
                    raise ConfigError(f"physics.{key} must lie in (0, 1]")

    @property
    def is_density(self):
        return self.solver == "density"

    @classmethod
    def from_dict(cls, d, base_dir=None):
        d = dict(d)
        unknown = set(d) - {"name", "solver", "mesh", "physics", "linearSolver", "backend",
                            "partitioning", "run", "seed", "output"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for key in ("solver", "mesh"):
            if key not in d:
                raise ConfigError(f"config is missing {key!r}")
        solver = d["solver"]
        defaults = DEFAULT_DENSITY if solver == "density" else DEFAULT_PRESSURE
        mesh = dict(d["mesh"])
        if "file" in mesh and base_dir is not None and not Path(mesh["file"]).is_absolute():
            mesh["file"] = str(Path(base_dir) / mesh["file"])
        part = d.get("partitioning", {})
        try:
            lin = SolverConfig.from_dict(d.get("linearSolver", {}))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"linearSolver: {exc}") from exc
        return cls(name=d.get("name", "case"), solver=solver, mesh=mesh,
                   physics=_merge(defaults, d.get("physics", {})), linear_solver=lin,
                   backend=d.get("backend", "engine"), ranks=part.get("ranks", 1),
                   engines=part.get("engines", 1), run=_merge(DEFAULT_RUN, d.get("run", {})),
                   seed=d.get("seed", 0), output=d.get("output"))

    def to_dict(self):
        return {"name": self.name, "solver": self.solver, "mesh": copy.deepcopy(self.mesh),
                "physics": copy.deepcopy(self.physics), "linearSolver": self.linear_solver.to_dict(),
                "backend": self.backend,
                "partitioning": {"ranks": self.ranks, "engines": self.engines},
                "run": copy.deepcopy(self.run), "seed": self.seed, "output": self.output}

    def replace(self, **kw):
        """Copy with fields overridden; the copy is validated."""
        return dataclasses.replace(copy.deepcopy(self), **kw)

    def build_mesh(self) -> Mesh:
        m = self.mesh
        if "file" in m:
            return load_mesh(m["file"])
        gen = m["generator"]
        try:
            if gen == "structured2d":
                return generate_structured_2d(m["nx"], m["ny"], m.get("lengths", [1.0, 1.0]),
                                              m.get("patches"))
            if gen == "tube":
                return generate_1d_tube(m["n"], m.get("length", 1.0), m.get("left", "farfield"),
                                        m.get("right", "farfield"))
        except KeyError as exc:
            raise ConfigError(f"mesh generator {gen!r} is missing {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"mesh: {exc}") from exc
        raise ConfigError(f"unknown mesh generator {gen!r}")


def load_config(path) -> CaseConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return CaseConfig.from_dict(data, base_dir=path.parent)
