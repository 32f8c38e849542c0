"""Run configuration and deterministic JSON/CSV output."""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
from pathlib import Path

import numpy as np

from .grids import RadialGrid, build_grid
from .penalization import PenalizationParams, select_params
from .problem import DomainLambda, Potential, ProblemSpec


class ConfigError(ValueError):
    pass


DEFAULT_GRID = {"core_end": 4.0, "n_core": 16384, "R_max": 1000.0, "growth": 1.02,
                "far_field": "harmonic"}

DEFAULT_VERIFICATION = {
    "solver_tol": 1e-8,
    "nu": 0.5,
    "R_values": [5.0, 10.0, 20.0],
    "tail_window": [50.0, 300.0],
    "rescaled_window": 10.0,
    "energy_rtol": 0.15,
    "trend_rtol": 0.05,
    "norm_ratio_max": 2.0,
    "rescaled_max": 0.05,
    "slope_range": [-1.3, -0.7],
    "threshold": True,
    "threshold_iterations": 8,
}

DEFAULT_OUTPUT = {"directory": "out", "formats": ["json", "csv"]}


@dataclass
class RunConfig:
    problem: ProblemSpec
    penalization: PenalizationParams | str = "auto"
    grid: dict = field(default_factory=lambda: dict(DEFAULT_GRID))
    sweep: list = field(default_factory=list)
    verification: dict = field(default_factory=lambda: dict(DEFAULT_VERIFICATION))
    output: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUT))

    @property
    def epsilons(self) -> list:
        return [float(e) for e in (self.sweep or self.problem.epsilons)]

    def params(self) -> PenalizationParams:
        if self.penalization == "auto":
            return select_params(self.problem)
        return self.penalization

    def build_grid(self) -> RadialGrid:
        g = self.grid
        return build_grid(g["core_end"], int(g["n_core"]), g["R_max"], self.problem.N,
                          g["growth"])

    @property
    def far_field(self) -> str:
        return self.grid.get("far_field", "harmonic")

    def to_dict(self) -> dict:
        pen = self.penalization if isinstance(self.penalization, str) else self.penalization.to_dict()
        return {"problem": self.problem.to_dict(), "penalization": pen, "grid": dict(self.grid),
                "sweep": list(self.sweep), "verification": dict(self.verification),
                "output": dict(self.output)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            problem = ProblemSpec.from_dict(d["problem"])
            pen = d.get("penalization", "auto")
            if pen != "auto":
                pen = PenalizationParams.from_dict(pen)
            grid = {**DEFAULT_GRID, **d.get("grid", {})}
            ver = {**DEFAULT_VERIFICATION, **d.get("verification", {})}
            out = {**DEFAULT_OUTPUT, **d.get("output", {})}
            sweep = [float(e) for e in d.get("sweep", [])]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc!r}") from None
        unknown = set(d) - {"problem", "penalization", "grid", "sweep", "verification", "output"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if grid["far_field"] not in ("harmonic", "neumann"):
            raise ConfigError("grid.far_field must be 'harmonic' or 'neumann'")
        return cls(problem=problem, penalization=pen, grid=grid, sweep=sweep,
                   verification=ver, output=out)

    def dumps(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.loads(text)


def plateau_config(**overrides) -> RunConfig:
    """Reference problem: N=3, p=4, V = (1+r^2) cutoff on [2,3], K = 1, Lambda = B(0,1)."""
    spec = ProblemSpec(N=3, p=4.0, epsilons=(0.2, 0.1, 0.05),
                       V=Potential.plateau([1.0, 0.0, 1.0], 2.0, 3.0), K=Potential.constant(1.0),
                       lambda_region=DomainLambda(1.0), sigma=0.0, M=1.0)
    cfg = RunConfig(problem=spec)
    for key, val in overrides.items():
        if key in ("grid", "verification", "output"):
            getattr(cfg, key).update(val)
        else:
            setattr(cfg, key, val)
    return cfg


# ---------------------------------------------------------------------------
# deterministic output

def _encode(obj):
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return '"nan"'
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = [f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()]
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON text with every float at 17 significant digits."""
    return _encode(obj) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def write_profile_csv(path, r, columns: dict) -> None:
    names = list(columns)
    data = np.column_stack([np.asarray(r, dtype=float)] + [np.asarray(columns[n], dtype=float)
                                                          for n in names])
    np.savetxt(path, data, delimiter=",", header=",".join(["r"] + names), comments="",
               fmt="%.17g")


def read_profile_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]
