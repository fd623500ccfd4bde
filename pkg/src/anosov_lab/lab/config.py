"""Experiment configuration: YAML ingestion and emission."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..cone import LinearMapPhi
from ..spectra import Representation

__all__ = ["ConfigError", "RepresentationSpec", "ExperimentConfig", "ingest_config", "emit_config", "config_from_dict"]

REQUIRED = (
    "name",
    "representations",
    "phi_rows",
    "r",
    "epsilon",
    "T_grid",
    "max_word_length",
    "shard_count",
    "seed",
    "cache_dir",
)


class ConfigError(ValueError):
    """Raised with one message per malformed or missing field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class RepresentationSpec:
    """Generators as row-major nested lists, or paths to whitespace-separated
    matrix files (relative to ``base``)."""

    name: str
    generators: tuple
    base: str = field(default="", compare=False)

    def build(self) -> Representation:
        mats = []
        for g in self.generators:
            if isinstance(g, str):
                mats.append(np.loadtxt(Path(self.base) / g, ndmin=2))
            else:
                mats.append(np.array(g, dtype=float))
        return Representation(self.name, mats)

    def to_dict(self) -> dict:
        return {"name": self.name, "generators": [g if isinstance(g, str) else _lists(g) for g in self.generators]}


def _lists(x):
    if isinstance(x, (list, tuple)):
        return [_lists(y) for y in x]
    return x


def _tuples(x):
    if isinstance(x, (list, tuple)):
        return tuple(_tuples(y) for y in x)
    return float(x) if isinstance(x, (int, float)) and not isinstance(x, bool) else x


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    representations: tuple[RepresentationSpec, ...]
    phi_rows: tuple[tuple[float, ...], ...]
    r: tuple[float, ...]
    epsilon: tuple[float, ...]
    T_grid: tuple[float, ...]
    max_word_length: int
    shard_count: int
    seed: int
    cache_dir: str
    theta: tuple[tuple[int, ...], ...] | None = None
    gap_tol: float = 1e-6
    dilation: float = 0.05
    description: str = ""

    @property
    def d(self) -> int:
        return len(self.phi_rows)

    @property
    def phi(self) -> LinearMapPhi:
        return LinearMapPhi(np.array(self.phi_rows))

    def reps(self) -> list[Representation]:
        return [spec.build() for spec in self.representations]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name}
        if self.description:
            out["description"] = self.description
        out["representations"] = [s.to_dict() for s in self.representations]
        out["phi_rows"] = _lists(self.phi_rows)
        out["r"] = list(self.r)
        out["epsilon"] = list(self.epsilon)
        if self.theta is not None:
            out["theta"] = [list(p) for p in self.theta]
        out["T_grid"] = list(self.T_grid)
        out["max_word_length"] = self.max_word_length
        out["shard_count"] = self.shard_count
        out["seed"] = self.seed
        out["cache_dir"] = self.cache_dir
        out["gap_tol"] = self.gap_tol
        out["dilation"] = self.dilation
        return out


def _grid(value) -> tuple[float, ...]:
    if isinstance(value, dict):
        missing = [k for k in ("start", "step", "num") if k not in value]
        if missing:
            raise ValueError(f"grid needs {', '.join(missing)}")
        start, step, num = float(value["start"]), float(value["step"]), int(value["num"])
        return tuple(round(float(x), 10) for x in start + step * np.arange(num))
    return tuple(float(x) for x in value)


def _validate(raw: dict, base: str) -> ExperimentConfig:
    problems = [f"missing field: {k}" for k in REQUIRED if k not in raw]
    if problems:
        raise ConfigError(problems)
    known = set(REQUIRED) | {"theta", "gap_tol", "dilation", "description"}
    problems += [f"unknown field: {k}" for k in raw if k not in known]

    reps = []
    if not isinstance(raw["representations"], list) or not raw["representations"]:
        problems.append("representations: expected a nonempty list")
    else:
        for i, rep in enumerate(raw["representations"]):
            if not isinstance(rep, dict) or "generators" not in rep:
                problems.append(f"representations[{i}]: needs generators")
                continue
            gens = rep["generators"]
            if not isinstance(gens, list) or not gens:
                problems.append(f"representations[{i}].generators: expected a nonempty list")
                continue
            reps.append(RepresentationSpec(str(rep.get("name", f"rep{i}")), _tuples(gens), base))

    def floats(key):
        try:
            return tuple(float(x) for x in raw[key])
        except (TypeError, ValueError):
            problems.append(f"{key}: expected a list of numbers")
            return ()

    try:
        phi_rows = tuple(tuple(float(x) for x in row) for row in raw["phi_rows"])
        if len({len(row) for row in phi_rows}) != 1:
            problems.append("phi_rows: rows of unequal length")
    except (TypeError, ValueError):
        problems.append("phi_rows: expected a list of numeric rows")
        phi_rows = ()
    r, eps = floats("r"), floats("epsilon")
    try:
        T_grid = _grid(raw["T_grid"])
    except (TypeError, ValueError) as exc:
        problems.append(f"T_grid: {exc}")
        T_grid = ()

    d = len(phi_rows)
    if phi_rows and len(r) != d:
        problems.append(f"r: expected {d} entries")
    if phi_rows and len(eps) != d:
        problems.append(f"epsilon: expected {d} entries")
    if any(e <= 0 for e in eps):
        problems.append("epsilon: entries must be positive")
    if T_grid and np.any(np.diff(T_grid) <= 0):
        problems.append("T_grid: must be increasing")
    ints = {}
    for key in ("max_word_length", "shard_count", "seed"):
        value = raw[key]
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{key}: expected an integer")
        ints[key] = value
    if isinstance(ints["shard_count"], int) and ints["shard_count"] < 1:
        problems.append("shard_count: must be positive")

    theta = raw.get("theta")
    if theta is not None:
        try:
            theta = tuple(tuple(int(s) for s in p) for p in theta)
        except (TypeError, ValueError):
            problems.append("theta: expected a list of sign patterns")
            theta = None
    if problems:
        raise ConfigError(problems)

    cfg = ExperimentConfig(
        name=str(raw["name"]),
        representations=tuple(reps),
        phi_rows=phi_rows,
        r=r,
        epsilon=eps,
        T_grid=T_grid,
        max_word_length=ints["max_word_length"],
        shard_count=ints["shard_count"],
        seed=ints["seed"],
        cache_dir=str(raw["cache_dir"]),
        theta=theta,
        gap_tol=float(raw.get("gap_tol", 1e-6)),
        dilation=float(raw.get("dilation", 0.05)),
        description=str(raw.get("description", "")),
    )
    _check_dimensions(cfg)
    return cfg


def _check_dimensions(cfg: ExperimentConfig) -> None:
    problems = []
    try:
        reps = cfg.reps()
    except (ValueError, OSError) as exc:
        raise ConfigError([f"representations: {exc}"]) from exc
    ranks = {len(rep.generators) for rep in reps}
    if len(ranks) != 1:
        problems.append("representations: generator counts differ")
    width = sum(rep.dimension for rep in reps)
    if cfg.phi_rows and len(cfg.phi_rows[0]) != width:
        problems.append(f"phi_rows: expected rows of length {width}")
    if cfg.theta is not None and any(len(p) != width for p in cfg.theta):
        problems.append(f"theta: expected patterns of length {width}")
    if problems:
        raise ConfigError(problems)


def ingest_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: expected a mapping at top level"])
    return _validate(raw, str(path.parent))


def config_from_dict(raw: dict, base: str = ".") -> ExperimentConfig:
    return _validate(raw, base)


def emit_config(cfg: ExperimentConfig, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None, width=120)
    if path is not None:
        Path(path).write_text(text)
    return text
