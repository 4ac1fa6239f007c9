"""Run configuration: ``key = value`` text files with dotted section keys.

Every key, its default and meaning is listed in ``REFERENCE`` (rendered by
``reference_table()``).  Unknown keys are errors.  ``auto`` selects a
problem-dependent default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import ConfigError


@dataclass
class MaterialConfig:
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    rho_min: float = 1e-6
    penalty_start: float = 1.0
    penalty_end: float = 3.0
    penalty_ramp_end: int = 30


@dataclass
class FeatureConfig:
    min_diameter: Optional[float] = None
    max_diameter: Optional[float] = None


@dataclass
class ConstraintConfig:
    volume_fraction: float = 0.5
    beta: float = 0.90
    bandwidth: float = 0.05
    eta: float = 2.0
    epsilon_fraction: float = 1e-3
    maxsize: bool = True


@dataclass
class ProjectionConfig:
    sharpness_start: float = 1.0
    sharpness_end: float = 64.0
    geometric_start: float = 8.0
    geometric_end: float = 512.0
    step_every: int = 10


@dataclass
class MeshConfig:
    cells: Optional[tuple] = None
    initial_level: int = 0
    alpha: float = 0.1
    growth_rate: float = 1.3
    refine_fraction: float = 0.3
    coarsen_fraction: float = 0.3
    min_level: int = 0
    max_level: int = 2
    remesh_every: int = 10


@dataclass
class OptimizerConfig:
    max_iterations: int = 100
    objective_tol: float = 1e-4
    design_tol: float = 1e-3
    patience: int = 3
    move_limit: float = 0.2
    move_reference_sharpness: float = 2.0
    maxsize_scale: float = 1.0


@dataclass
class SolverConfig:
    method: str = "direct"
    tol: float = 1e-8


@dataclass
class OutputConfig:
    directory: str = "out"
    snapshot_every: int = 10


@dataclass
class RunConfig:
    problem: str = "cantilever_2d"
    seed: int = 0
    init_noise: float = 0.0
    domain_size: Optional[tuple] = None
    material: MaterialConfig = field(default_factory=MaterialConfig)
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


REFERENCE = {
    "problem": "built-in problem: cantilever_2d | sheared_beam | twisted_ball | multi_cube",
    "seed": "RNG seed for the optional initial perturbation",
    "init_noise": "amplitude of uniform noise added to the initial design (0 = uniform start)",
    "domain_size": "box extents, comma separated (auto = problem default)",
    "material.youngs_modulus": "solid Young's modulus E0 (normalized)",
    "material.poisson_ratio": "Poisson ratio",
    "material.rho_min": "modulus floor of the modified SIMP law",
    "material.penalty_start": "SIMP penalty at iteration 0",
    "material.penalty_end": "final SIMP penalty",
    "material.penalty_ramp_end": "iteration by which the penalty reaches its final value",
    "feature.min_diameter": "minimum feature diameter (auto = 4 initial cell sizes)",
    "feature.max_diameter": "maximum feature diameter (auto = 2 x min_diameter)",
    "constraint.volume_fraction": "allowed volume fraction V*",
    "constraint.beta": "detector threshold on the diffused density",
    "constraint.bandwidth": "detector half-width h",
    "constraint.eta": "penalty exponent of the max-size integrand",
    "constraint.epsilon_fraction": "allowed violation integral as a fraction of the domain volume",
    "constraint.maxsize": "enable the maximum-feature-size constraint",
    "projection.sharpness_start": "initial analysis projection sharpness",
    "projection.sharpness_end": "final analysis projection sharpness",
    "projection.geometric_start": "initial geometric projection sharpness",
    "projection.geometric_end": "final geometric projection sharpness",
    "projection.step_every": "iterations between continuation steps",
    "mesh.cells": "initial cells per axis, comma separated (auto = problem default)",
    "mesh.initial_level": "uniform bisection levels applied to the root mesh before the first iteration",
    "mesh.alpha": "indicator parameter controlling refinement in solid regions",
    "mesh.growth_rate": "bound on the element-count ratio per adaptation",
    "mesh.refine_fraction": "fraction of elements marked for refinement",
    "mesh.coarsen_fraction": "fraction of elements marked for coarsening",
    "mesh.min_level": "minimum bisection level",
    "mesh.max_level": "maximum bisection level",
    "mesh.remesh_every": "adaptation cadence in iterations (0 disables adaptation)",
    "optimizer.max_iterations": "iteration budget",
    "optimizer.objective_tol": "relative objective change for convergence",
    "optimizer.design_tol": "max design change for convergence",
    "optimizer.patience": "consecutive iterations below both tolerances",
    "optimizer.move_limit": "MMA move limit as a fraction of the design range",
    "optimizer.move_reference_sharpness": "move limit shrinks as reference/s once s exceeds it (0 = fixed)",
    "optimizer.maxsize_scale": "scale applied to the max-size constraint (in units of V0) for MMA",
    "solver.method": "elasticity solver: cg | direct",
    "solver.tol": "relative residual tolerance of iterative solves",
    "output.directory": "output directory",
    "output.snapshot_every": "VTK snapshot cadence in iterations (0 = final only)",
}

_OPTIONAL_TUPLES = {"domain_size", "mesh.cells"}
_OPTIONAL_FLOATS = {"feature.min_diameter", "feature.max_diameter"}


def _split(key):
    parts = key.split(".")
    return (None, parts[0]) if len(parts) == 1 else (parts[0], parts[1])


def _target(config, key):
    section, name = _split(key)
    return (config if section is None else getattr(config, section)), name


def defaults() -> RunConfig:
    return RunConfig()


def _parse_value(key, text, default, line):
    text = text.strip()
    try:
        if key in _OPTIONAL_TUPLES:
            if text == "auto":
                return None
            kind = int if key == "mesh.cells" else float
            return tuple(kind(v) for v in text.split(","))
        if key in _OPTIONAL_FLOATS:
            return None if text == "auto" else float(text)
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r} for {key}", line=line) from None


def _format_value(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    config = defaults()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in REFERENCE:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", line=lineno)
        seen.add(key)
        obj, name = _target(config, key)
        setattr(obj, name, _parse_value(key, value, getattr(obj, name), lineno))
    validate(config)
    return config


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def serialize(config: RunConfig) -> str:
    lines = []
    for key in REFERENCE:
        obj, name = _target(config, key)
        lines.append(f"{key} = {_format_value(getattr(obj, name))}")
    return "\n".join(lines) + "\n"


def reference_table() -> str:
    base = defaults()
    rows = []
    for key, doc in REFERENCE.items():
        obj, name = _target(base, key)
        rows.append(f"| `{key}` | `{_format_value(getattr(obj, name))}` | {doc} |")
    return "| key | default | meaning |\n|---|---|---|\n" + "\n".join(rows)


def _require(cond, invariant, message):
    if not cond:
        raise ConfigError(f"{message} (invariant: {invariant})", invariant=invariant)


def validate(config: RunConfig):
    """Check invariants that do not depend on the resolved problem geometry."""
    from .problems import PROBLEMS

    _require(config.problem in PROBLEMS, "problem is a built-in",
             f"unknown problem {config.problem!r}")
    m, c, f = config.material, config.constraint, config.feature
    _require(m.youngs_modulus > 0, "E0 > 0", "youngs_modulus must be positive")
    _require(0 < m.poisson_ratio < 0.5, "0 < nu < 0.5", "poisson_ratio out of range")
    _require(0 < m.rho_min < 1, "0 < rho_min << 1", "rho_min out of range")
    _require(1 <= m.penalty_start <= m.penalty_end, "1 <= P_start <= P_end",
             "penalty schedule must be non-decreasing from >= 1")
    _require(0 < c.volume_fraction < 1, "0 < V* < 1", "volume_fraction out of range")
    _require(0 < c.beta < 1, "0 < beta < 1", "beta out of range")
    _require(c.bandwidth > 0 and c.beta + c.bandwidth < 1, "beta + h < 1",
             "detector band must saturate below 1")
    _require(c.eta >= 1, "eta >= 1", "eta must be >= 1")
    _require(0 < c.epsilon_fraction < 1, "0 < eps* << V0", "epsilon_fraction out of range")
    if f.min_diameter is not None:
        _require(f.min_diameter > 0, "R_min > 0", "min_diameter must be positive")
    if f.min_diameter is not None and f.max_diameter is not None:
        _require(f.min_diameter < f.max_diameter, "R_min < R_max",
                 "feature.max_diameter must exceed feature.min_diameter")
    p = config.projection
    _require(0 < p.sharpness_start <= p.sharpness_end, "sharpness non-decreasing",
             "analysis sharpness schedule invalid")
    _require(p.sharpness_start <= p.geometric_start <= p.geometric_end, "s <= s_g non-decreasing",
             "geometric sharpness schedule invalid")
    _require(p.step_every >= 1, "step_every >= 1", "step_every must be positive")
    mc = config.mesh
    _require(0 <= mc.alpha <= 1, "0 <= alpha <= 1", "mesh.alpha out of range")
    _require(mc.growth_rate > 0, "growth_rate > 0", "mesh.growth_rate must be positive")
    _require(mc.refine_fraction >= 0 and mc.coarsen_fraction >= 0
             and mc.refine_fraction + mc.coarsen_fraction <= 1,
             "refine_fraction + coarsen_fraction <= 1", "marking fractions invalid")
    _require(0 <= mc.min_level <= mc.max_level, "min_level <= max_level", "mesh levels invalid")
    _require(mc.min_level <= mc.initial_level <= mc.max_level,
             "min_level <= initial_level <= max_level", "mesh.initial_level out of range")
    _require(mc.remesh_every >= 0, "remesh_every >= 0", "remesh_every must be >= 0")
    if mc.cells is not None:
        _require(all(n >= 1 for n in mc.cells), "cells >= 1", "mesh.cells must be positive")
    o = config.optimizer
    _require(o.max_iterations >= 1, "max_iterations >= 1", "max_iterations must be positive")
    _require(0 < o.move_limit <= 1, "0 < move <= 1", "move_limit out of range")
    _require(o.move_reference_sharpness >= 0, "move reference >= 0",
             "move_reference_sharpness must be >= 0")
    _require(o.maxsize_scale > 0, "maxsize_scale > 0", "maxsize_scale must be positive")
    _require(config.solver.method in ("cg", "direct"), "solver in {cg, direct}",
             "unknown solver method")
    _require(config.solver.tol > 0, "tol > 0", "solver tol must be positive")
    _require(config.output.snapshot_every >= 0, "snapshot_every >= 0", "snapshot cadence invalid")


def replace(config: RunConfig, **dotted) -> RunConfig:
    """Copy of ``config`` with dotted keys (``mesh__cells`` style) overridden."""
    new = dataclasses.replace(config, **{
        name: dataclasses.replace(getattr(config, name))
        for name in ("material", "feature", "constraint", "projection", "mesh", "optimizer",
                     "solver", "output")})
    for key, value in dotted.items():
        obj, name = _target(new, key.replace("__", "."))
        if not hasattr(obj, name):
            raise ConfigError(f"unknown key {key!r}")
        setattr(obj, name, value)
    validate(new)
    return new
