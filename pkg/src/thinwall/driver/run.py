"""The optimization loop with periodic mesh adaptation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError
from ..filter import FeatureSizeSpec, FilterOperator
from ..mesh import (AdaptConfig, SimplicialMesh, adapt, build_structured, error_indicator,
                    refine_uniform, transfer)
from ..objectives import ConstraintSpec, DesignState, EvalBundle, evaluate
from ..optimizer import (ContinuationSchedule, History, MmaState, TerminationLimits,
                         check_termination, mma_update)
from ..projection import project_analysis
from .config import RunConfig, serialize
from .problems import get_problem
from .vtk import export_vtk

log = logging.getLogger(__name__)

LOG_HEADER = ("iter", "F", "g1", "g2", "max_rhobar", "elements", "seconds")


@dataclass
class ResolvedSetup:
    """Problem geometry and parameters after ``auto`` defaults are filled in."""
    dimension: int
    extents: tuple
    cells: tuple
    features: FeatureSizeSpec


@dataclass
class RunResult:
    state: Optional[DesignState]
    mesh: SimplicialMesh
    log: list
    reason: str
    artifacts: list = field(default_factory=list)
    bundle: Optional[EvalBundle] = None
    setup: Optional[ResolvedSetup] = None
    failure: Optional[str] = None

    @property
    def final_objective(self) -> float:
        return self.log[-1]["F"]


class RunFailed(RuntimeError):
    def __init__(self, message, result: RunResult):
        super().__init__(message)
        self.result = result


def resolve(config: RunConfig) -> ResolvedSetup:
    """Fill problem-dependent defaults and check geometry-dependent invariants."""
    problem = get_problem(config.problem)
    extents = tuple(config.domain_size or problem.extents)
    cells = tuple(config.mesh.cells or problem.cells)
    if len(extents) != problem.dimension or len(cells) != problem.dimension:
        raise ConfigError(f"{config.problem} is {problem.dimension}D: domain_size and mesh.cells "
                          f"need {problem.dimension} entries (invariant: dimension match)",
                          invariant="dimension match")
    # size of the starting mesh; every ``dimension`` bisection levels halve it
    h0 = max(e / c for e, c in zip(extents, cells)) * 0.5 ** (config.mesh.initial_level
                                                             / problem.dimension)
    lo = config.feature.min_diameter or 4.0 * h0
    hi = config.feature.max_diameter or 2.0 * lo
    if not lo < hi:
        raise ConfigError("feature.max_diameter must exceed feature.min_diameter "
                          "(invariant: R_min < R_max)", invariant="R_min < R_max")
    if not hi < min(extents):
        raise ConfigError(f"max feature diameter {hi:g} must be below the smallest domain extent "
                          f"{min(extents):g} (invariant: R_max < min extent)",
                          invariant="R_max < min extent")
    return ResolvedSetup(problem.dimension, extents, cells, FeatureSizeSpec(lo, hi))


def initial_design(n: int, volume_fraction: float, sharpness: float, noise: float = 0.0,
                   seed: int = 0) -> np.ndarray:
    """Uniform design whose analysis density equals the volume target, plus optional noise."""
    phi = np.full(n, math.atanh(2.0 * volume_fraction - 1.0) / sharpness)
    if noise > 0:
        phi += noise * np.random.default_rng(seed).uniform(-1.0, 1.0, n)
    return np.clip(phi, -1.0, 1.0)


class _Discretization:
    """Mesh-bound operators, rebuilt after every adaptation."""

    def __init__(self, mesh, config: RunConfig, setup: ResolvedSetup):
        m = config.material
        self.mesh = mesh
        self.min_filter = FilterOperator(mesh, setup.features.min_radius)
        self.max_filter = FilterOperator(mesh, setup.features.max_radius)
        self.problem = get_problem(config.problem).elasticity(
            mesh, m.youngs_modulus, m.poisson_ratio, m.rho_min, m.penalty_end)


def _transfer_mma(state: MmaState, old: SimplicialMesh, new: SimplicialMesh):
    """Interpolate asymptotes and iterate history onto the adapted mesh."""
    for name in ("lower", "upper", "x_prev1", "x_prev2"):
        value = getattr(state, name)
        if value is not None:
            setattr(state, name, transfer(value, old, new))
    state.n = new.n_nodes


def _write_log(path: Path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for r in rows:
            writer.writerow([r["iter"]] + ["%.17g" % r[k] for k in ("F", "g1", "g2", "max_rhobar")]
                            + [r["elements"], "%.3f" % r["seconds"]])


def run(config: RunConfig, out_dir=None, write_files: bool = True,
        progress: Optional[Callable[[dict], None]] = None) -> RunResult:
    """Run the optimization described by ``config``.

    Writes ``log.csv``, VTK snapshots and the resolved config under
    ``out_dir`` (default ``config.output.directory``) unless
    ``write_files`` is off.  Any error is re-raised as ``RunFailed`` after
    the log and a ``failure.txt`` record are written.
    """
    setup = resolve(config)
    out = Path(out_dir if out_dir is not None else config.output.directory)
    if write_files:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(serialize(config))

    c, p, o, mc = config.constraint, config.projection, config.optimizer, config.mesh
    schedule = ContinuationSchedule(config.material.penalty_start, config.material.penalty_end,
                                    config.material.penalty_ramp_end, p.sharpness_start,
                                    p.sharpness_end, p.geometric_start, p.geometric_end,
                                    p.step_every)
    limits = TerminationLimits(o.max_iterations, o.objective_tol, o.design_tol, o.patience)
    adapt_cfg = AdaptConfig(mc.alpha, mc.growth_rate, mc.refine_fraction, mc.coarsen_fraction,
                            mc.min_level, mc.max_level)

    mesh = refine_uniform(build_structured(setup.extents, setup.dimension, setup.cells),
                          mc.initial_level)
    V0 = mesh.domain_volume
    spec = ConstraintSpec(c.volume_fraction, V0, c.beta, c.bandwidth, c.eta, c.epsilon_fraction * V0)
    disc = _Discretization(mesh, config, setup)
    phi = initial_design(mesh.n_nodes, c.volume_fraction, p.sharpness_start, config.init_noise,
                         config.seed)
    mma = MmaState(mesh.n_nodes, move=o.move_limit)
    history = History()
    rows, artifacts = [], []
    result = RunResult(None, mesh, rows, "running", artifacts, setup=setup)
    F_scale = None
    change = math.inf
    start = time.perf_counter()

    def snapshot(name, bundle):
        if not write_files:
            return
        w = error_indicator(disc.mesh, bundle.state.rho, mc.alpha).values
        artifacts.append(export_vtk(bundle.state, disc.mesh, out / name, w))

    try:
        k = 0
        while True:
            P, s, sg = schedule.values(k)
            bundle = evaluate(disc.mesh, phi, disc.problem, spec, disc.min_filter, disc.max_filter,
                              s, sg, P, maxsize=c.maxsize, tol=config.solver.tol,
                              method=config.solver.method)
            result.state, result.bundle, result.mesh = bundle.state, bundle, disc.mesh
            row = {"iter": k, "F": bundle.F, "g1": bundle.g1, "g2": bundle.g2,
                   "max_rhobar": bundle.diagnostics["max_rho_bar"],
                   "elements": disc.mesh.n_elements, "seconds": time.perf_counter() - start}
            rows.append(row)
            if progress is not None:
                progress(row)
            log.debug("iter %d F=%.6g g1=%.3g g2=%.3g n=%d", k, bundle.F, bundle.g1, bundle.g2,
                      disc.mesh.n_elements)
            history.record(bundle.F, change)

            status = check_termination(history, limits)
            if status == "converged" and not schedule.is_final(k):
                status = "continue"
            if status != "continue":
                result.reason = status
                break
            if config.output.snapshot_every and k % config.output.snapshot_every == 0:
                snapshot(f"snapshot_{k:04d}.vtk", bundle)

            if F_scale is None:
                F_scale = abs(bundle.F) or 1.0
            g = [bundle.g1]
            dg = [bundle.dg1_dphi]
            if c.maxsize:
                g.append(o.maxsize_scale * bundle.g2 / V0)
                dg.append(o.maxsize_scale * bundle.dg2_dphi / V0)
            if o.move_reference_sharpness > 0:
                # sharper projections amplify a given phi step; keep the density step comparable
                mma.move = o.move_limit * min(1.0, o.move_reference_sharpness / s)
            new_phi = mma_update(mma, phi, bundle.F / F_scale, bundle.dF_dphi / F_scale,
                                 np.array(g), np.array(dg))
            change = float(np.max(np.abs(new_phi - phi)))
            phi = new_phi
            k += 1

            if mc.remesh_every and k % mc.remesh_every == 0:
                _, s_next, _ = schedule.values(k)
                rho_next, _ = project_analysis(disc.min_filter.apply(phi), s_next)
                new_mesh = adapt(disc.mesh, error_indicator(disc.mesh, rho_next, mc.alpha),
                                 adapt_cfg)
                phi = transfer(phi, disc.mesh, new_mesh, bounds=(-1.0, 1.0))
                _transfer_mma(mma, disc.mesh, new_mesh)
                disc = _Discretization(new_mesh, config, setup)
    except Exception as exc:
        result.reason = "failed"
        result.failure = f"{type(exc).__name__}: {exc}"
        if write_files:
            _write_log(out / "log.csv", rows)
            (out / "failure.txt").write_text(
                f"iteration {len(rows)}\n{result.failure}\n")
        raise RunFailed(result.failure, result) from exc

    snapshot("final.vtk", bundle)
    if write_files:
        _write_log(out / "log.csv", rows)
        artifacts.append(out / "log.csv")
    return result
