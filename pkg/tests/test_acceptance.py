"""End-to-end acceptance criteria.

Each test records one PASS/FAIL line (see ``conftest.report``); the lines
are repeated in the pytest terminal summary.
"""

import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from oracles import (disc_constrained_2d, gaussian_response_2d, local_thickness, member_widths,
                     quadratic_1d, rasterize, strip_peak_1d)
from test_objectives import ITERATES, gradient_errors
from test_optimizer import run_mma
from thinwall.driver import load_config, parse_config, run
from thinwall.driver.config import replace
from thinwall.driver.diagnostics import DETECTOR_PARAMS, MAX_FACTORS, STRIP_FACTORS, diagnostic_strips
from thinwall.driver.run import resolve
from thinwall.driver.vtk import POINT_FIELDS, mesh_info, read_vtk
from thinwall.filter import FilterOperator
from thinwall.mesh import build_structured
from thinwall.optimizer import ContinuationSchedule
from thinwall.projection import detector, detector_second_derivative

pytestmark = pytest.mark.acceptance

CANTILEVER = "problem = cantilever_2d\nconstraint.volume_fraction = 0.5\n"
SEEDS = (1, 2, 3)


@lru_cache(maxsize=None)
def timed_run(text, **overrides):
    config = parse_config(text)
    if overrides:
        config = replace(config, **{k.replace("__", "."): v for k, v in overrides.items()})
    start = time.perf_counter()
    result = run(config, write_files=False)
    return config, result, time.perf_counter() - start


# -- 1 -------------------------------------------------------------------------------------------

def test_criterion_01_detector(report):
    h = 0.05
    exact = (detector(0.0, h)[0] == 0.5 and detector(h, h)[0] == 1.0 and detector(-h, h)[0] == 0.0
             and detector(h / 2, h)[0] == 0.896484375)
    worst = 0.0
    for hh in (0.015, 0.05, 0.2):
        for edge, outer in ((hh, 1.0), (-hh, 0.0)):
            inner = np.nextafter(edge, 0.0)
            beyond = np.nextafter(edge, 2 * edge)
            for x in (inner, edge, beyond):
                v, d1 = detector(x, hh)
                worst = max(worst, abs(v - outer), abs(d1) * hh,
                            abs(detector_second_derivative(x, hh)) * hh ** 2)
    ok = exact and worst <= 1e-12
    report(1, "detector exactness and C2 at band edges", ok,
           f"values exact={exact}, max scaled jump across +-h={worst:.1e}")
    assert ok


# -- 2 -------------------------------------------------------------------------------------------

def test_criterion_02_filter(report):
    mesh = build_structured((1.0, 1.0), 2, (32, 32))
    op = FilterOperator(mesh, 0.05)
    const_err = np.abs(op.apply(np.full(mesh.n_nodes, 0.37)) - 0.37).max()
    g = np.random.default_rng(0).random(mesh.n_nodes)
    m = np.asarray(op.mass.sum(axis=0)).ravel()
    mass_err = abs(m @ op.apply(g) - m @ g) / abs(m @ g)

    r = 0.05
    strip_err = 0.0
    for a_over_r in (0.5, 1.0, 3.0):
        a = a_over_r * r
        length = 2 * a + 30 * r
        cells = int(round(length / (r / 20)))
        strip = build_structured((length, 2 * length / cells), 2, (cells, 2))
        x = strip.nodes[:, 0] - length / 2
        field = np.where(np.abs(x) < a - 1e-12, 1.0, 0.0)
        field[np.isclose(np.abs(x), a, atol=1e-12)] = 0.5
        peak = FilterOperator(strip, r).apply(field)[np.argmin(np.abs(x))]
        strip_err = max(strip_err, abs(peak / strip_peak_1d(a, r) - 1))

    sigma = 0.1
    dist = np.linalg.norm(mesh.nodes - 0.5, axis=1)
    out = op.apply(np.exp(-0.5 * (dist / sigma) ** 2))
    inner = np.flatnonzero(dist <= 0.2)
    ref = np.array([gaussian_response_2d(d, sigma, 0.05) for d in dist[inner]])
    dense_err = np.max(np.abs(out[inner] - ref) / ref)

    ok = const_err <= 1e-10 and mass_err <= 1e-8 and strip_err <= 0.03 and dense_err <= 0.02
    report(2, "filter correctness", ok,
           f"constant {const_err:.1e}, mass {mass_err:.1e}, strip peak {100 * strip_err:.2f}%, "
           f"free-space interior {100 * dense_err:.2f}%")
    assert ok


# -- 3 -------------------------------------------------------------------------------------------

def test_criterion_03_strip_diagnostics(report):
    start = time.perf_counter()
    rep = diagnostic_strips(resolve(parse_config(CANTILEVER)).features.min_diameter)
    seconds = time.perf_counter() - start
    ordered = True
    for beta, h in DETECTOR_PARAMS:
        for sf in STRIP_FACTORS:
            peaks = [rep.row(mf, beta, h, sf).peak_rho_bar for mf in MAX_FACTORS]
            ordered &= all(p > q for p, q in zip(peaks, peaks[1:]))
    wide = rep.row(2.0, 0.90, 0.05, 4.0).coverage
    narrow = max(rep.row(2.0, 0.90, 0.05, sf).coverage for sf in (1.0, 0.5))
    ok = ordered and wide > 0.5 and narrow < 0.01 and seconds < 60
    report(3, "strip diagnostics", ok,
           f"peak decreasing in R_max={ordered}, coverage 4R={wide:.3f}, "
           f"max coverage R/0.5R={narrow:.4f}, {seconds:.1f}s")
    assert ok


# -- 4 -------------------------------------------------------------------------------------------

def test_criterion_04_gradients(report):
    start = time.perf_counter()
    worst = {}
    for iterate in ITERATES:
        for name, err in gradient_errors(iterate).items():
            worst[name] = max(worst.get(name, 0.0), err)
    seconds = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-3 and seconds < 120
    report(4, "finite-difference gradients (8x8 cantilever, 3 iterates)", ok,
           ", ".join(f"d{k} {v:.1e}" for k, v in worst.items()) + f", {seconds:.1f}s")
    assert ok


# -- 5 -------------------------------------------------------------------------------------------

def settled_after(trace, target, tol):
    """Number of updates after which every later iterate stays within ``tol`` of ``target``."""
    errs = [np.max(np.abs(x - target)) for x in trace]
    outside = [k for k, e in enumerate(errs) if e > tol]
    return (outside[-1] + 2) if outside else 1


def test_criterion_05_mma(report):
    f, df, x1 = quadratic_1d()
    xa, ta = run_mma([0.0], f, df, box=(0.0, 1.0))
    f2, df2, g2, dg2, x2 = disc_constrained_2d()
    xb, tb = run_mma([0.0, 0.0], f2, df2, g2, dg2, box=(0.0, 1.0))
    # run_mma asserts the box, move-limit and subproblem KKT invariants at every step
    err_a, err_b = abs(xa[0] - x1[0]), np.max(np.abs(xb - x2))
    na, nb = settled_after(ta, x1, 1e-4), settled_after(tb, x2, 1e-3)
    ok = err_a <= 1e-4 and na <= 50 and err_b <= 1e-3 and nb <= 50
    report(5, "MMA on analytic problems", ok,
           f"1D within 1e-4 after {na} updates, 2D within 1e-3 after {nb} updates; "
           f"final errors {err_a:.1e}, {err_b:.1e}")
    assert ok


# -- 6 -------------------------------------------------------------------------------------------

def non_monotone_steps(config, log, tol=0.01):
    """Iterations after 5 where F rises by more than ``tol`` at fixed continuation parameters."""
    p, m = config.projection, config.material
    sched = ContinuationSchedule(m.penalty_start, m.penalty_end, m.penalty_ramp_end,
                                 p.sharpness_start, p.sharpness_end, p.geometric_start,
                                 p.geometric_end, p.step_every)
    F = [row["F"] for row in log]
    bad = []
    for k in range(6, len(F)):
        if sched.values(k) != sched.values(k - 1):
            continue  # continuation jump: the objective itself changes
        if F[k] > F[k - 1] * (1 + tol):
            bad.append(k)
    return bad


def test_criterion_06_cantilever_end_to_end(report):
    config, result, seconds = timed_run(CANTILEVER, constraint__maxsize=False)
    bad = non_monotone_steps(config, result.log)
    g1 = result.log[-1]["g1"]
    elements = result.log[-1]["elements"]
    ok = (len(result.log) == 100 and not bad and abs(g1) <= 1e-3 and seconds <= 600
          and 4000 <= elements <= 6500)
    report(6, "cantilever_2d end to end", ok,
           f"{len(result.log)} iterations, {elements} elements, F={result.final_objective:.4g}, "
           f"rises >1% at fixed parameters: {bad or 'none'}, |g1|={abs(g1):.1e}, {seconds:.0f}s")
    assert ok


# -- 7 -------------------------------------------------------------------------------------------

def test_criterion_07_uniform_thickness(report):
    config, result, _ = timed_run(CANTILEVER)
    feats = resolve(config).features
    r_min, r_max = feats.min_diameter, feats.max_diameter
    pixel = r_min / 16
    omega = rasterize(result.mesh, result.state.rho, pixel, resolve(config).extents) > 0.5
    thick = local_thickness(omega, pixel)
    p90 = float(np.percentile(thick[omega], 90))
    widths = member_widths(omega, pixel, prune_length=0.5 * r_min)
    w_min = float(widths.min())
    ok = p90 <= 1.1 * r_max and w_min >= 0.8 * r_min
    report(7, "uniform thickness of the constrained design", ok,
           f"p90 inscribed diameter {p90:.3f} (limit {1.1 * r_max:.3f}), "
           f"min member width {w_min:.3f} (limit {0.8 * r_min:.3f})")
    assert ok


# -- 8 -------------------------------------------------------------------------------------------

def test_criterion_08_constraint_costs_compliance(report):
    pairs = []
    for seed in SEEDS:
        _, free, _ = timed_run(CANTILEVER, seed=seed, init_noise=0.05, constraint__maxsize=False)
        _, held, _ = timed_run(CANTILEVER, seed=seed, init_noise=0.05)
        pairs.append((held.final_objective, free.final_objective))
    ok = all(c >= u for c, u in pairs)
    report(8, "constrained F >= unconstrained F", ok,
           "; ".join(f"seed {s}: {c:.4g} vs {u:.4g}" for s, (c, u) in zip(SEEDS, pairs)))
    assert ok


# -- 9 -------------------------------------------------------------------------------------------

LOW_VOLUME = """\
problem = cantilever_2d
constraint.volume_fraction = 0.15
constraint.maxsize = false
feature.min_diameter = 0.16
feature.max_diameter = 0.32
mesh.cells = 25,13
mesh.initial_level = 3
mesh.max_level = 4
"""


def test_criterion_09_adaptive_payoff(report):
    _, adaptive, _ = timed_run(LOW_VOLUME)
    finest = int(adaptive.mesh.element_level.max())
    matched = 25 * 13 * 2 * 2 ** finest
    # uniform mesh with the finest adaptive element size everywhere, no remeshing
    side = int(round(2 ** (finest / 2)))
    _, uniform, _ = timed_run(LOW_VOLUME, mesh__cells=(25 * side, 13 * side), mesh__initial_level=0,
                              mesh__max_level=0, mesh__remesh_every=0)
    n_ad, n_un = adaptive.mesh.n_elements, uniform.mesh.n_elements
    diff = adaptive.final_objective / uniform.final_objective - 1
    ok = n_un == matched and n_ad <= 0.7 * n_un and abs(diff) <= 0.02
    report(9, "adaptive meshing payoff at V*=0.15", ok,
           f"{n_ad} vs {n_un} uniform elements ({100 * (1 - n_ad / n_un):.0f}% fewer), "
           f"F {adaptive.final_objective:.4g} vs {uniform.final_objective:.4g} ({100 * diff:+.2f}%)")
    assert ok


# -- 10 ------------------------------------------------------------------------------------------

def test_criterion_10_3d_smoke(report, tmp_path):
    config = replace(load_config(Path(__file__).parents[1] / "configs" / "twisted_ball.cfg"),
                     **{"output.snapshot_every": 0})
    start = time.perf_counter()
    result = run(config, out_dir=tmp_path)
    seconds = time.perf_counter() - start
    info = mesh_info(tmp_path / "final.vtk")
    data = read_vtk(tmp_path / "final.vtk")
    vtk_ok = (info["dimension"] == 3 and info["cells"] == result.mesh.n_elements
              and set(data["point_data"]) == set(POINT_FIELDS) and "w" in data["cell_data"]
              and abs(info["volume"] - 1.0) <= 1e-9)
    elements = max(row["elements"] for row in result.log)
    g1 = result.log[-1]["g1"]
    ok = (vtk_ok and elements <= 50_000 and len(result.log) <= 30 and abs(g1) <= 1e-2
          and seconds <= 1800)
    report(10, "3D twisted-ball smoke test", ok,
           f"{len(result.log)} iterations, max {elements} elements, |g1|={abs(g1):.1e}, "
           f"VTK valid={vtk_ok}, {seconds:.0f}s")
    assert ok
