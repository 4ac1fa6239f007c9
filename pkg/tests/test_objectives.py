import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinwall.driver.problems import get_problem
from thinwall.errors import StaleFieldError
from thinwall.filter import FilterOperator, radius_from_diameter
from thinwall.mesh import build_structured
from thinwall.objectives import (ConstraintSpec, chain_to_phi, element_to_nodes, eval_maxsize,
                                 eval_volume, evaluate, forward)

# (sharpness, geometric sharpness, SIMP penalty, noise seed)
ITERATES = ((1.0, 8.0, 1.0, 0), (4.0, 32.0, 2.0, 1), (16.0, 128.0, 3.0, 2))


def small_cantilever(cells=(8, 8)):
    problem = get_problem("cantilever_2d")
    mesh = build_structured(problem.extents, 2, cells)
    h = max(e / c for e, c in zip(problem.extents, cells))
    fmin = FilterOperator(mesh, radius_from_diameter(1.5 * h))
    fmax = FilterOperator(mesh, radius_from_diameter(3 * h))
    spec = ConstraintSpec(0.5, mesh.domain_volume, 0.9, 0.05, 2.0)
    return problem, mesh, fmin, fmax, spec


def central_differences(fun, x, eps=1e-6):
    out = np.zeros(len(x))
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        out[i] = (fun(xp) - fun(xm)) / (2 * eps)
    return out


def ramp_design(mesh, seed):
    """Solid at the clamped edge, void at the tip, so rho_bar crosses the detector band."""
    noise = np.random.default_rng(seed).normal(0.0, 0.2, mesh.n_nodes)
    return np.clip(0.5 * (1.0 - mesh.nodes[:, 0]) + noise, -1, 1)


def gradient_errors(iterate):
    """Relative max-norm error of each analytic gradient against central differences."""
    problem, mesh, fmin, fmax, spec = small_cantilever()
    s, sg, P, seed = iterate
    elastic = problem.elasticity(mesh, penalty=P)
    phi = ramp_design(mesh, seed)

    def bundle(p):
        return evaluate(mesh, p, elastic, spec, fmin, fmax, s, sg, P, method="direct")

    b = bundle(phi)
    out = {}
    for name, grad in (("F", b.dF_dphi), ("g1", b.dg1_dphi), ("g2", b.dg2_dphi)):
        fd = central_differences(lambda p: getattr(bundle(p), name), phi)
        out[name] = np.abs(grad - fd).max() / np.abs(fd).max()
    return out


@pytest.mark.parametrize("iterate", ITERATES)
def test_gradients_match_finite_differences(iterate):
    errors = gradient_errors(iterate)
    for name, err in errors.items():
        assert err <= 1e-3, (name, err)


def test_volume_examples():
    mesh = build_structured((2.0, 1.0), 2, (4, 2))
    spec = ConstraintSpec(0.5, mesh.domain_volume)
    g, dg = eval_volume(np.full(mesh.n_nodes, 0.5), mesh, spec)
    assert g == pytest.approx(0.0, abs=1e-15)
    assert eval_volume(np.ones(mesh.n_nodes), mesh, spec)[0] == pytest.approx(0.5)
    assert eval_volume(np.zeros(mesh.n_nodes), mesh, spec)[0] == pytest.approx(-0.5)
    assert dg.sum() == pytest.approx(1.0)


def test_maxsize_examples():
    mesh = build_structured((1.0, 1.0), 2, (4, 4))
    spec = ConstraintSpec(0.5, mesh.domain_volume, beta=0.9, bandwidth=0.05, penalty_exponent=2.0)
    below = np.full(mesh.n_nodes, 0.9 - 0.1)
    g, dg = eval_maxsize(below, mesh, spec)
    assert g == pytest.approx(-spec.violation_bound, abs=1e-15)
    assert np.all(dg == 0.0)
    g1, _ = eval_maxsize(np.ones(mesh.n_nodes), mesh, spec)
    assert g1 == pytest.approx(1.0 * (1 / 0.9) ** 2 - spec.violation_bound, rel=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_maxsize_monotone_in_rho_bar(a, b):
    mesh = build_structured((1.0, 1.0), 2, (2, 2))
    spec = ConstraintSpec(0.5, mesh.domain_volume)
    lo, hi = sorted((a, b))
    assert eval_maxsize(np.full(mesh.n_nodes, lo), mesh, spec)[0] <= \
        eval_maxsize(np.full(mesh.n_nodes, hi), mesh, spec)[0]


@pytest.mark.parametrize("kwargs", [dict(volume_bound=1.0), dict(volume_bound=0.5, beta=0.97, bandwidth=0.05),
                                    dict(volume_bound=0.5, penalty_exponent=0.5),
                                    dict(volume_bound=0.5, violation_bound=2.0)])
def test_constraint_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ConstraintSpec(domain_volume=1.0, **kwargs)


def test_element_to_nodes_is_transpose_of_averaging():
    mesh = build_structured((1.0, 1.0), 2, (3, 4))
    rng = np.random.default_rng(0)
    v, ge = rng.random(mesh.n_nodes), rng.random(mesh.n_elements)
    assert ge @ v[mesh.elements].mean(axis=1) == pytest.approx(element_to_nodes(mesh, ge) @ v, rel=1e-13)


def test_zero_gradient_maps_to_zero():
    problem, mesh, fmin, fmax, spec = small_cantilever((4, 4))
    state = forward(mesh, np.zeros(mesh.n_nodes), fmin, fmax, 4.0, 32.0)
    for path in ("analysis", "geometric"):
        assert np.all(chain_to_phi(np.zeros(mesh.n_nodes), path, state, fmin, fmax) == 0.0)
    with pytest.raises(ValueError):
        chain_to_phi(np.zeros(mesh.n_nodes), "other", state, fmin, fmax)


def test_stale_state_rejected():
    problem, mesh, fmin, fmax, spec = small_cantilever((4, 4))
    other = build_structured((2.0, 1.0), 2, (4, 4))
    state = forward(mesh, np.zeros(mesh.n_nodes), fmin, fmax, 1.0, 8.0)
    with pytest.raises(StaleFieldError):
        chain_to_phi(np.ones(mesh.n_nodes), "analysis", state, FilterOperator(other, 0.1))
    with pytest.raises(StaleFieldError):
        chain_to_phi(np.ones(mesh.n_nodes), "analysis", None, fmin)
    with pytest.raises(StaleFieldError):
        forward(other, np.zeros(other.n_nodes), fmin, fmax, 1.0, 8.0)


def test_gradients_stay_finite_at_large_sharpness():
    problem, mesh, fmin, fmax, spec = small_cantilever()
    phi = np.random.default_rng(1).uniform(-1, 1, mesh.n_nodes)
    b = evaluate(mesh, phi, problem.elasticity(mesh), spec, fmin, fmax, 1e4, 1e5)
    for grad in (b.dF_dphi, b.dg1_dphi, b.dg2_dphi):
        assert np.all(np.isfinite(grad))


def test_evaluate_diagnostics_consistent():
    problem, mesh, fmin, fmax, spec = small_cantilever()
    phi = np.random.default_rng(2).uniform(-1, 1, mesh.n_nodes)
    b = evaluate(mesh, phi, problem.elasticity(mesh), spec, fmin, fmax, 2.0, 16.0, maxsize=False)
    assert np.all(b.dg2_dphi == 0.0)
    assert b.diagnostics["max_rho_bar"] == pytest.approx(b.state.rho_bar.max())
    assert b.diagnostics["volume_fraction"] == pytest.approx(b.g1 + 0.5)
    assert b.F > 0
