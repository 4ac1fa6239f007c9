"""Objective and constraint evaluation with adjoint sensitivities.

Forward pipeline on nodal fields::

    phi --min filter--> phi_tilde --tanh(s)--> rho          (analysis)
                                  --tanh(s_g)--> rho_tilde --max filter--> rho_bar

Compliance and the volume constraint act on ``rho``; the maximum-size
constraint integrates the detector over ``rho_bar``.  All gradients are
Euclidean gradients with respect to the nodal values of ``phi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import StaleFieldError
from .fem import (ElasticityProblem, SparseSystem, assemble_elasticity, compliance_and_strain_energy,
                  element_average, solve)
from .filter import FilterOperator
from .mesh import SimplicialMesh
from .projection import detector, project_analysis, project_geometric


@dataclass
class ConstraintSpec:
    volume_bound: float
    domain_volume: float
    beta: float = 0.90
    bandwidth: float = 0.05
    penalty_exponent: float = 2.0
    violation_bound: Optional[float] = None  # defaults to 1e-3 * domain_volume

    def __post_init__(self):
        if self.violation_bound is None:
            self.violation_bound = 1e-3 * self.domain_volume
        if not 0 < self.volume_bound < 1:
            raise ValueError("volume_bound must lie in (0, 1)")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.bandwidth <= 0 or self.beta + self.bandwidth >= 1:
            raise ValueError("require bandwidth > 0 and beta + bandwidth < 1")
        if self.penalty_exponent < 1:
            raise ValueError("penalty_exponent must be >= 1")
        if not 0 < self.violation_bound < self.domain_volume:
            raise ValueError("violation_bound must lie in (0, domain_volume)")


@dataclass
class DesignState:
    """Forward fields for one design, bound to a mesh version."""
    mesh_version: int
    phi: np.ndarray
    phi_tilde: np.ndarray
    rho: np.ndarray
    rho_tilde: np.ndarray
    rho_bar: np.ndarray
    drho_dphit: np.ndarray
    drhot_dphit: np.ndarray


@dataclass
class EvalBundle:
    F: float
    g1: float
    g2: float
    dF_dphi: np.ndarray
    dg1_dphi: np.ndarray
    dg2_dphi: np.ndarray
    mesh_version: int
    diagnostics: dict = field(default_factory=dict)
    state: Optional[DesignState] = None
    displacement: Optional[np.ndarray] = None


def forward(mesh: SimplicialMesh, phi, min_filter: FilterOperator, max_filter: FilterOperator,
            sharpness: float, geometric_sharpness: float) -> DesignState:
    phi = mesh.check_nodal(phi)
    for op in (min_filter, max_filter):
        if op.mesh_version != mesh.version:
            raise StaleFieldError("filter operator built on a different mesh version")
    phi_tilde = min_filter.apply(phi)
    rho, drho = project_analysis(phi_tilde, sharpness)
    rho_tilde, drhot = project_geometric(phi_tilde, geometric_sharpness)
    rho_bar = max_filter.apply(rho_tilde)
    return DesignState(mesh.version, phi.copy(), phi_tilde, rho, rho_tilde, rho_bar, drho, drhot)


def eval_volume(rho, mesh: SimplicialMesh, spec: ConstraintSpec):
    """Volume-fraction constraint value and gradient with respect to nodal rho."""
    rho = mesh.check_nodal(rho)
    lumped = mesh.lumped_mass
    return float(lumped @ rho) / spec.domain_volume - spec.volume_bound, lumped / spec.domain_volume


def maxsize_integrand(rho_bar, spec: ConstraintSpec):
    """Detector-weighted penalty ``H(rho_bar - beta, h) (rho_bar / beta)^eta`` and its derivative."""
    rho_bar = np.asarray(rho_bar, dtype=float)
    H, dH = detector(rho_bar - spec.beta, spec.bandwidth)
    eta = spec.penalty_exponent
    ratio = np.maximum(rho_bar, 0.0) / spec.beta
    pen = ratio ** eta
    dpen = eta * ratio ** (eta - 1.0) / spec.beta
    return H * pen, dH * pen + H * dpen


def eval_maxsize(rho_bar, mesh: SimplicialMesh, spec: ConstraintSpec):
    """Aggregated maximum-feature-size constraint (nodal quadrature) and its gradient."""
    rho_bar = mesh.check_nodal(rho_bar)
    value, deriv = maxsize_integrand(rho_bar, spec)
    lumped = mesh.lumped_mass
    return float(lumped @ value) - spec.violation_bound, lumped * deriv


def detector_volume(rho_bar, mesh: SimplicialMesh, spec: ConstraintSpec) -> float:
    H, _ = detector(np.asarray(rho_bar) - spec.beta, spec.bandwidth)
    return float(mesh.lumped_mass @ H)


def element_to_nodes(mesh: SimplicialMesh, grad_e) -> np.ndarray:
    """Transpose of element averaging: each element passes 1/(d+1) of its value to each vertex."""
    out = np.zeros(mesh.n_nodes)
    k = mesh.dimension + 1
    np.add.at(out, mesh.elements.ravel(), np.repeat(np.asarray(grad_e) / k, k))
    return out


def eval_compliance(problem: ElasticityProblem, mesh: SimplicialMesh, rho, penalty=None,
                    tol: float = 1e-8, method: str = "cg", full: bool = False):
    """Compliance and its gradient with respect to nodal rho.

    Returns ``(F, dF_drho)``, or ``(F, dF_drho, u)`` when ``full`` is set.
    """
    rho = mesh.check_nodal(rho)
    P = problem.simp_penalty if penalty is None else penalty
    system = assemble_elasticity(mesh, rho, problem, P)
    u = system.expand(solve(system, tol, method))
    F, energy = compliance_and_strain_energy(mesh, rho, problem, u, P)
    rho_e = element_average(mesh, np.clip(rho, 0.0, 1.0))
    dF_e = -P * (1.0 - problem.rho_min) * rho_e ** (P - 1.0) * energy
    grad = element_to_nodes(mesh, dF_e)
    return (F, grad, u) if full else (F, grad)


def chain_to_phi(grad, path: str, state: DesignState, min_filter: FilterOperator,
                 max_filter: Optional[FilterOperator] = None) -> np.ndarray:
    """Back-propagate a nodal gradient on rho ("analysis") or rho_bar ("geometric") to phi."""
    if state is None:
        raise StaleFieldError("no cached forward state")
    if min_filter.mesh_version != state.mesh_version:
        raise StaleFieldError("forward state and filter belong to different meshes")
    grad = np.asarray(grad, dtype=float)
    if path == "analysis":
        return min_filter.transpose(state.drho_dphit * grad)
    if path == "geometric":
        if max_filter is None or max_filter.mesh_version != state.mesh_version:
            raise StaleFieldError("geometric path needs the max-size filter of this mesh")
        return min_filter.transpose(state.drhot_dphit * max_filter.transpose(grad))
    raise ValueError(f"unknown path {path!r}")


def evaluate(mesh: SimplicialMesh, phi, problem: ElasticityProblem, spec: ConstraintSpec,
             min_filter: FilterOperator, max_filter: FilterOperator, sharpness: float,
             geometric_sharpness: float, penalty: Optional[float] = None, maxsize: bool = True,
             tol: float = 1e-8, method: str = "cg") -> EvalBundle:
    """Objective, both constraints and their gradients with respect to phi."""
    state = forward(mesh, phi, min_filter, max_filter, sharpness, geometric_sharpness)
    F, dF_drho, u = eval_compliance(problem, mesh, state.rho, penalty, tol, method, full=True)
    g1, dg1_drho = eval_volume(state.rho, mesh, spec)
    dF = chain_to_phi(dF_drho, "analysis", state, min_filter)
    dg1 = chain_to_phi(dg1_drho, "analysis", state, min_filter)
    if maxsize:
        g2, dg2_drhobar = eval_maxsize(state.rho_bar, mesh, spec)
        dg2 = chain_to_phi(dg2_drhobar, "geometric", state, min_filter, max_filter)
    else:
        g2, dg2 = eval_maxsize(state.rho_bar, mesh, spec)[0], np.zeros(mesh.n_nodes)
    diagnostics = {
        "max_rho_bar": float(state.rho_bar.max()),
        "volume_fraction": g1 + spec.volume_bound,
        "detector_volume": detector_volume(state.rho_bar, mesh, spec),
    }
    return EvalBundle(F, g1, g2, dF, dg1, dg2, mesh.version, diagnostics, state, u)
