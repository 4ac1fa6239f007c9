"""Piecewise-linear finite elements on simplicial meshes.

SIMP linear elasticity (plane stress in 2D), the Helmholtz reaction-diffusion
operator used by the density filters, and a Jacobi-preconditioned conjugate
gradient solver with a sparse direct fallback.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConvergenceError, InvalidFieldError, StaleFieldError
from .mesh import SimplicialMesh

Predicate = Callable[[np.ndarray], np.ndarray]


@dataclass
class Dirichlet:
    """Prescribed displacement on a boundary region (tag) and/or a node predicate.

    ``value`` may be a scalar or a callable ``(points) -> (n, len(axes))``.
    """
    tag: Optional[str] = None
    predicate: Optional[Predicate] = None
    axes: Sequence[int] = (0, 1)
    value: Union[float, Callable] = 0.0


@dataclass
class Traction:
    """Surface traction (force per unit boundary measure) on selected boundary facets.

    ``vector`` is constant or a callable ``(facet_centroids) -> (n, d)``.
    """
    vector: Union[Sequence[float], Callable]
    tag: Optional[str] = None
    predicate: Optional[Predicate] = None


@dataclass
class ElasticityProblem:
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    simp_penalty: float = 3.0
    rho_min: float = 1e-6
    dirichlet: list = field(default_factory=list)
    loads: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (0, 0.5)")
        if self.youngs_modulus <= 0:
            raise ValueError("youngs_modulus must be positive")
        if self.simp_penalty < 1:
            raise ValueError("simp_penalty must be >= 1")
        if not 0.0 < self.rho_min < 1.0:
            raise ValueError("rho_min must lie in (0, 1)")

    def modulus(self, rho_e, penalty=None):
        p = self.simp_penalty if penalty is None else penalty
        return self.youngs_modulus * (self.rho_min + (1.0 - self.rho_min) * rho_e ** p)


@dataclass
class SparseSystem:
    """Linear system ``matrix @ x = rhs`` over the free equations.

    ``dof_map[node, axis]`` is the equation index of that dof or -1 when
    it is prescribed; ``prescribed`` holds the full-length prescribed values.
    """
    matrix: sp.csr_matrix
    rhs: Optional[np.ndarray] = None
    dof_map: Optional[np.ndarray] = None
    prescribed: Optional[np.ndarray] = None
    full_matrix: Optional[sp.csr_matrix] = None
    mesh_version: Optional[int] = None

    def expand(self, x) -> np.ndarray:
        """Full dof vector (node-major) from a reduced solution."""
        if self.dof_map is None:
            return np.asarray(x)
        flat = self.dof_map.ravel()
        out = self.prescribed.copy()
        out[flat >= 0] = x[flat[flat >= 0]]
        return out


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("THINWALL_WORKERS", "1")))
    except ValueError:
        return 1


def _assemble(rows: np.ndarray, values: np.ndarray, n: int) -> sp.csr_matrix:
    """Sum element matrices into a CSR matrix.

    ``rows`` is (m, k) global indices, ``values`` is (m, k, k).  Triplets
    from each worker chunk are concatenated in chunk order so the result
    does not depend on the worker count.
    """
    m, k = rows.shape
    chunks = np.array_split(np.arange(m), _workers())

    def triplets(idx):
        r = rows[idx]
        return (np.repeat(r, k, axis=1).ravel(), np.tile(r, (1, k)).ravel(), values[idx].ravel())

    if len(chunks) > 1:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(triplets, chunks))
    else:
        parts = [triplets(chunks[0])]
    i = np.concatenate([p[0] for p in parts])
    j = np.concatenate([p[1] for p in parts])
    v = np.concatenate([p[2] for p in parts])
    return sp.coo_matrix((v, (i, j)), shape=(n, n)).tocsr()


# -- elasticity ---------------------------------------------------------------------

def constitutive_matrix(dimension: int, poisson_ratio: float, youngs_modulus: float = 1.0):
    nu, E = poisson_ratio, youngs_modulus
    if dimension == 2:
        return E / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def strain_displacement(mesh: SimplicialMesh) -> np.ndarray:
    """(m, nstrain, (d+1)*d) engineering-strain B matrices."""
    g = mesh.gradients
    m, k, d = g.shape
    if d == 2:
        B = np.zeros((m, 3, 2 * k))
        B[:, 0, 0::2] = g[:, :, 0]
        B[:, 1, 1::2] = g[:, :, 1]
        B[:, 2, 0::2] = g[:, :, 1]
        B[:, 2, 1::2] = g[:, :, 0]
        return B
    B = np.zeros((m, 6, 3 * k))
    for a in range(3):
        B[:, a, a::3] = g[:, :, a]
    B[:, 3, 1::3] = g[:, :, 2]
    B[:, 3, 2::3] = g[:, :, 1]
    B[:, 4, 0::3] = g[:, :, 2]
    B[:, 4, 2::3] = g[:, :, 0]
    B[:, 5, 0::3] = g[:, :, 1]
    B[:, 5, 1::3] = g[:, :, 0]
    return B


def unit_stiffness(mesh: SimplicialMesh, poisson_ratio: float) -> np.ndarray:
    """Element stiffness matrices for a unit Young's modulus, cached per mesh."""
    key = ("k0", poisson_ratio)

    def build():
        B = strain_displacement(mesh)
        D = constitutive_matrix(mesh.dimension, poisson_ratio)
        return np.abs(mesh.volumes)[:, None, None] * np.einsum("eki,kl,elj->eij", B, D, B)
    return mesh._cached(key, build)


def element_dofs(mesh: SimplicialMesh) -> np.ndarray:
    d = mesh.dimension
    return (mesh.elements[:, :, None] * d + np.arange(d)).reshape(len(mesh.elements), -1)


def check_density(rho, lo=0.0, hi=1.0, tol=1e-12) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if np.any(~np.isfinite(rho)) or rho.min() < lo - tol or rho.max() > hi + tol:
        raise InvalidFieldError(f"density outside [{lo}, {hi}]: [{rho.min()}, {rho.max()}]")
    return np.clip(rho, lo, hi)


def element_average(mesh: SimplicialMesh, nodal) -> np.ndarray:
    return np.asarray(nodal)[mesh.elements].mean(axis=1)


def facet_measures(mesh: SimplicialMesh, facets) -> np.ndarray:
    """Length (2D) or area (3D) of boundary facets given as node index rows."""
    x = mesh.nodes[np.asarray(facets)]
    if len(x) == 0:
        return np.zeros(0)
    if mesh.dimension == 2:
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)


def load_vector(mesh: SimplicialMesh, problem: ElasticityProblem) -> np.ndarray:
    d = mesh.dimension
    f = np.zeros(mesh.n_nodes * d)
    for load in problem.loads:
        facets = mesh.boundary_facets_where(load.tag, load.predicate)
        if len(facets) == 0:
            continue
        measure = facet_measures(mesh, facets)
        if callable(load.vector):
            t = np.asarray(load.vector(mesh.nodes[facets].mean(axis=1)), dtype=float)
        else:
            t = np.broadcast_to(np.asarray(load.vector, dtype=float), (len(facets), d))
        share = (measure / d)[:, None] * t
        for a in range(d):
            np.add.at(f, facets.ravel() * d + a, np.repeat(share[:, a], d))
    return f


def constrained_dofs(mesh: SimplicialMesh, problem: ElasticityProblem):
    """Prescribed dof indices and their values (later entries win on overlap)."""
    d = mesh.dimension
    values = {}
    for bc in problem.dirichlet:
        nodes = mesh.nodes_where(bc.tag, bc.predicate)
        if callable(bc.value):
            vals = np.asarray(bc.value(mesh.nodes[nodes]), dtype=float).reshape(len(nodes), -1)
        else:
            vals = np.full((len(nodes), len(bc.axes)), float(bc.value))
        for col, a in enumerate(bc.axes):
            for n, v in zip(nodes.tolist(), vals[:, col].tolist()):
                values[n * d + a] = v
    dofs = np.array(sorted(values), dtype=np.int64)
    return dofs, np.array([values[i] for i in dofs.tolist()], dtype=float)


def _elasticity_setup(mesh: SimplicialMesh, problem: ElasticityProblem):
    key = ("elasticity_bc", id(problem))

    def build():
        fixed, fixed_vals = constrained_dofs(mesh, problem)
        n = mesh.n_nodes * mesh.dimension
        dof_map = np.full(n, -1, dtype=np.int64)
        free = np.ones(n, dtype=bool)
        free[fixed] = False
        dof_map[free] = np.arange(free.sum())
        prescribed = np.zeros(n)
        prescribed[fixed] = fixed_vals
        return fixed, free, dof_map.reshape(mesh.n_nodes, mesh.dimension), prescribed, \
            load_vector(mesh, problem)
    # the problem object is held alive by the caller; the key is only valid for it
    entry = mesh._cached(key, lambda: (problem, build()))
    return entry[1]


def assemble_elasticity(mesh: SimplicialMesh, rho, problem: ElasticityProblem,
                        penalty: Optional[float] = None) -> SparseSystem:
    """SIMP stiffness with Dirichlet dofs eliminated and tractions in the rhs."""
    rho = check_density(mesh.check_nodal(rho))
    E = problem.modulus(element_average(mesh, rho), penalty)
    k0 = unit_stiffness(mesh, problem.poisson_ratio)
    n = mesh.n_nodes * mesh.dimension
    K = _assemble(element_dofs(mesh), E[:, None, None] * k0, n)
    fixed, free, dof_map, prescribed, f = _elasticity_setup(mesh, problem)
    Kff = K[free][:, free].tocsr()
    rhs = f[free]
    if np.any(prescribed[fixed] != 0):
        rhs = rhs - K[free][:, fixed] @ prescribed[fixed]
    return SparseSystem(Kff, rhs, dof_map, prescribed, K, mesh.version)


def element_stiffness(mesh: SimplicialMesh, rho, problem: ElasticityProblem, penalty=None):
    """(m, nd, nd) SIMP element stiffness matrices, no constraints."""
    rho = check_density(mesh.check_nodal(rho))
    E = problem.modulus(element_average(mesh, rho), penalty)
    return E[:, None, None] * unit_stiffness(mesh, problem.poisson_ratio)


def compliance_and_strain_energy(mesh: SimplicialMesh, rho, problem: ElasticityProblem, u,
                                 penalty=None, version=None):
    """Compliance ``F = 1/2 u^T K(rho) u`` and per-element ``1/2 u_e^T k_e(1) u_e``."""
    mesh.check_version(version)
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes * mesh.dimension,):
        raise StaleFieldError("displacement does not match the mesh")
    rho = check_density(mesh.check_nodal(rho))
    ue = u[element_dofs(mesh)]
    k0 = unit_stiffness(mesh, problem.poisson_ratio)
    energy = 0.5 * problem.youngs_modulus * np.einsum("ei,eij,ej->e", ue, k0, ue)
    E = problem.modulus(element_average(mesh, rho), penalty)
    F = float(np.sum(E / problem.youngs_modulus * energy))
    return F, energy


# -- Helmholtz operator -------------------------------------------------------------------

def laplace_and_mass(mesh: SimplicialMesh):
    """Cached P1 stiffness (of grad . grad) and consistent mass matrices."""
    def build():
        g = mesh.gradients
        vol = np.abs(mesh.volumes)
        d = mesh.dimension
        kl = vol[:, None, None] * np.einsum("eid,ejd->eij", g, g)
        local_mass = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
        me = vol[:, None, None] * local_mass[None]
        return _assemble(mesh.elements, kl, mesh.n_nodes), _assemble(mesh.elements, me, mesh.n_nodes)
    return mesh._cached("laplace_mass", build)


def assemble_helmholtz(mesh: SimplicialMesh, radius: float) -> SparseSystem:
    """Matrix ``r^2 K + M`` with natural (homogeneous Neumann) boundaries."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    K, M = laplace_and_mass(mesh)
    return SparseSystem((radius ** 2 * K + M).tocsr(), mesh_version=mesh.version)


# -- solvers ---------------------------------------------------------------------------

def _direct(A, b):
    return spla.spsolve(sp.csc_matrix(A), b)


def solve(system: SparseSystem, tol: float = 1e-8, method: str = "cg", rhs=None) -> np.ndarray:
    """Solve ``A x = b`` to relative residual ``tol``.

    ``method="cg"`` runs Jacobi-preconditioned CG and switches to a sparse
    direct solve if the residual has not improved for 100 iterations.
    """
    A = system.matrix
    b = np.asarray(system.rhs if rhs is None else rhs, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if method == "direct":
        return _direct(A, b)
    if method != "cg":
        raise ValueError(f"unknown solver method {method!r}")

    diag = A.diagonal()
    if np.any(diag <= 0):
        raise AssemblyError("non-positive diagonal entry")
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    best, stalled = np.inf, 0
    for _ in range(20 * len(b)):
        Ap = A @ p
        curvature = p @ Ap
        if curvature <= 0:
            raise AssemblyError("negative curvature in CG: matrix is not positive definite")
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= tol * bnorm:
            return x
        if rnorm < best:
            best, stalled = rnorm, 0
        else:
            stalled += 1
            if stalled >= 100:
                return _direct(A, b)
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not reach {tol:g} within {20 * len(b)} iterations")


def solve_elasticity(mesh, rho, problem, tol=1e-8, method="cg", penalty=None):
    """Full displacement vector (node-major, ``d`` components per node)."""
    system = assemble_elasticity(mesh, rho, problem, penalty)
    return system.expand(solve(system, tol, method))
