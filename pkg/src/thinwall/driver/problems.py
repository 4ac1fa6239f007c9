"""Built-in benchmark problems.

Geometries are desk-scale approximations of common thin-walled
benchmarks.  Materials are normalized (``E0 = 1``, ``nu = 0.3``) and every
load case carries unit total load (or unit torque for the twist case), so
compliance values compare only within a family of runs.

Loads are rebuilt for each mesh so the resultant stays exactly one after
adaptation changes the facets inside a load patch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import InvalidDomainError
from ..fem import Dirichlet, ElasticityProblem, Traction, facet_measures
from ..mesh import SimplicialMesh

_EPS = 1e-9


@dataclass(frozen=True)
class BuiltinProblem:
    name: str
    dimension: int
    extents: tuple
    cells: tuple
    _bcs: Callable  # (mesh, extents) -> (dirichlet list, load list)

    def elasticity(self, mesh: SimplicialMesh, youngs_modulus=1.0, poisson_ratio=0.3,
                   rho_min=1e-6, penalty=3.0) -> ElasticityProblem:
        dirichlet, loads = self._bcs(mesh, self.extents)
        return ElasticityProblem(youngs_modulus, poisson_ratio, penalty, rho_min, dirichlet, loads)


def _patch_measure(mesh, tag, predicate):
    measure = facet_measures(mesh, mesh.boundary_facets_where(tag, predicate)).sum()
    if measure <= 0:
        raise InvalidDomainError(f"load patch on {tag!r} contains no boundary facets")
    return measure


def _cantilever_2d(mesh, ext):
    L, H = ext
    # at least half a facet so coarse meshes still catch the centre of the edge
    coarsest = facet_measures(mesh, mesh.boundary_facets_where("xmax")).max()
    half = max(0.05 * H, 0.5 * coarsest)

    def patch(c):
        return np.abs(c[:, 1] - 0.5 * H) <= half + _EPS

    area = _patch_measure(mesh, "xmax", patch)
    return ([Dirichlet("xmin", axes=(0, 1))],
            [Traction((0.0, -1.0 / area), "xmax", patch)])


def _sheared_beam(mesh, ext):
    L, W, H = ext

    def edge(c):
        return c[:, 2] <= 0.15 * H + _EPS

    area = _patch_measure(mesh, "xmax", edge)
    return ([Dirichlet("xmin", axes=(0, 1, 2))],
            [Traction((0.0, 0.0, -1.0 / area), "xmax", edge)])


def _twisted_ball(mesh, ext):
    L, W, H = ext
    cx, cy = 0.5 * L, 0.5 * W
    r_fix = 0.2 * min(L, W)

    def base(x):
        return np.hypot(x[:, 0] - cx, x[:, 1] - cy) <= r_fix + _EPS

    def ring(c):
        r = np.hypot(c[:, 0] - cx, c[:, 1] - cy)
        return (r >= 0.25 * min(L, W) - _EPS) & (r <= 0.45 * min(L, W) + _EPS)

    facets = mesh.boundary_facets_where("zmax", ring)
    cent = mesh.nodes[facets].mean(axis=1)
    r2 = (cent[:, 0] - cx) ** 2 + (cent[:, 1] - cy) ** 2
    torque = float(facet_measures(mesh, facets) @ r2)
    if torque <= 0:
        raise InvalidDomainError("twist ring contains no boundary facets")

    def twist(c):
        # tangential traction proportional to radius; unit resultant torque about z
        out = np.zeros((len(c), 3))
        out[:, 0] = -(c[:, 1] - cy) / torque
        out[:, 1] = (c[:, 0] - cx) / torque
        return out

    return ([Dirichlet("zmin", base, axes=(0, 1, 2))], [Traction(twist, "zmax", ring)])


def _multi_cube(mesh, ext):
    L, W, H = ext

    def corner(x):
        return (x[:, 0] <= 0.5 * L + _EPS) & (x[:, 1] <= 0.5 * W + _EPS)

    def patch(c):
        return (np.abs(c[:, 0] - 0.5 * L) <= 0.15 * L + _EPS) & \
            (np.abs(c[:, 1] - 0.5 * W) <= 0.15 * W + _EPS)

    area = _patch_measure(mesh, "zmax", patch)
    t = np.array([1.0, 0.0, -1.0]) / (np.sqrt(2.0) * area)
    return ([Dirichlet("zmin", axes=(2,)), Dirichlet("zmin", corner, axes=(0, 1, 2))],
            [Traction(t, "zmax", patch)])


PROBLEMS = {
    "cantilever_2d": BuiltinProblem("cantilever_2d", 2, (2.0, 1.0), (50, 25), _cantilever_2d),
    "sheared_beam": BuiltinProblem("sheared_beam", 3, (2.0, 0.5, 0.5), (40, 10, 10), _sheared_beam),
    "twisted_ball": BuiltinProblem("twisted_ball", 3, (1.0, 1.0, 1.0), (12, 12, 12), _twisted_ball),
    "multi_cube": BuiltinProblem("multi_cube", 3, (1.0, 1.0, 1.0), (12, 12, 12), _multi_cube),
}


def get_problem(name: str) -> BuiltinProblem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
