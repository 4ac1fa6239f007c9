"""Helmholtz PDE filters on nodal fields.

A filter of radius ``r`` maps ``g`` to the P1 solution ``y`` of
``-r^2 lap(y) + y = g`` with homogeneous Neumann boundaries, i.e.
``y = A^{-1} M g`` with ``A = r^2 K + M``.  The map is self-adjoint in the
mass inner product, and its Euclidean transpose ``M A^{-1}`` is what turns
nodal gradient vectors back through the filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import InvalidSpecError, StaleFieldError
from .fem import assemble_helmholtz, laplace_and_mass
from .mesh import SimplicialMesh

_EQUIV = 2.0 * math.sqrt(3.0)


def radius_from_diameter(diameter: float) -> float:
    """PDE radius equivalent to a feature diameter: ``R / (2 sqrt(3))``."""
    if diameter < 0:
        raise InvalidSpecError(f"feature diameter must be non-negative, got {diameter}")
    return diameter / _EQUIV


@dataclass(frozen=True)
class FeatureSizeSpec:
    min_diameter: float
    max_diameter: float

    def __post_init__(self):
        if not 0 < self.min_diameter < self.max_diameter:
            raise InvalidSpecError(
                "feature sizes must satisfy 0 < min_diameter < max_diameter "
                f"(got {self.min_diameter}, {self.max_diameter})")

    @property
    def min_radius(self) -> float:
        return radius_from_diameter(self.min_diameter)

    @property
    def max_radius(self) -> float:
        return radius_from_diameter(self.max_diameter)


class FilterOperator:
    """Factorized Helmholtz operator bound to one mesh version."""

    def __init__(self, mesh: SimplicialMesh, radius: float):
        if radius < 0:
            raise InvalidSpecError("filter radius must be non-negative")
        self.mesh_version = mesh.version
        self.n = mesh.n_nodes
        self.radius = float(radius)
        self.matrix = assemble_helmholtz(mesh, radius).matrix
        self.mass = laplace_and_mass(mesh)[1]
        self._solve = spla.factorized(self.matrix.tocsc())

    def _check(self, g, version):
        if version is not None and version != self.mesh_version:
            raise StaleFieldError(
                f"field bound to mesh version {version}, filter to {self.mesh_version}")
        g = np.asarray(g, dtype=float)
        if g.shape != (self.n,):
            raise StaleFieldError(f"field of shape {g.shape} does not match filter with {self.n} nodes")
        return g

    def apply(self, g, version=None) -> np.ndarray:
        g = self._check(g, version)
        return self._solve(self.mass @ g)

    def transpose(self, v, version=None) -> np.ndarray:
        v = self._check(v, version)
        return self.mass @ self._solve(v)


def apply_filter(op: FilterOperator, g, version=None) -> np.ndarray:
    return op.apply(g, version)


def apply_filter_adjoint(op: FilterOperator, g, version=None) -> np.ndarray:
    """Adjoint in the mass inner product; the same solve as ``apply_filter``."""
    return op.apply(g, version)


def apply_filter_transpose(op: FilterOperator, v, version=None) -> np.ndarray:
    """Euclidean transpose ``M A^{-1} v`` for back-propagating nodal gradients."""
    return op.transpose(v, version)
