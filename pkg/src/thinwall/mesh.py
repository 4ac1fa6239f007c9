"""Conforming simplicial meshes with density-driven bisection adaptivity.

Elements are refined by recursive bisection in the ordered-vertex form
(Maubach / Traxler): an element ``(x0, ..., xd)`` with bisection tag ``k``
is split at the midpoint of edge ``x0-xk``.  Starting from a Kuhn
subdivision of a box this stays conforming under the hanging-node closure
below, and every element is identified by ``(root, code)`` where ``code``
is a binary genealogy path with a leading 1 bit.

Adaptation rebuilds the leaf set from the level-0 roots with per-node
target levels.  Coarsening is therefore the inverse bisection of sibling
pairs: a parent is kept unrefined when none of its descendants asks for
its depth.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidDomainError, StaleFieldError, TransferError

_versions = itertools.count(1)

BOX_FACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


@dataclass(frozen=True)
class _Roots:
    nodes: np.ndarray  # (n0, d)
    order: np.ndarray  # (m0, d+1) bisection vertex order
    tags: np.ndarray  # (m0,) bisection tag in 1..d
    facet_tags: dict  # (root, local vertex opposite the facet) -> region name
    bary_inv: np.ndarray  # (m0, d+1, d+1)


def _barycentric_inverse(coords: np.ndarray) -> np.ndarray:
    """Inverse of [[1 ... 1], [x0 ... xd]] for each simplex in ``coords``."""
    m, k, d = coords.shape
    mat = np.ones((m, k, k))
    mat[:, 1:, :] = np.transpose(coords, (0, 2, 1))
    return np.linalg.inv(mat)


def _facet_table(elements: np.ndarray):
    """Enumerate facets.  Returns sorted facet rows, owner element,
    local opposite vertex, unique-facet index and multiplicity of each row."""
    m, k = elements.shape
    cols = [np.delete(np.arange(k), j) for j in range(k)]
    facets = np.concatenate([elements[:, c] for c in cols])
    owner = np.tile(np.arange(m), k)
    opposite = np.repeat(np.arange(k), m)
    keys = np.sort(facets, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    return facets, owner, opposite, inverse, counts[inverse]


class SimplicialMesh:
    """Conforming triangle (2D) or tetrahedron (3D) mesh.

    ``elements`` are positively oriented; the bisection order used by
    refinement is kept separately.  Instances are treated as immutable: any
    topology change produces a new mesh with a larger ``version``.
    """

    def __init__(self, nodes, order, bisect_tags, element_root, element_code,
                 roots: _Roots, regions: Sequence[str], box=None):
        self.nodes = np.ascontiguousarray(nodes, dtype=float)
        self.dimension = self.nodes.shape[1]
        self._order = np.asarray(order, dtype=np.int64)
        self._bisect_tags = np.asarray(bisect_tags, dtype=np.int64)
        self.element_root = np.asarray(element_root, dtype=np.int64)
        self.element_code = np.asarray(element_code, dtype=np.int64)
        self.element_level = np.array([int(c).bit_length() - 1 for c in self.element_code],
                                      dtype=np.int64)
        self._roots = roots
        self.regions = tuple(regions)
        self.box = box
        self.version = next(_versions)
        self._cache = {}

        elements = self._order.copy()
        vol = self._signed_volumes(elements)
        flip = vol < 0
        elements[flip, 0], elements[flip, 1] = self._order[flip, 1], self._order[flip, 0]
        self.elements = elements
        self._tag_boundary()

    # -- construction helpers -------------------------------------------------

    def _signed_volumes(self, elements):
        x = self.nodes[elements]
        edges = x[:, 1:, :] - x[:, :1, :]
        return np.linalg.det(edges) / math.factorial(self.dimension)

    def _tag_boundary(self):
        facets, owner, opposite, _, mult = _facet_table(self.elements)
        on_boundary = mult == 1
        facets = facets[on_boundary]
        owner = owner[on_boundary]
        roots = self._roots
        root_ids = self.element_root[owner]
        hom = np.ones((len(facets), self.dimension, self.dimension + 1))
        hom[:, :, 1:] = self.nodes[facets]
        # barycentrics of each facet vertex with respect to its root simplex
        lam = np.einsum("fij,fvj->fvi", roots.bary_inv[root_ids], hom)
        zero = np.all(np.abs(lam) < 1e-9, axis=1)
        tags = np.empty(len(facets), dtype=object)
        for i in range(len(facets)):
            hits = np.flatnonzero(zero[i])
            tag = None
            for j in hits:
                tag = roots.facet_tags.get((int(root_ids[i]), int(j)))
                if tag is not None:
                    break
            if tag is None:
                raise InvalidDomainError("boundary facet does not lie on a tagged root facet")
            tags[i] = tag
        order = np.lexsort(np.sort(facets, axis=1).T[::-1])
        self.boundary_facets = facets[order]
        self.boundary_tags = tags[order]

    # -- basic queries ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def element_parent(self) -> list:
        """``(root, code)`` of each element's parent, ``None`` at level 0."""
        return [None if c == 1 else (int(r), int(c) >> 1)
                for r, c in zip(self.element_root, self.element_code)]

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def volumes(self) -> np.ndarray:
        return self._cached("volumes", lambda: self._signed_volumes(self.elements))

    @property
    def centroids(self) -> np.ndarray:
        return self._cached("centroids", lambda: self.nodes[self.elements].mean(axis=1))

    @property
    def bary_inverse(self) -> np.ndarray:
        return self._cached("bary_inv", lambda: _barycentric_inverse(self.nodes[self.elements]))

    @property
    def gradients(self) -> np.ndarray:
        """(m, d+1, d) gradients of the barycentric (P1 hat) functions."""
        return self._cached("grads", lambda: self.bary_inverse[:, :, 1:])

    @property
    def lumped_mass(self) -> np.ndarray:
        def build():
            out = np.zeros(self.n_nodes)
            np.add.at(out, self.elements.ravel(),
                      np.repeat(self.volumes / (self.dimension + 1), self.dimension + 1))
            return out
        return self._cached("lumped", build)

    @property
    def domain_volume(self) -> float:
        return float(self.volumes.sum())

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.nodes.max(axis=0) - self.nodes.min(axis=0)))

    def element_size(self) -> np.ndarray:
        """Edge length of a cube of equal volume, per element."""
        return np.abs(self.volumes) ** (1.0 / self.dimension)

    def boundary_facets_where(self, tag=None, predicate=None) -> np.ndarray:
        """Boundary facets selected by region tag and/or a predicate on facet centroids."""
        mask = np.ones(len(self.boundary_facets), dtype=bool)
        if tag is not None:
            if tag not in self.regions:
                raise KeyError(f"unknown boundary region {tag!r}")
            mask &= self.boundary_tags == tag
        if predicate is not None:
            centers = self.nodes[self.boundary_facets].mean(axis=1)
            mask &= np.asarray(predicate(centers), dtype=bool)
        return self.boundary_facets[mask]

    def nodes_where(self, tag=None, predicate=None) -> np.ndarray:
        if tag is not None:
            idx = np.unique(self.boundary_facets_where(tag).ravel())
        else:
            idx = np.arange(self.n_nodes)
        if predicate is not None:
            idx = idx[np.asarray(predicate(self.nodes[idx]), dtype=bool)]
        return idx

    def check_version(self, version: Optional[int]):
        if version is not None and version != self.version:
            raise StaleFieldError(f"field bound to mesh version {version}, mesh is {self.version}")

    def check_nodal(self, field, version=None) -> np.ndarray:
        self.check_version(version)
        field = np.asarray(field, dtype=float)
        if field.shape != (self.n_nodes,):
            raise StaleFieldError(
                f"nodal field has shape {field.shape}, mesh {self.version} has {self.n_nodes} nodes")
        return field

    # -- invariants ------------------------------------------------------------

    def interior_facet_pairs(self) -> np.ndarray:
        """(k, 2) element pairs sharing a facet."""
        _, owner, _, inverse, mult = _facet_table(self.elements)
        if np.any(mult > 2):
            raise AssertionError("facet shared by more than two elements")
        sel = np.flatnonzero(mult == 2)
        sel = sel[np.argsort(inverse[sel], kind="stable")]
        return owner[sel].reshape(-1, 2)

    def check_invariants(self):
        """Raise AssertionError if any structural invariant is violated."""
        if np.any(self.volumes <= 0):
            raise AssertionError("non-positive element volume")
        _, _, _, _, mult = _facet_table(self.elements)
        if np.any(mult > 2):
            raise AssertionError("facet shared by more than two elements")
        if self.box is not None:
            lo, hi = self.box
            centers = self.nodes[self.boundary_facets].mean(axis=1)
            on_box = np.zeros(len(centers), dtype=bool)
            for a in range(self.dimension):
                on_box |= np.isclose(centers[:, a], lo[a]) | np.isclose(centers[:, a], hi[a])
            if not np.all(on_box):
                raise AssertionError("unmatched facet in the interior (hanging node)")
        if not set(self.boundary_tags.tolist()) <= set(self.regions):
            raise AssertionError("boundary tag outside declared regions")
        pairs = self.interior_facet_pairs()
        lv = self.element_level
        if len(pairs) and np.any(np.abs(lv[pairs[:, 0]] - lv[pairs[:, 1]]) > 1):
            raise AssertionError("grading rule violated")

    # -- point location ----------------------------------------------------------

    def locate(self, points, tol: float = 1e-10):
        """Containing element and barycentric coordinates for each point.

        Points outside every element by at most ``tol * diameter`` are
        snapped to the nearest element; farther points raise TransferError.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        hom = np.ones((n, self.dimension + 1))
        hom[:, 1:] = points
        tree = self._cached("tree", lambda: cKDTree(self.centroids))
        inv = self.bary_inverse
        k = min(12, self.n_elements)
        _, cand = tree.query(points, k=k)
        cand = cand.reshape(n, k)
        lam = np.einsum("pkij,pj->pki", inv[cand], hom)
        score = lam.min(axis=2)
        best = np.argmax(score, axis=1)
        elem = cand[np.arange(n), best]
        bary = lam[np.arange(n), best]
        miss = np.flatnonzero(score[np.arange(n), best] < -1e-12)
        chunk = max(1, 2_000_000 // max(self.n_elements, 1))
        for s in range(0, len(miss), chunk):
            idx = miss[s:s + chunk]
            full = np.einsum("eij,pj->pei", inv, hom[idx])
            sc = full.min(axis=2)
            b = np.argmax(sc, axis=1)
            elem[idx] = b
            bary[idx] = full[np.arange(len(idx)), b]
        outside = np.flatnonzero(bary.min(axis=1) < -1e-12)
        if len(outside):
            clamped = np.clip(bary[outside], 0.0, None)
            clamped /= clamped.sum(axis=1, keepdims=True)
            snapped = np.einsum("pi,pid->pd", clamped, self.nodes[self.elements[elem[outside]]])
            dist = np.linalg.norm(snapped - points[outside], axis=1)
            if np.any(dist > tol * self.diameter):
                worst = outside[np.argmax(dist)]
                raise TransferError(f"point {points[worst]} lies outside the mesh "
                                    f"(distance {dist.max():.3e})")
            bary[outside] = clamped
        return elem, bary


# -- construction -----------------------------------------------------------------

def _make_roots(nodes, order, facet_tags) -> _Roots:
    d = nodes.shape[1]
    order = np.asarray(order, dtype=np.int64)
    return _Roots(nodes=nodes, order=order, tags=np.full(len(order), d, dtype=np.int64),
                  facet_tags=facet_tags, bary_inv=_barycentric_inverse(nodes[order]))


def build_structured(box, dimension: int, cells_per_axis) -> SimplicialMesh:
    """Kuhn-subdivided structured mesh of an axis-aligned box.

    ``box`` is either the extents ``(Lx, Ly[, Lz])`` of a box anchored at
    the origin or a pair ``(lower, upper)`` of corner vectors.
    """
    if dimension not in (2, 3):
        raise InvalidDomainError("dimension must be 2 or 3")
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        lo, hi = np.zeros(dimension), box
    else:
        lo, hi = box[0], box[1]
    cells = np.asarray(cells_per_axis, dtype=int)
    if cells.ndim == 0:
        cells = np.full(dimension, int(cells))
    if cells.shape != (dimension,):
        raise InvalidDomainError("cells_per_axis does not match the dimension")
    if lo.shape != (dimension,) or hi.shape != (dimension,):
        raise InvalidDomainError("box extents do not match the dimension")
    if np.any(hi - lo <= 0):
        raise InvalidDomainError(f"box extents must be positive, got {hi - lo}")
    if np.any(cells < 1):
        raise InvalidDomainError("cells_per_axis must be >= 1 on every axis")

    axes = [np.linspace(lo[a], hi[a], cells[a] + 1) for a in range(dimension)]
    grid = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel(order="F") for g in grid], axis=1)
    strides = np.cumprod([1] + [c + 1 for c in cells[:-1]])

    corner = np.stack(np.meshgrid(*[np.arange(c) for c in cells], indexing="ij"), -1)
    corner = corner.reshape(-1, dimension, order="F")
    base = corner @ strides
    order = []
    for perm in itertools.permutations(range(dimension)):
        verts = [base]
        offset = np.zeros_like(base)
        for a in perm:
            offset = offset + strides[a]
            verts.append(base + offset)
        order.append(np.stack(verts, axis=1))
    order = np.stack(order, axis=1).reshape(-1, dimension + 1)

    facet_tags = {}
    coords = nodes[order]
    for r in range(len(order)):
        for j in range(dimension + 1):
            fc = np.delete(coords[r], j, axis=0)
            for a in range(dimension):
                if np.all(fc[:, a] == lo[a]):
                    facet_tags[(r, j)] = BOX_FACES[2 * a]
                elif np.all(fc[:, a] == hi[a]):
                    facet_tags[(r, j)] = BOX_FACES[2 * a + 1]
    roots = _make_roots(nodes, order, facet_tags)
    m = len(order)
    return SimplicialMesh(nodes, order, roots.tags, np.arange(m), np.ones(m, dtype=np.int64),
                          roots, BOX_FACES[:2 * dimension], box=(lo, hi))


# -- refinement engine ----------------------------------------------------------------

class _Refiner:
    """Mutable bisection forest rebuilt from the roots of a mesh."""

    def __init__(self, roots: _Roots):
        self.d = roots.nodes.shape[1]
        self.coords = [tuple(x) for x in roots.nodes.tolist()]
        self.mid = {}
        self.verts, self.tag, self.root, self.code = [], [], [], []
        self.alive = []
        self.edge_elems = defaultdict(set)
        self.pending = deque()
        for r, (v, t) in enumerate(zip(roots.order.tolist(), roots.tags.tolist())):
            self._add(tuple(v), t, r, 1)

    def _add(self, verts, tag, root, code):
        i = len(self.verts)
        self.verts.append(verts)
        self.tag.append(tag)
        self.root.append(root)
        self.code.append(code)
        self.alive.append(True)
        for a, b in itertools.combinations(verts, 2):
            self.edge_elems[(a, b) if a < b else (b, a)].add(i)
        return i

    def level(self, i):
        return self.code[i].bit_length() - 1

    def bisect(self, i):
        v, k = self.verts[i], self.tag[i]
        a, b = v[0], v[k]
        e = (a, b) if a < b else (b, a)
        z = self.mid.get(e)
        if z is None:
            pa, pb = self.coords[a], self.coords[b]
            z = len(self.coords)
            self.coords.append(tuple((x + y) * 0.5 for x, y in zip(pa, pb)))
            self.mid[e] = z
            self.pending.append(e)
        self.alive[i] = False
        for p, q in itertools.combinations(v, 2):
            self.edge_elems[(p, q) if p < q else (q, p)].discard(i)
        nk = k - 1 if k > 1 else self.d
        c1 = v[:k] + (z,) + v[k + 1:]
        c2 = v[1:k + 1] + (z,) + v[k + 1:]
        r, c = self.root[i], self.code[i]
        return self._add(c1, nk, r, 2 * c), self._add(c2, nk, r, 2 * c + 1)

    def close(self):
        """Bisect until no element contains a split edge."""
        while self.pending:
            e = self.pending.popleft()
            owners = self.edge_elems[e]
            while owners:
                self.bisect(min(owners))

    def refine_to(self, target: dict):
        queue = deque((i, -1) for i in range(len(self.verts)) if self.alive[i])
        while queue:
            i, inherited = queue.popleft()
            # elements created here have no entry of their own and inherit the parent's target
            goal = target.get((self.root[i], self.code[i]), inherited)
            if self.alive[i] and self.level(i) < goal:
                queue.extend((c, goal) for c in self.bisect(i))
        self.close()

    def leaves(self):
        return [i for i, a in enumerate(self.alive) if a]

    def enforce_grading(self):
        while True:
            ids = np.array(self.leaves())
            elems = np.array([self.verts[i] for i in ids])
            _, owner, _, inverse, mult = _facet_table(elems)
            sel = np.flatnonzero(mult == 2)
            sel = sel[np.argsort(inverse[sel], kind="stable")]
            pairs = owner[sel].reshape(-1, 2)
            lv = np.array([self.level(i) for i in ids])
            l0, l1 = lv[pairs[:, 0]], lv[pairs[:, 1]]
            coarse = np.concatenate([pairs[l0 < l1 - 1, 0], pairs[l1 < l0 - 1, 1]])
            if len(coarse) == 0:
                return
            for j in np.unique(coarse):
                if self.alive[ids[j]]:
                    self.bisect(int(ids[j]))
            self.close()

    def to_mesh(self, roots, regions, box) -> SimplicialMesh:
        ids = self.leaves()
        order = np.array([self.verts[i] for i in ids], dtype=np.int64)
        used, remap = np.unique(order, return_inverse=True)
        nodes = np.array(self.coords)[used]
        return SimplicialMesh(nodes, remap.reshape(order.shape),
                              [self.tag[i] for i in ids], [self.root[i] for i in ids],
                              [self.code[i] for i in ids], roots, regions, box)


def _rebuild(mesh: SimplicialMesh, desired: np.ndarray) -> SimplicialMesh:
    target = {}
    for r, c, lvl in zip(mesh.element_root.tolist(), mesh.element_code.tolist(), desired.tolist()):
        while c:
            key = (r, c)
            if target.get(key, -1) >= lvl:
                break
            target[key] = lvl
            c >>= 1
    ref = _Refiner(mesh._roots)
    ref.refine_to(target)
    ref.enforce_grading()
    return ref.to_mesh(mesh._roots, mesh.regions, mesh.box)


def refine_uniform(mesh: SimplicialMesh, levels: int = 1) -> SimplicialMesh:
    """Bisect every element ``levels`` more times (``dimension`` levels halve the mesh size)."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if levels == 0:
        return mesh
    return _rebuild(mesh, mesh.element_level + levels)


# -- indicator and adaptation -----------------------------------------------------------

@dataclass
class ElementIndicator:
    values: np.ndarray
    mesh_version: int


@dataclass
class AdaptConfig:
    alpha: float = 0.1
    growth_rate: float = 1.3
    refine_fraction: float = 0.3
    coarsen_fraction: float = 0.3
    min_level: int = 0
    max_level: int = 4

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.growth_rate <= 0:
            raise ValueError("growth_rate must be positive")
        if self.refine_fraction < 0 or self.coarsen_fraction < 0 or \
                self.refine_fraction + self.coarsen_fraction > 1.0 + 1e-12:
            raise ValueError("refine_fraction + coarsen_fraction must lie in [0, 1]")
        if not 0 <= self.min_level <= self.max_level:
            raise ValueError("require 0 <= min_level <= max_level")


def indicator_peak(alpha: float) -> float:
    """max over rho in [0, 1] of rho * (1 - rho + alpha)."""
    r = 0.5 * (1.0 + alpha)
    return r * (1.0 - r + alpha)


def raw_indicator(rho, alpha):
    rho = np.asarray(rho, dtype=float)
    return rho * (1.0 - rho + alpha)


def error_indicator(mesh: SimplicialMesh, rho, alpha: float, version=None) -> ElementIndicator:
    """Per-element refinement priority from the element-average density, scaled to [0, 1]."""
    rho = mesh.check_nodal(rho, version)
    rho_e = rho[mesh.elements].mean(axis=1)
    w = raw_indicator(rho_e, alpha) / indicator_peak(alpha)
    return ElementIndicator(np.clip(w, 0.0, 1.0), mesh.version)


def adapt(mesh: SimplicialMesh, indicator: ElementIndicator, config: AdaptConfig) -> SimplicialMesh:
    """Refine the highest-indicator elements and merge the lowest-indicator sibling pairs."""
    if indicator.mesh_version != mesh.version:
        raise StaleFieldError("indicator computed on a different mesh version")
    m = mesh.n_elements
    values = np.asarray(indicator.values, dtype=float)
    level = mesh.element_level
    gr = config.growth_rate

    n_refine = int(math.floor(config.refine_fraction * m + 1e-9))
    n_coarsen = int(math.floor(config.coarsen_fraction * m + 1e-9))
    if gr > 1:
        n_refine = min(n_refine, int(math.floor((gr - 1.0) * m + 1e-9)))
        n_coarsen = min(n_coarsen, int(math.floor(2.0 * (1.0 - 1.0 / gr) * m + 1e-9)))

    idx = np.arange(m)
    descending = np.lexsort((idx, -values))
    ascending = np.lexsort((idx, values))

    while True:
        # marked sets are fixed fractions of all elements; members already at a
        # level bound are dropped rather than replaced by lower-ranked elements
        desired = level.copy()
        refine = descending[:n_refine]
        refine = refine[level[refine] < config.max_level]
        desired[refine] += 1
        taken = np.zeros(m, dtype=bool)
        taken[refine] = True
        coarsen = ascending[:n_coarsen]
        coarsen = coarsen[(level[coarsen] > config.min_level) & ~taken[coarsen]]
        desired[coarsen] -= 1
        new = _rebuild(mesh, desired)
        if gr <= 1 or n_refine == 0 or new.n_elements <= 1.2 * gr * m:
            return new
        n_refine //= 2


# -- field transfer -------------------------------------------------------------------

def transfer(field, old: SimplicialMesh, new: SimplicialMesh, bounds=None, version=None) -> np.ndarray:
    """Linear interpolation of a nodal field from ``old`` onto the nodes of ``new``."""
    field = old.check_nodal(field, version)
    if old is new:
        out = field.copy()
    else:
        out = np.empty(new.n_nodes)
        lookup = {row.tobytes(): i for i, row in enumerate(old.nodes)}
        matched = np.array([lookup.get(row.tobytes(), -1) for row in new.nodes], dtype=np.int64)
        hit = matched >= 0
        out[hit] = field[matched[hit]]
        miss = np.flatnonzero(~hit)
        if len(miss):
            elem, bary = old.locate(new.nodes[miss])
            out[miss] = np.einsum("pi,pi->p", bary, field[old.elements[elem]])
    if bounds is not None:
        np.clip(out, bounds[0], bounds[1], out=out)
    return out
