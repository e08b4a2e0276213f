"""
Conforming triangular meshes with tagged boundary facets.

Cells are stored counter-clockwise. Local edge ``i`` of a cell is the edge
opposite local vertex ``i``, i.e. ``(v[(i+1) % 3], v[(i+2) % 3])``; the
same convention is used for the bisection (refinement) edge and for the
quadratic edge nodes in :mod:`nsslip.fem`.

Example
-------
>>> from nsslip.mesh import build_unit_square, on_line
>>> m = build_unit_square(4, nav_tagger=on_line(y=1.0))
>>> m.n_cells, int((m.facet_tag == NAVIER).sum())
(32, 4)
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Optional

import numpy as np

INTERIOR, DIRICHLET, NAVIER = 0, 1, 2
TAG_NAMES = {DIRICHLET: "D", NAVIER: "NAV"}

#: boundary classification rule: facet midpoints (m, 2) -> boolean mask (m,)
NavTagger = Callable[[np.ndarray], np.ndarray]


class MeshError(ValueError):
    """Raised for invalid mesh input or a failed conformity check."""


def _local_edges(cells: np.ndarray) -> np.ndarray:
    """Return (nc, 3, 2) vertex pairs, edge i opposite local vertex i."""
    return np.stack(
        [cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangular mesh.

    Parameters
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array, counter-clockwise
    boundary_facets : (nb, 2) int array of vertex pairs
    boundary_tags : (nb,) int array with values DIRICHLET or NAVIER
    refinement_edge : (nc,) int array of local edge indices
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    boundary_tags: np.ndarray
    refinement_edge: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices",
                           np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "cells",
                           np.ascontiguousarray(self.cells, dtype=np.int64))
        bf = np.asarray(self.boundary_facets, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "boundary_facets", bf)
        object.__setattr__(self, "boundary_tags",
                           np.asarray(self.boundary_tags, dtype=np.int64))
        object.__setattr__(self, "refinement_edge",
                           np.asarray(self.refinement_edge, dtype=np.int64))
        for arr in (self.vertices, self.cells, self.boundary_facets,
                    self.boundary_tags, self.refinement_edge):
            arr.setflags(write=False)

    def __repr__(self):
        return "Mesh({} vertices, {} cells, {} facets)".format(
            self.n_vertices, self.n_cells, self.n_facets)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    # -- connectivity ---------------------------------------------------
    @cached_property
    def _connectivity(self):
        le = np.sort(_local_edges(self.cells).reshape(-1, 2), axis=1)
        facets, inverse = np.unique(le, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        cell_facets = inverse.reshape(-1, 3)
        cell_ids = np.repeat(np.arange(self.n_cells), 3)
        order = np.lexsort((cell_ids, inverse))
        fsorted, csorted = inverse[order], cell_ids[order]
        first = np.ones(fsorted.size, dtype=bool)
        first[1:] = fsorted[1:] != fsorted[:-1]
        counts = np.bincount(fsorted, minlength=facets.shape[0])
        if np.any(counts > 2):
            raise MeshError("facet shared by more than two cells")
        facet_cells = -np.ones((facets.shape[0], 2), dtype=np.int64)
        facet_cells[fsorted[first], 0] = csorted[first]
        facet_cells[fsorted[~first], 1] = csorted[~first]
        return facets, cell_facets, facet_cells

    @property
    def facets(self) -> np.ndarray:
        """(nf, 2) sorted vertex pairs."""
        return self._connectivity[0]

    @property
    def cell_facets(self) -> np.ndarray:
        """(nc, 3) facet index of local edge i."""
        return self._connectivity[1]

    @property
    def facet_cells(self) -> np.ndarray:
        """(nf, 2) incident cells; column 0 is the owner (lower index), -1 if none."""
        return self._connectivity[2]

    @cached_property
    def facet_tag(self) -> np.ndarray:
        tags = np.full(self.n_facets, INTERIOR, dtype=np.int64)
        if self.boundary_facets.size:
            key = {tuple(f): i for i, f in enumerate(self.facets.tolist())}
            for pair, tag in zip(np.sort(self.boundary_facets, axis=1).tolist(),
                                 self.boundary_tags.tolist()):
                idx = key.get(tuple(pair))
                if idx is None:
                    raise MeshError("boundary facet {} is not a mesh edge".format(pair))
                tags[idx] = tag
        return tags

    def facets_with_tag(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.facet_tag == tag)

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] >= 0)

    # -- geometry -------------------------------------------------------
    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def cell_edge_lengths(self) -> np.ndarray:
        """(nc, 3) length of local edge i."""
        le = _local_edges(self.cells)
        d = self.vertices[le[..., 1]] - self.vertices[le[..., 0]]
        return np.hypot(d[..., 0], d[..., 1])

    @cached_property
    def h_cell(self) -> np.ndarray:
        """Cell diameter, the longest edge."""
        return self.cell_edge_lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.h_cell.max())

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """(nf, 2) unit normals pointing out of the owner cell."""
        a = self.vertices[self.facets[:, 0]]
        b = self.vertices[self.facets[:, 1]]
        d = b - a
        n = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.facet_lengths[:, None]
        owner = self.facet_cells[:, 0]
        centroid = self.vertices[self.cells[owner]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, 0.5 * (a + b) - centroid) < 0
        n[flip] *= -1
        return n

    @property
    def facet_tangents(self) -> np.ndarray:
        """Unit tangents, the normal rotated by +90 degrees."""
        n = self.facet_normals
        return np.stack([-n[:, 1], n[:, 0]], axis=1)

    @cached_property
    def facet_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.facets[:, 0]] + self.vertices[self.facets[:, 1]])

    def facet_local_index(self, facet: int, cell: int) -> int:
        return int(np.flatnonzero(self.cell_facets[cell] == facet)[0])


def facet_geometry(mesh: Mesh, facet: int):
    """Return ``(h_E, n, tau, cells)`` of one facet.

    ``n`` points out of the owner cell (out of the domain on the boundary),
    ``tau`` is ``n`` rotated by +90 degrees, ``cells`` holds the incident
    cells with the owner first.
    """
    cells = [int(c) for c in mesh.facet_cells[facet] if c >= 0]
    return (float(mesh.facet_lengths[facet]), mesh.facet_normals[facet].copy(),
            mesh.facet_tangents[facet].copy(), cells)


def check_conformity(mesh: Mesh) -> None:
    """Raise :class:`MeshError` unless the mesh is valid and conforming.

    A hanging vertex creates one-sided facets in the domain interior, so
    conformity is checked by requiring that the one-sided facets are exactly
    the tagged boundary facets, each tagged once.
    """
    if np.any(mesh.signed_areas <= 0):
        raise MeshError("cell with non-positive signed area")
    fc = mesh.facet_cells  # also enforces at most two cells per facet
    one_sided = set(map(tuple, mesh.facets[fc[:, 1] < 0].tolist()))
    tagged = [tuple(p) for p in np.sort(mesh.boundary_facets, axis=1).tolist()]
    if len(set(tagged)) != len(tagged):
        raise MeshError("boundary facet tagged twice")
    if set(tagged) != one_sided:
        raise MeshError("one-sided facets do not match the tagged boundary "
                        "(hanging vertex or untagged boundary)")
    if not np.all(np.isin(mesh.boundary_tags, (DIRICHLET, NAVIER))):
        raise MeshError("boundary tag must be Dirichlet or Navier")
    used = np.unique(mesh.cells)
    if used.size != mesh.n_vertices:
        raise MeshError("unreferenced vertices")


# -- generators -----------------------------------------------------------

def on_line(x: Optional[float] = None, y: Optional[float] = None,
            tol: float = 1e-12) -> NavTagger:
    """Tagger selecting facets whose midpoint lies on ``x = const`` or ``y = const``."""
    def tagger(mid):
        mask = np.zeros(mid.shape[0], dtype=bool)
        if x is not None:
            mask |= np.abs(mid[:, 0] - x) < tol
        if y is not None:
            mask |= np.abs(mid[:, 1] - y) < tol
        return mask
    return tagger


def any_of(*taggers: NavTagger) -> NavTagger:
    def tagger(mid):
        mask = np.zeros(mid.shape[0], dtype=bool)
        for t in taggers:
            mask |= t(mid)
        return mask
    return tagger


def no_navier(mid):
    return np.zeros(mid.shape[0], dtype=bool)


def _grid_mesh(xs, ys, keep_square, nav_tagger):
    """Structured mesh on the squares of a tensor grid selected by ``keep_square``.

    Each square is split along its lower-left to upper-right diagonal, which
    is also the initial bisection edge of both halves.
    """
    nx, ny = len(xs) - 1, len(ys) - 1
    index = -np.ones((nx + 1, ny + 1), dtype=np.int64)
    squares = [(i, j) for j in range(ny) for i in range(nx) if keep_square(i, j)]
    for i, j in squares:
        index[i:i + 2, j:j + 2] = 0
    jv, iv = np.nonzero(index.T == 0)  # numbered row by row in y
    index[iv, jv] = np.arange(iv.size)
    vertices = np.column_stack([np.asarray(xs)[iv], np.asarray(ys)[jv]])
    cells = []
    for i, j in squares:
        v00, v10 = index[i, j], index[i + 1, j]
        v01, v11 = index[i, j + 1], index[i + 1, j + 1]
        cells.append((v00, v10, v11))
        cells.append((v00, v11, v01))
    cells = np.array(cells, dtype=np.int64)
    ref = np.tile([1, 2], len(squares))
    return _tag_boundary(vertices, cells, ref, nav_tagger)


def _tag_boundary(vertices, cells, ref, nav_tagger):
    le = np.sort(_local_edges(cells).reshape(-1, 2), axis=1)
    facets, counts = np.unique(le, axis=0, return_counts=True)
    bnd = facets[counts == 1]
    mid = 0.5 * (vertices[bnd[:, 0]] + vertices[bnd[:, 1]])
    nav = np.asarray(nav_tagger(mid), dtype=bool) if nav_tagger is not None \
        else np.zeros(len(bnd), dtype=bool)
    tags = np.where(nav, NAVIER, DIRICHLET)
    return Mesh(vertices, cells, bnd, tags, ref)


def build_unit_square(n: int, nav_tagger: Optional[NavTagger] = None) -> Mesh:
    """Uniform ``n x n`` mesh of the unit square, ``2 n^2`` cells of diameter ``sqrt(2)/n``.

    Boundary facets selected by ``nav_tagger`` are Navier, the rest Dirichlet.
    """
    if int(n) != n or n < 1:
        raise ValueError("subdivision count must be a positive integer, got {}".format(n))
    xs = np.linspace(0.0, 1.0, n + 1)
    return _grid_mesh(xs, xs, lambda i, j: True, nav_tagger)


def build_lshape(n: int) -> Mesh:
    """Mesh of ``(-1,1)^2 \\ (-1,0)^2`` with ``n`` subdivisions per unit square.

    Facets on the re-entrant edges ``x = 0`` and ``y = 0`` are Navier.
    """
    if int(n) != n or n < 1:
        raise ValueError("subdivision count must be a positive integer, got {}".format(n))
    xs = np.linspace(-1.0, 1.0, 2 * n + 1)
    keep = lambda i, j: not (i < n and j < n)
    return _grid_mesh(xs, xs, keep, any_of(on_line(x=0.0), on_line(y=0.0)))


def longest_edge_labels(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    le = _local_edges(np.asarray(cells))
    d = vertices[le[..., 1]] - vertices[le[..., 0]]
    return np.argmax(np.hypot(d[..., 0], d[..., 1]), axis=1)


# -- refinement -----------------------------------------------------------

def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Newest-vertex bisection of the marked cells with conforming closure.

    Every marked cell is bisected at least once; neighbours are bisected as
    needed so that the result has no hanging vertices. Child facets of a
    boundary facet inherit its tag.
    """
    marked = np.unique(np.fromiter((int(c) for c in marked), dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.n_cells:
        raise IndexError("marked cell index out of range")

    cells = mesh.cells.tolist()
    ref = mesh.refinement_edge.tolist()
    vertices = mesh.vertices.tolist()

    def key(a, b):
        return (a, b) if a < b else (b, a)

    def ref_edge(c):
        v, i = cells[c], ref[c]
        return key(v[(i + 1) % 3], v[(i + 2) % 3])

    edge_cells = defaultdict(list)
    for c, v in enumerate(cells):
        for i in range(3):
            edge_cells[key(v[(i + 1) % 3], v[(i + 2) % 3])].append(c)

    # closure: a cell with any marked edge must have its bisection edge marked
    to_split = set()
    stack = [ref_edge(int(c)) for c in marked]
    while stack:
        e = stack.pop()
        if e in to_split:
            continue
        to_split.add(e)
        for c in edge_cells[e]:
            r = ref_edge(c)
            if r not in to_split:
                stack.append(r)

    boundary = {key(*f): t for f, t in zip(mesh.boundary_facets.tolist(),
                                            mesh.boundary_tags.tolist())}
    midpoint = {}

    def split_edge(e):
        m = midpoint.get(e)
        if m is None:
            a, b = e
            m = len(vertices)
            vertices.append([0.5 * (vertices[a][0] + vertices[b][0]),
                             0.5 * (vertices[a][1] + vertices[b][1])])
            midpoint[e] = m
            tag = boundary.pop(e, None)
            if tag is not None:
                boundary[key(a, m)] = tag
                boundary[key(m, b)] = tag
        return m

    queue = sorted({c for e in to_split for c in edge_cells[e]})
    while queue:
        c = queue.pop()
        e = ref_edge(c)
        if e not in to_split:
            continue
        i = ref[c]
        v = cells[c]
        a, b, d = v[i], v[(i + 1) % 3], v[(i + 2) % 3]
        m = split_edge(e)
        # children (a, b, m) and (a, m, d); the new vertex m is opposite
        # the next bisection edge of each child
        cells[c] = [a, b, m]
        ref[c] = 2
        cells.append([a, m, d])
        ref.append(1)
        queue.extend([c, len(cells) - 1])

    bfac = np.array(list(boundary.keys()), dtype=np.int64).reshape(-1, 2)
    btag = np.array(list(boundary.values()), dtype=np.int64)
    return Mesh(np.array(vertices), np.array(cells, dtype=np.int64), bfac, btag,
                np.array(ref, dtype=np.int64))


def refine_uniform(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, range(mesh.n_cells))
    return mesh
