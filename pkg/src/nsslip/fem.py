"""
Reference bases, quadrature, affine mappings and Lagrange dof maps.

The reference triangle has vertices (0,0), (1,0), (0,1). Quadratic nodes
are ordered vertices first, then the midpoint of local edge i (the edge
opposite vertex i) as node 3 + i.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .mesh import DIRICHLET, Mesh

REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle; weights sum to the reference area 1/2."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def size(self) -> int:
        return self.weights.size


def _from_barycentric(bary, weights, order):
    bary = np.asarray(bary, dtype=float)
    return QuadratureRule(bary[:, 1:].copy(), 0.5 * np.asarray(weights, dtype=float), order)


def _symmetric_7():
    s15 = np.sqrt(15.0)
    a, b = (6.0 - s15) / 21.0, (6.0 + s15) / 21.0
    wa, wb = (155.0 - s15) / 1200.0, (155.0 + s15) / 1200.0
    bary = [[1 / 3, 1 / 3, 1 / 3]]
    w = [9.0 / 40.0]
    for c, wc in ((a, wa), (b, wb)):
        bary += [[1 - 2 * c, c, c], [c, 1 - 2 * c, c], [c, c, 1 - 2 * c]]
        w += [wc] * 3
    return bary, w


def _collapsed_gauss(order):
    # Duffy transform of a tensor Gauss-Legendre rule; the (1 - s) Jacobian
    # raises the degree in s by one
    n = (order + 3) // 2
    g, w = np.polynomial.legendre.leggauss(n)
    g, w = 0.5 * (g + 1.0), 0.5 * w
    s, t = np.meshgrid(g, g, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    x = s.ravel()
    y = (t * (1.0 - s)).ravel()
    weights = (ws * wt * (1.0 - s)).ravel()
    return QuadratureRule(np.column_stack([x, y]), weights, order)


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> QuadratureRule:
    """Quadrature exact for polynomials of total degree ``<= order``."""
    if order < 0:
        raise ValueError("quadrature order must be non-negative")
    if order <= 1:
        return _from_barycentric([[1 / 3, 1 / 3, 1 / 3]], [1.0], 1)
    if order == 2:
        return _from_barycentric([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6],
                                  [1 / 6, 1 / 6, 2 / 3]], [1 / 3] * 3, 2)
    if order <= 5:
        return _from_barycentric(*_symmetric_7(), 5)
    return _collapsed_gauss(order)


@lru_cache(maxsize=None)
def line_rule(order: int):
    """Gauss-Legendre points on [0, 1] with weights summing to 1."""
    n = max(1, order // 2 + 1)
    g, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (g + 1.0), 0.5 * w


# -- shape functions --------------------------------------------------------

_BARY_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def n_local(degree: int) -> int:
    if degree == 1:
        return 3
    if degree == 2:
        return 6
    raise ValueError("unsupported polynomial degree {}".format(degree))


def reference_nodes(degree: int) -> np.ndarray:
    if degree == 1:
        return REFERENCE_VERTICES.copy()
    if degree == 2:
        v = REFERENCE_VERTICES
        mids = np.array([0.5 * (v[1] + v[2]), 0.5 * (v[2] + v[0]), 0.5 * (v[0] + v[1])])
        return np.vstack([v, mids])
    raise ValueError("unsupported polynomial degree {}".format(degree))


def shape_functions(degree: int, points):
    """Evaluate the reference Lagrange basis.

    Parameters
    ----------
    degree : int
        1 or 2.
    points : (nq, 2) array_like
        Reference coordinates.

    Returns
    -------
    values : (nq, nb)
    gradients : (nq, nb, 2)
    hessians : (nq, nb, 2, 2)
    """
    nb = n_local(degree)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nq = pts.shape[0]
    lam = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    G = _BARY_GRAD
    if degree == 1:
        vals = lam
        grads = np.broadcast_to(G, (nq, 3, 2)).copy()
        hess = np.zeros((nq, 3, 2, 2))
        return vals, grads, hess
    vals = np.empty((nq, nb))
    grads = np.empty((nq, nb, 2))
    hess = np.empty((nq, nb, 2, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * G[i]
        hess[:, i] = 4.0 * np.outer(G[i], G[i])
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        vals[:, 3 + i] = 4.0 * lam[:, j] * lam[:, k]
        grads[:, 3 + i] = 4.0 * (lam[:, k, None] * G[j] + lam[:, j, None] * G[k])
        hess[:, 3 + i] = 4.0 * (np.outer(G[j], G[k]) + np.outer(G[k], G[j]))
    return vals, grads, hess


# -- affine maps --------------------------------------------------------------

def affine_maps(vertices: np.ndarray, cells: np.ndarray):
    """Return ``(x0, J, detJ, invJ)`` of the maps ``x = x0 + J xhat``."""
    p = vertices[cells]
    x0 = p[:, 0]
    J = np.stack([p[:, 1] - x0, p[:, 2] - x0], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(np.abs(det) <= 1e-14 * np.max(np.abs(J), axis=(1, 2)) ** 2):
        raise ValueError("degenerate (zero-area) cell")
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    return x0, J, det, inv


def map_to_physical(J, invJ, ref_grads, ref_hess=None):
    """Push reference derivatives forward through affine maps.

    ``J``/``invJ`` are (nc, 2, 2); ``ref_grads`` (nq, nb, 2) and
    ``ref_hess`` (nq, nb, 2, 2) are shared by all cells or already
    per cell with a leading (nc,) axis.

    Returns physical gradients ``grad = invJ^T ghat`` of shape (nc, nq, nb, 2)
    and, if requested, Hessians ``invJ^T Hhat invJ`` of shape (nc, nq, nb, 2, 2).
    """
    if ref_grads.ndim == 3:
        grads = np.einsum("qbj,cjk->cqbk", ref_grads, invJ)
    else:
        grads = np.einsum("cqbj,cjk->cqbk", ref_grads, invJ)
    if ref_hess is None:
        return grads
    if ref_hess.ndim == 4:
        hess = np.einsum("cjk,qbjl,clm->cqbkm", invJ, ref_hess, invJ)
    else:
        hess = np.einsum("cjk,cqbjl,clm->cqbkm", invJ, ref_hess, invJ)
    return grads, hess


def to_reference(x0, invJ, points):
    """Reference coordinates of physical points (nc, nq, 2) in cells (nc,)."""
    return np.einsum("cij,cqj->cqi", invJ, points - x0[:, None, :])


# -- spaces ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Space:
    """Equal-order continuous Lagrange space for velocity and pressure.

    Scalar nodes are numbered vertices first, then (degree 2) edges. The
    global unknown vector is ``[u_x (N), u_y (N), p (N)]``.
    """

    mesh: Mesh
    degree: int

    def __post_init__(self):
        n_local(self.degree)

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(nc, nb) scalar node indices."""
        if self.degree == 1:
            return self.mesh.cells.copy()
        return np.hstack([self.mesh.cells, self.mesh.n_vertices + self.mesh.cell_facets])

    @property
    def n_nodes(self) -> int:
        if self.degree == 1:
            return self.mesh.n_vertices
        return self.mesh.n_vertices + self.mesh.n_facets

    @property
    def n_dofs_pressure(self) -> int:
        return self.n_nodes

    @property
    def n_dofs_velocity(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    @cached_property
    def velocity_dofs(self) -> np.ndarray:
        """(nc, 2 nb) global velocity dofs, x components first."""
        c = self.cell_dofs
        return np.hstack([c, self.n_nodes + c])

    @cached_property
    def pressure_dofs(self) -> np.ndarray:
        return 2 * self.n_nodes + self.cell_dofs

    @cached_property
    def local_to_global(self) -> np.ndarray:
        """(nc, 3 nb) ordering ``[u_x, u_y, p]`` of the local element vector."""
        return np.hstack([self.velocity_dofs, self.pressure_dofs])

    @cached_property
    def node_coordinates(self) -> np.ndarray:
        m = self.mesh
        if self.degree == 1:
            return m.vertices.copy()
        return np.vstack([m.vertices, m.facet_midpoints])

    @cached_property
    def geometry(self):
        return affine_maps(self.mesh.vertices, self.mesh.cells)

    def facet_nodes(self, facets) -> np.ndarray:
        """Scalar nodes lying on the closure of the given facets."""
        facets = np.asarray(facets, dtype=np.int64)
        nodes = [self.mesh.facets[facets].ravel()]
        if self.degree == 2:
            nodes.append(self.mesh.n_vertices + facets)
        return np.unique(np.concatenate(nodes)) if facets.size else np.zeros(0, np.int64)

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        return self.facet_nodes(self.mesh.facets_with_tag(DIRICHLET))

    @cached_property
    def dirichlet_dofs(self) -> np.ndarray:
        nodes = self.dirichlet_nodes
        return np.concatenate([nodes, self.n_nodes + nodes])

    def interpolate_scalar(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(points (n,2)) -> (n,)``."""
        return np.asarray(func(self.node_coordinates), dtype=float)

    def interpolate(self, velocity=None, pressure=None) -> np.ndarray:
        """Coefficient vector from ``velocity(points)->(n,2)`` and ``pressure(points)->(n,)``."""
        x = np.zeros(self.n_dofs)
        N = self.n_nodes
        pts = self.node_coordinates
        if velocity is not None:
            u = np.asarray(velocity(pts), dtype=float)
            x[:N], x[N:2 * N] = u[:, 0], u[:, 1]
        if pressure is not None:
            x[2 * N:] = np.asarray(pressure(pts), dtype=float)
        return x

    @cached_property
    def pressure_mass(self) -> np.ndarray:
        """Vector of integrals of the scalar basis functions."""
        rule = triangle_rule(self.degree)
        vals, _, _ = shape_functions(self.degree, rule.points)
        _, _, det, _ = self.geometry
        local = np.abs(det)[:, None] * (rule.weights @ vals)[None, :]
        return np.bincount(self.cell_dofs.ravel(), weights=local.ravel(),
                           minlength=self.n_nodes)


def build_space(mesh: Mesh, degree: int) -> Space:
    return Space(mesh, degree)


class CellEvaluator:
    """Basis data at reference points for a batch of cells.

    Attributes hold physical gradients (nc, nq, nb, 2), Hessians
    (nc, nq, nb, 2, 2) or ``None`` for linears, reference values
    (nq, nb) or per-cell (nc, nq, nb), quadrature weights times ``|det J|``
    and physical points.
    """

    def __init__(self, space: Space, cells, ref_points, ref_weights=None, hessians=True):
        cells = np.asarray(cells, dtype=np.int64)
        x0, J, det, invJ = (a[cells] for a in space.geometry)
        self.cells = cells
        self.dofs = space.cell_dofs[cells]
        ref_points = np.asarray(ref_points, dtype=float)
        if ref_points.ndim == 2:
            vals, g, h = shape_functions(space.degree, ref_points)
            self.points = x0[:, None, :] + np.einsum("cij,qj->cqi", J, ref_points)
        else:
            nc, nq = ref_points.shape[:2]
            vals, g, h = shape_functions(space.degree, ref_points.reshape(-1, 2))
            nb = vals.shape[1]
            vals = vals.reshape(nc, nq, nb)
            g = g.reshape(nc, nq, nb, 2)
            h = h.reshape(nc, nq, nb, 2, 2)
            self.points = x0[:, None, :] + np.einsum("cij,cqj->cqi", J, ref_points)
        self.values = vals
        want_hess = hessians and space.degree > 1
        if want_hess:
            self.grads, self.hessians = map_to_physical(J, invJ, g, h)
        else:
            self.grads = map_to_physical(J, invJ, g)
            self.hessians = None
        if ref_weights is not None:
            self.weights = np.abs(det)[:, None] * np.asarray(ref_weights)[None, :]
        self.h = space.mesh.h_cell[cells]

    def scalar(self, coeffs):
        """Values and gradients of a scalar field given by nodal coefficients."""
        c = coeffs[self.dofs]
        if self.values.ndim == 2:
            v = c @ self.values.T
        else:
            v = np.einsum("cb,cqb->cq", c, self.values)
        g = np.einsum("cb,cqbk->cqk", c, self.grads)
        return v, g

    def scalar_hessian(self, coeffs):
        if self.hessians is None:
            return np.zeros(self.grads.shape[:2] + (2, 2))
        return np.einsum("cb,cqbkl->cqkl", coeffs[self.dofs], self.hessians)

    def velocity(self, x, n_nodes):
        """Velocity (nc, nq, 2) and gradient (nc, nq, 2, 2) with ``G[k, l] = d u_k / d x_l``."""
        ux, gx = self.scalar(x[:n_nodes])
        uy, gy = self.scalar(x[n_nodes:2 * n_nodes])
        return np.stack([ux, uy], axis=-1), np.stack([gx, gy], axis=-2)

    def velocity_hessian(self, x, n_nodes):
        return np.stack([self.scalar_hessian(x[:n_nodes]),
                         self.scalar_hessian(x[n_nodes:2 * n_nodes])], axis=2)


class FacetEvaluator(CellEvaluator):
    """Basis data of one incident cell at Gauss points of the given facets.

    ``side`` 0 uses the owner cell, 1 the neighbour. Points are matched
    physically so both sides share the same quadrature points.
    """

    def __init__(self, space: Space, facets, order, side=0, hessians=False):
        mesh = space.mesh
        facets = np.asarray(facets, dtype=np.int64)
        t, w = line_rule(order)
        ends = mesh.vertices[mesh.facets[facets]]
        phys = ends[:, None, 0, :] * (1.0 - t)[None, :, None] + ends[:, None, 1, :] * t[None, :, None]
        cells = mesh.facet_cells[facets, side]
        if np.any(cells < 0):
            raise ValueError("facet has no cell on the requested side")
        x0, _, _, invJ = (a[cells] for a in space.geometry)
        ref = to_reference(x0, invJ, phys)
        super().__init__(space, cells, ref, hessians=hessians)
        self.points = phys
        self.facets = facets
        self.weights = mesh.facet_lengths[facets][:, None] * w[None, :]
        self.normals = mesh.facet_normals[facets]
        self.tangents = mesh.facet_tangents[facets]
        self.h_facet = mesh.facet_lengths[facets]


# -- point location -------------------------------------------------------------

def locate_points(mesh: Mesh, points, tol: float = 1e-10):
    """Cell containing each point and its reference coordinates.

    Cells are binned into a uniform grid of buckets by bounding box; each
    point is tested against the cells of its bucket. A point on a shared
    edge goes to the candidate with the largest minimum barycentric
    coordinate. Returns ``(cells, ref)`` with ``cells = -1`` for points
    outside the mesh (beyond ``tol`` in barycentric terms).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    npts = pts.shape[0]
    x0, J, det, invJ = affine_maps(mesh.vertices, mesh.cells)
    corners = mesh.vertices[mesh.cells]
    lo_all, hi_all = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    size = max(float(np.mean(mesh.cell_edge_lengths)), 1e-300)
    nbin = np.maximum(np.ceil((hi_all - lo_all) / size).astype(int), 1)
    span = np.where(hi_all > lo_all, hi_all - lo_all, 1.0)

    def bucket(xy):
        idx = np.floor((xy - lo_all) / span * nbin).astype(np.int64)
        return np.clip(idx, 0, nbin - 1)

    pad = tol * size
    b0 = bucket(corners.min(axis=1) - pad)
    b1 = bucket(corners.max(axis=1) + pad)
    nx = b1[:, 0] - b0[:, 0] + 1
    ny = b1[:, 1] - b0[:, 1] + 1
    counts = nx * ny
    cell_of = np.repeat(np.arange(mesh.n_cells), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    bx = b0[cell_of, 0] + offs % nx[cell_of]
    by = b0[cell_of, 1] + offs // nx[cell_of]
    bid = bx * nbin[1] + by
    order = np.argsort(bid, kind="stable")
    bid, cell_of = bid[order], cell_of[order]
    starts = np.searchsorted(bid, np.arange(nbin[0] * nbin[1] + 1))

    cells = np.full(npts, -1, dtype=np.int64)
    ref = np.full((npts, 2), np.nan)
    inside_box = np.all((pts >= lo_all - pad) & (pts <= hi_all + pad), axis=1)
    qi = np.flatnonzero(inside_box)
    if qi.size == 0:
        return cells, ref
    pb = bucket(pts[qi])
    pid = pb[:, 0] * nbin[1] + pb[:, 1]
    ncand = starts[pid + 1] - starts[pid]
    pair_pt = np.repeat(qi, ncand)
    poffs = np.arange(ncand.sum()) - np.repeat(np.cumsum(ncand) - ncand, ncand)
    pair_cell = cell_of[np.repeat(starts[pid], ncand) + poffs]
    r = np.einsum("pij,pj->pi", invJ[pair_cell], pts[pair_pt] - x0[pair_cell])
    score = np.minimum(np.minimum(r[:, 0], r[:, 1]), 1.0 - r[:, 0] - r[:, 1])
    ok = score >= -tol
    pair_pt, pair_cell, r, score = pair_pt[ok], pair_cell[ok], r[ok], score[ok]
    best = np.lexsort((-score, pair_pt))
    first = np.ones(best.size, dtype=bool)
    first[1:] = pair_pt[best][1:] != pair_pt[best][:-1]
    pick = best[first]
    cells[pair_pt[pick]] = pair_cell[pick]
    ref[pair_pt[pick]] = r[pick]
    return cells, ref


def evaluate(space: Space, coeffs, points, tol: float = 1e-10):
    """Velocity (P, 2) and pressure (P,) of a coefficient vector at points.

    Points outside the mesh give NaN.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    cells, ref = locate_points(space.mesh, pts, tol)
    u = np.full((pts.shape[0], 2), np.nan)
    p = np.full(pts.shape[0], np.nan)
    found = np.flatnonzero(cells >= 0)
    if found.size:
        vals, _, _ = shape_functions(space.degree, ref[found])
        dofs = space.cell_dofs[cells[found]]
        N = space.n_nodes
        coeffs = np.asarray(coeffs, dtype=float)
        u[found, 0] = np.einsum("pb,pb->p", vals, coeffs[:N][dofs])
        u[found, 1] = np.einsum("pb,pb->p", vals, coeffs[N:2 * N][dofs])
        p[found] = np.einsum("pb,pb->p", vals, coeffs[2 * N:][dofs])
    return u, p


def transfer(source: Space, coeffs, target: Space) -> np.ndarray:
    """Nodal interpolation of a discrete field onto another space on the same domain."""
    u, p = evaluate(source, coeffs, target.node_coordinates, tol=1e-8)
    if np.any(np.isnan(p)):
        raise ValueError("target nodes lie outside the source mesh")
    return np.concatenate([u[:, 0], u[:, 1], p])
