"""
Assembly of the stabilized Nitsche operator for stationary Navier-Stokes.

The operator is linearized about a frozen advection field ``adv`` (the
previous iterate): the convective term, the stabilization parameters and
the stabilization test function all use ``adv``. With ``newton=True`` the
extra term ``(u . grad adv, v)`` and its right-hand side counterpart are
added, which turns the Galerkin convection into a Newton linearization.

Local element vectors are ordered ``[u_x (nb), u_y (nb), p (nb)]`` to
match :attr:`nsslip.fem.Space.local_to_global`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .fem import CellEvaluator, FacetEvaluator, Space, triangle_rule
from .mesh import NAVIER

# vectorized point evaluators: points (..., 2) -> values
VectorField = Callable[[np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray], np.ndarray]

_CHUNK = 4096


@dataclass(frozen=True)
class NitscheConfig:
    """Nitsche variant ``theta`` (1 symmetric, 0 incomplete, -1 skew),
    penalty ``gamma`` and friction ``beta``."""

    theta: int = 1
    gamma: float = 10.0
    beta: float = 10.0

    def __post_init__(self):
        if self.theta not in (-1, 0, 1):
            raise ValueError("theta must be one of -1, 0, 1, got {}".format(self.theta))
        if not self.gamma > 0:
            raise ValueError("gamma must be positive, got {}".format(self.gamma))
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative, got {}".format(self.beta))


@dataclass(frozen=True)
class StabConfig:
    lam: float = 1.0
    m_k: float = 0.0814814
    p_norm: float = 2.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive, got {}".format(self.lam))
        if not 0 < self.m_k <= 1.0 / 3.0:
            raise ValueError("m_K must lie in (0, 1/3], got {}".format(self.m_k))
        if not self.p_norm >= 1:
            raise ValueError("p_norm must be >= 1, got {}".format(self.p_norm))


@dataclass(frozen=True)
class PhysicalConfig:
    """Viscosity and data.

    ``force`` and ``dirichlet`` map points (..., 2) to vectors (..., 2).
    The optional fields describe non-homogeneous data used by manufactured
    solutions: ``mass_source`` is the prescribed divergence,
    ``normal_data(points, n)`` the prescribed ``u . n`` and
    ``traction_data(points, n, t)`` the prescribed value of
    ``2 nu n^T eps(u) t + beta u . t`` on Navier facets.
    """

    nu: float
    force: Optional[VectorField] = None
    dirichlet: Optional[VectorField] = None
    mass_source: Optional[ScalarField] = None
    normal_data: Optional[Callable] = None
    traction_data: Optional[Callable] = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive, got {}".format(self.nu))


@dataclass(frozen=True)
class ProblemConfig:
    nitsche: NitscheConfig = field(default_factory=NitscheConfig)
    stab: StabConfig = field(default_factory=StabConfig)
    physical: PhysicalConfig = field(default_factory=lambda: PhysicalConfig(1.0))

    def with_nu(self, nu: float) -> "ProblemConfig":
        return replace(self, physical=replace(self.physical, nu=nu))


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    bordered: bool = False

    @property
    def shape(self):
        return self.matrix.shape


# -- stabilization parameters -------------------------------------------------

def xi(y):
    """``y`` on [0, 1), 1 beyond."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("xi is defined for non-negative arguments")
    out = np.minimum(y, 1.0)
    return float(out) if out.ndim == 0 else out


def local_reynolds(u_norm, h, nu, m_k):
    if np.any(np.asarray(nu) <= 0):
        raise ValueError("nu must be positive")
    u_norm = np.asarray(u_norm, dtype=float)
    if np.any(u_norm < 0) or np.any(np.asarray(h) < 0):
        raise ValueError("velocity norm and h must be non-negative")
    re = m_k * u_norm * h / (4.0 * nu)
    return float(re) if np.ndim(re) == 0 else re


def tau_delta(u_norm, h, nu, stab: StabConfig):
    """Pointwise ``(tau, delta)``.

    Below ``Re_K = 1`` the closed forms ``tau = m h^2 / (8 nu)`` and
    ``delta = lam m (|u| h)^2 / (4 nu)`` are used, so ``|u| = 0`` needs no
    special case.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("h must be positive")
    if np.any(np.asarray(nu) <= 0):
        raise ValueError("nu must be positive")
    u = np.asarray(u_norm, dtype=float)
    m, lam = stab.m_k, stab.lam
    re = local_reynolds(u, h, nu, m)
    diffusive = re < 1.0
    safe_u = np.where(diffusive, 1.0, u)
    tau = np.where(diffusive, m * h * h / (8.0 * nu), h / (2.0 * safe_u))
    delta = np.where(diffusive, lam * m * (u * h) ** 2 / (4.0 * nu), lam * u * h)
    if tau.ndim == 0:
        return float(tau), float(delta)
    return tau, delta


def tau_bound(h, nu, m_k):
    """``m_K h^2 / (8 nu)``, evaluated exactly like the diffusive branch of ``tau``."""
    h = np.asarray(h, dtype=float)
    return m_k * h * h / (8.0 * nu)


# -- assembly ---------------------------------------------------------------

def _bgram(w, test, trial):
    """``sum_q w[c,q] test[c,q,i] trial[c,q,j]`` -> (c, i, j)."""
    return np.matmul(np.swapaxes(test * w[..., None], 1, 2), trial)


def _bgram_vec(w, test, trial):
    """As :func:`_bgram` with an extra trailing axis that is summed over."""
    return sum(_bgram(w, test[..., d], trial[..., d]) for d in range(test.shape[-1]))


def _bload(w, func, test):
    """``sum_q w[c,q] func[c,q] test[c,q,i]`` -> (c, i)."""
    return np.einsum("cq,cqi->ci", w * func, test)


def _div_eps_basis(ev: CellEvaluator, nb):
    """``div eps(phi e_l)`` for l = 0, 1 as two (c, q, nb, 2) arrays, or ``None``."""
    if ev.hessians is None:
        return None
    H = ev.hessians
    lap = H[..., 0, 0] + H[..., 1, 1]
    out = []
    for l in range(2):
        d = 0.5 * H[..., :, l].copy()
        d[..., l] += 0.5 * lap
        out.append(d)
    return out


def _assemble_cells(space: Space, x_adv, cfg: ProblemConfig, newton, with_second, stab_on,
                    rows, cols, vals, rhs, check_tau):
    """Element matrices built block by block from scalar basis data.

    Blocks are indexed by (test component, trial component) with components
    ``0, 1`` for velocity and ``2`` for pressure; every block is a batched
    (cells x nb x nb) product over quadrature points.
    """
    mesh = space.mesh
    phys = cfg.physical
    nu = phys.nu
    k = space.degree
    nb = space.cell_dofs.shape[1]
    N = space.n_nodes
    rule = triangle_rule(2 * k + 2)
    l2g = space.local_to_global
    for start in range(0, mesh.n_cells, _CHUNK):
        cells = np.arange(start, min(start + _CHUNK, mesh.n_cells))
        nc = cells.size
        ev = CellEvaluator(space, cells, rule.points, rule.weights, hessians=with_second)
        adv, adv_grad = ev.velocity(x_adv, N)
        W = ev.weights
        phi = np.broadcast_to(ev.values, (nc,) + ev.values.shape[-2:]) \
            if ev.values.ndim == 2 else ev.values
        G = ev.grads
        Gx, Gy = G[..., 0], G[..., 1]
        Gd = (Gx, Gy)
        a = np.einsum("cqk,cqbk->cqb", adv, G)  # adv . grad phi
        DE = _div_eps_basis(ev, nb)

        A = np.zeros((nc, 3, 3, nb, nb))
        S = _bgram(W, Gx, Gx) + _bgram(W, Gy, Gy)
        C = _bgram(W, phi, a)
        for kk in range(2):
            for ll in range(2):
                # 2 nu (eps(phi_j e_l), eps(phi_i e_k))
                A[:, kk, ll] = nu * _bgram(W, Gd[ll], Gd[kk])
                if newton:
                    A[:, kk, ll] += _bgram(W * adv_grad[..., kk, ll], phi, phi)
            A[:, kk, kk] += nu * S + C
            A[:, kk, 2] = -_bgram(W, Gd[kk], phi)
            A[:, 2, kk] = -_bgram(W, phi, Gd[kk])

        f = phys.force(ev.points) if phys.force is not None else np.zeros(adv.shape)
        b = np.zeros((nc, 3, nb))
        for kk in range(2):
            b[:, kk] = _bload(W, f[..., kk], phi)
        if newton:
            ugu = np.einsum("cqkl,cql->cqk", adv_grad, adv)
            for kk in range(2):
                b[:, kk] += _bload(W, ugu[..., kk], phi)
        g = phys.mass_source(ev.points) if phys.mass_source is not None else None
        if g is not None:
            b[:, 2] -= _bload(W, g, phi)

        if stab_on:
            unorm = np.linalg.norm(adv, ord=cfg.stab.p_norm, axis=-1)
            h = np.broadcast_to(ev.h[:, None], unorm.shape)
            tau, delta = tau_delta(unorm, h, nu, cfg.stab)
            if check_tau and np.any(tau > tau_bound(h, nu, cfg.stab.m_k) * (1 + 1e-12)):
                raise AssertionError("tau exceeds m_K h^2 / (8 nu)")
            Wt, Wd = W * tau, W * delta
            # residual of a trial function L and test operator M:
            #   L(phi e_l) = -2 nu de_l + a e_l,  L(phi) = grad phi
            #   M(phi e_k) = -2 nu de_k + a e_k,  M(phi) = -grad phi
            Caa = _bgram(Wt, a, a)
            for kk in range(2):
                for ll in range(2):
                    A[:, kk, ll] += _bgram(Wd, Gd[kk], Gd[ll])
                A[:, kk, kk] += Caa
                A[:, kk, 2] += _bgram(Wt, a, Gd[kk])
                A[:, 2, kk] -= _bgram(Wt, Gd[kk], a)
            A[:, 2, 2] -= _bgram(Wt, Gx, Gx) + _bgram(Wt, Gy, Gy)
            if DE is not None:
                for kk in range(2):
                    for ll in range(2):
                        A[:, kk, ll] += 4.0 * nu * nu * _bgram_vec(Wt, DE[kk], DE[ll])
                        A[:, kk, ll] -= 2.0 * nu * _bgram(Wt, DE[kk][..., ll], a)
                        A[:, kk, ll] -= 2.0 * nu * _bgram(Wt, a, DE[ll][..., kk])
                    A[:, kk, 2] -= 2.0 * nu * _bgram_vec(Wt, DE[kk], G)
                    A[:, 2, kk] += 2.0 * nu * _bgram_vec(Wt, G, DE[kk])
            for kk in range(2):
                b[:, kk] += _bload(Wt, f[..., kk], a)
                if DE is not None:
                    b[:, kk] -= 2.0 * nu * np.einsum("cq,cqk,cqik->ci", Wt, f, DE[kk])
                if g is not None:
                    b[:, kk] += _bload(Wd, g, Gd[kk])
            b[:, 2] -= np.einsum("cq,cqk,cqik->ci", Wt, f, G)

        A = A.transpose(0, 1, 3, 2, 4).reshape(nc, 3 * nb, 3 * nb)
        b = b.reshape(nc, 3 * nb)
        dofs = l2g[cells]
        n = dofs.shape[1]
        rows.append(np.repeat(dofs, n, axis=1).ravel())
        cols.append(np.tile(dofs, (1, n)).ravel())
        vals.append(A.ravel())
        np.add.at(rhs, dofs.ravel(), b.ravel())


def navier_facet_matrices(space: Space, cfg: ProblemConfig, facets=None, theta=None):
    """Local Nitsche matrices and load vectors on Navier facets.

    Returns ``(dofs (nf, 3nb), A (nf, 3nb, 3nb), b (nf, 3nb))`` with
    ``A[f, test, trial]``.
    """
    mesh = space.mesh
    if facets is None:
        facets = mesh.facets_with_tag(NAVIER)
    facets = np.asarray(facets, dtype=np.int64)
    nb = space.cell_dofs.shape[1]
    if facets.size == 0:
        n = 3 * nb
        return np.zeros((0, n), np.int64), np.zeros((0, n, n)), np.zeros((0, n))
    nit, phys = cfg.nitsche, cfg.physical
    theta = nit.theta if theta is None else theta
    nu = phys.nu
    ev = FacetEvaluator(space, facets, 2 * space.degree + 2)
    nrm, tng = ev.normals, ev.tangents
    nf, nq = ev.weights.shape
    # normal derivative of every scalar basis function
    dn = np.einsum("fqbk,fk->fqb", ev.grads, nrm)
    vals = ev.values
    n = 3 * nb
    S = np.zeros((nf, nq, n))   # n^T (2 nu eps(u) - p I) n
    Nn = np.zeros((nf, nq, n))  # u . n
    Tt = np.zeros((nf, nq, n))  # u . t
    for k in range(2):
        sl = slice(k * nb, (k + 1) * nb)
        # eps(phi e_k) n . n = n_k d_n phi
        S[:, :, sl] = 2.0 * nu * nrm[:, None, k, None] * dn
        Nn[:, :, sl] = nrm[:, None, k, None] * vals
        Tt[:, :, sl] = tng[:, None, k, None] * vals
    S[:, :, 2 * nb:] = -vals
    W = ev.weights
    pen = nit.gamma * nu / ev.h_facet
    A = -np.einsum("fq,fqn,fqm->fnm", W, Nn, S)
    A -= theta * np.einsum("fq,fqn,fqm->fnm", W, S, Nn)
    A += nit.beta * np.einsum("fq,fqn,fqm->fnm", W, Tt, Tt)
    A += pen[:, None, None] * np.einsum("fq,fqn,fqm->fnm", W, Nn, Nn)

    b = np.zeros((nf, n))
    nrm_q = np.broadcast_to(nrm[:, None, :], ev.points.shape)
    tng_q = np.broadcast_to(tng[:, None, :], ev.points.shape)
    if phys.normal_data is not None:
        gn = phys.normal_data(ev.points, nrm_q)
        b -= theta * np.einsum("fq,fq,fqn->fn", W, gn, S)
        b += pen[:, None] * np.einsum("fq,fq,fqn->fn", W, gn, Nn)
    if phys.traction_data is not None:
        gt = phys.traction_data(ev.points, nrm_q, tng_q)
        b += np.einsum("fq,fq,fqn->fn", W, gt, Tt)
    owner = mesh.facet_cells[facets, 0]
    return space.local_to_global[owner], A, b


def assemble_operator(space: Space, x_adv, cfg: ProblemConfig, newton: bool = False,
                      with_second: bool = True, stabilization: bool = True,
                      check_tau: bool = True) -> LinearSystem:
    """Assemble the linearized operator and load vector.

    Parameters
    ----------
    space : Space
    x_adv : (n_dofs,) array or None
        Coefficients of the advection field; only the velocity part is used.
        ``None`` means a zero field.
    cfg : ProblemConfig
    newton : bool
        Add the Newton term of the convection.
    with_second : bool
        Evaluate second derivatives for quadratic elements. Linears have
        vanishing ``div eps`` and skip this regardless.
    stabilization : bool
        ``False`` drops the tau and delta terms (plain Galerkin plus Nitsche).
    """
    n = space.n_dofs
    if x_adv is None:
        x_adv = np.zeros(n)
    x_adv = np.asarray(x_adv, dtype=float)
    if x_adv.shape[0] not in (n, n + 1):
        raise ValueError("advection vector has {} entries, space has {} dofs".format(
            x_adv.shape[0], n))
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    _assemble_cells(space, x_adv, cfg, newton, with_second, stabilization,
                    rows, cols, vals, rhs, check_tau)
    dofs, A, b = navier_facet_matrices(space, cfg)
    if dofs.shape[0]:
        m = dofs.shape[1]
        rows.append(np.repeat(dofs, m, axis=1).ravel())
        cols.append(np.tile(dofs, (1, m)).ravel())
        vals.append(A.ravel())
        np.add.at(rhs, dofs.ravel(), b.ravel())
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return LinearSystem(mat, rhs)


def dirichlet_values(space: Space, dirichlet) -> np.ndarray:
    """Interpolated boundary values on the constrained velocity dofs."""
    nodes = space.dirichlet_nodes
    if nodes.size == 0:
        return np.zeros(0)
    if dirichlet is None:
        return np.zeros(2 * nodes.size)
    u = np.asarray(dirichlet(space.node_coordinates[nodes]), dtype=float)
    return np.concatenate([u[:, 0], u[:, 1]])


def apply_dirichlet(system: LinearSystem, space: Space, dirichlet) -> LinearSystem:
    """Strongly impose velocity values on the Dirichlet boundary closure.

    Constrained rows and columns are replaced by the identity and the known
    values are lifted to the right-hand side, which keeps a symmetric matrix
    symmetric.
    """
    dofs = space.dirichlet_dofs
    values = dirichlet_values(space, dirichlet)
    A = system.matrix.tocsr()
    n = A.shape[0]
    g = np.zeros(n)
    g[dofs] = values
    rhs = system.rhs - A @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    rhs[dofs] = values
    return LinearSystem(A, rhs, system.bordered)
