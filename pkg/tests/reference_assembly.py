"""
Dense reference assembly used as an oracle for the block-structured kernel.

Every basis function of the vector space is expanded into its full
(value, gradient, div eps) representation and every bilinear term is a
single contraction, which is slow but transparent.
"""
import numpy as np
import scipy.sparse as sp

from nsslip.assembly import ProblemConfig, tau_bound, tau_delta
from nsslip.fem import CellEvaluator, Space, triangle_rule

_CHUNK = 4096


def _gram(w, test, trial):
    c, q, n = test.shape[:3]
    X = test.reshape(c, q, n, -1)
    Y = trial.reshape(c, q, trial.shape[2], -1)
    return np.einsum("cq,cqnf,cqmf->cnm", w, X, Y)


def _volume_features(ev: CellEvaluator, nb: int, adv, adv_grad, nu, with_second):
    """Per local basis function: vector value, gradient, div eps, pressure value/gradient.

    Returns arrays over (nc, nq, 3 nb, ...).
    """
    nc, nq = ev.grads.shape[:2]
    n = 3 * nb
    vals = ev.values if ev.values.ndim == 3 else np.broadcast_to(ev.values, (nc, nq, nb))
    U = np.zeros((nc, nq, n, 2))
    GU = np.zeros((nc, nq, n, 2, 2))
    P = np.zeros((nc, nq, n))
    GP = np.zeros((nc, nq, n, 2))
    DE = np.zeros((nc, nq, n, 2))
    for k in range(2):
        sl = slice(k * nb, (k + 1) * nb)
        U[:, :, sl, k] = vals
        GU[:, :, sl, k, :] = ev.grads
    P[:, :, 2 * nb:] = vals
    GP[:, :, 2 * nb:] = ev.grads
    if with_second and ev.hessians is not None:
        lap = ev.hessians[..., 0, 0] + ev.hessians[..., 1, 1]
        for k in range(2):
            sl = slice(k * nb, (k + 1) * nb)
            # div eps(phi e_k) = (lap phi e_k + grad d_k phi) / 2
            DE[:, :, sl, :] = 0.5 * ev.hessians[..., k, :]
            DE[:, :, sl, k] += 0.5 * lap
    conv = np.einsum("cql,cqmkl->cqmk", adv, GU)
    return U, GU, P, GP, DE, conv


def _assemble_cells(space: Space, x_adv, cfg: ProblemConfig, newton, with_second, stab_on,
                    rows, cols, vals, rhs, check_tau):
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
        ev = CellEvaluator(space, cells, rule.points, rule.weights, hessians=with_second)
        adv, adv_grad = ev.velocity(x_adv, N)
        U, GU, P, GP, DE, conv = _volume_features(ev, nb, adv, adv_grad, nu, with_second)
        W = ev.weights
        EU = 0.5 * (GU + np.swapaxes(GU, -1, -2))
        DIV = GU[..., 0, 0] + GU[..., 1, 1]

        A = 2.0 * nu * _gram(W, EU, EU)
        A += _gram(W, U, conv)
        A -= _gram(W, DIV, P)
        A -= _gram(W, P, DIV)
        if newton:
            nl = np.einsum("cqkl,cqml->cqmk", adv_grad, U)
            A += _gram(W, U, nl)

        f = phys.force(ev.points) if phys.force is not None else np.zeros(adv.shape)
        b = np.einsum("cq,cqk,cqnk->cn", W, f, U)
        if newton:
            ugu = np.einsum("cqkl,cql->cqk", adv_grad, adv)
            b += np.einsum("cq,cqk,cqnk->cn", W, ugu, U)
        g = phys.mass_source(ev.points) if phys.mass_source is not None else None
        if g is not None:
            b -= np.einsum("cq,cq,cqn->cn", W, g, P)

        if stab_on:
            unorm = np.linalg.norm(adv, ord=cfg.stab.p_norm, axis=-1)
            h = np.broadcast_to(ev.h[:, None], unorm.shape)
            tau, delta = tau_delta(unorm, h, nu, cfg.stab)
            if check_tau and np.any(tau > tau_bound(h, nu, cfg.stab.m_k) * (1 + 1e-12)):
                raise AssertionError("tau exceeds m_K h^2 / (8 nu)")
            L = -2.0 * nu * DE + conv + GP
            M = -2.0 * nu * DE + conv - GP
            A += _gram(W * tau, M, L)
            A += _gram(W * delta, DIV, DIV)
            b += np.einsum("cq,cqk,cqnk->cn", W * tau, f, M)
            if g is not None:
                b += np.einsum("cq,cq,cqn->cn", W * delta, g, DIV)

        dofs = l2g[cells]
        n = dofs.shape[1]
        rows.append(np.repeat(dofs, n, axis=1).ravel())
        cols.append(np.tile(dofs, (1, n)).ravel())
        vals.append(A.ravel())
        np.add.at(rhs, dofs.ravel(), b.ravel())


def reference_cell_matrix(space, x_adv, cfg, newton=False, with_second=True, stabilization=True):
    n = space.n_dofs
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    _assemble_cells(space, np.asarray(x_adv, float), cfg, newton, with_second, stabilization,
                    rows, cols, vals, rhs, False)
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return A, rhs
