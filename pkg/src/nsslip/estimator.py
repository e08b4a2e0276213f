"""
Residual a posteriori error estimator, maximum marking and the adaptive loop.

For a cell ``K`` the squared indicator is the sum of

* the element residual ``h_K^2 / nu || f_h + 2 nu div eps(u_h) - u_h . grad u_h - grad p_h ||_K^2``,
  with ``f_h`` the nodal interpolant of the forcing in the velocity space;
* half-jumps of the normal stress over interior edges,
  ``h_E / nu || 1/2 [[(p_h I - 2 nu eps(u_h)) n]] ||_E^2``, charged to both neighbours;
* Navier residuals on boundary edges,
  ``h_E / nu || 2 nu n^T eps(u_h) t + beta u_h . t - g_t ||_E^2 + gamma^2 nu / h_E || u_h . n - g_n ||_E^2``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .assembly import ProblemConfig
from .fem import CellEvaluator, FacetEvaluator, Space, build_space, triangle_rule
from .mesh import NAVIER, Mesh, refine

log = logging.getLogger(__name__)


@dataclass
class EstimatorBreakdown:
    """Squared per-cell contributions and their totals."""

    rk: np.ndarray
    re: np.ndarray
    jk: np.ndarray

    @property
    def total(self) -> np.ndarray:
        """Per-cell squared indicator."""
        return self.rk + self.re + self.jk

    @property
    def indicators(self) -> np.ndarray:
        return np.sqrt(self.total)

    @property
    def psi(self) -> float:
        return float(math.sqrt(self.total.sum()))


def _forcing_coefficients(space: Space, force) -> np.ndarray:
    """Nodal interpolant of the forcing, stacked like a velocity vector."""
    if force is None:
        return np.zeros(2 * space.n_nodes)
    vals = np.asarray(force(space.node_coordinates), dtype=float)
    return np.concatenate([vals[:, 0], vals[:, 1]])


def element_residuals(state, cfg: ProblemConfig, cells=None) -> np.ndarray:
    """Squared element residual term for ``cells`` (all by default)."""
    space = state.space
    N = space.n_nodes
    nu = cfg.physical.nu
    x = state.coefficients
    cells = np.arange(space.mesh.n_cells) if cells is None else np.asarray(cells)
    rule = triangle_rule(2 * space.degree + 2)
    ev = CellEvaluator(space, cells, rule.points, rule.weights, hessians=True)
    fh, _ = ev.velocity(_forcing_coefficients(space, cfg.physical.force), N)
    u, G = ev.velocity(x, N)
    H = ev.velocity_hessian(x, N)  # (nc, nq, 2, 2, 2)
    lap = H[..., 0, 0] + H[..., 1, 1]
    grad_div = H[:, :, 0, 0, :] + H[:, :, 1, 1, :]
    div_eps = 0.5 * (lap + grad_div)
    _, gp = ev.scalar(x[2 * N:])
    R = fh + 2.0 * nu * div_eps - np.einsum("cqkl,cql->cqk", G, u) - gp
    return ev.h ** 2 / nu * np.einsum("cq,cqk->c", ev.weights, R ** 2)


def element_residual(state, cfg: ProblemConfig, cell: int) -> float:
    return float(element_residuals(state, cfg, [cell])[0])


def _normal_stress(ev, x, N, nu):
    """``(p I - 2 nu eps(u)) n`` at facet points for the evaluator's cell."""
    _, G = ev.velocity(x, N)
    p, _ = ev.scalar(x[2 * N:])
    eps = 0.5 * (G + np.swapaxes(G, -1, -2))
    n = ev.normals
    return p[..., None] * n[:, None, :] - 2.0 * nu * np.einsum("fqkl,fl->fqk", eps, n)


def edge_jumps(state, cfg: ProblemConfig, facets) -> np.ndarray:
    """Squared half-jump terms for interior ``facets`` (not yet attributed)."""
    space = state.space
    facets = np.asarray(facets, dtype=np.int64)
    if facets.size == 0:
        return np.zeros(0)
    if np.any(space.mesh.facet_cells[facets, 1] < 0):
        raise ValueError("jump residual requested on a boundary facet")
    N = space.n_nodes
    nu = cfg.physical.nu
    order = 2 * space.degree + 1
    a = FacetEvaluator(space, facets, order, side=0)
    b = FacetEvaluator(space, facets, order, side=1)
    jump = 0.5 * (_normal_stress(a, state.coefficients, N, nu)
                  - _normal_stress(b, state.coefficients, N, nu))
    return a.h_facet / nu * np.einsum("fq,fqk->f", a.weights, jump ** 2)


def edge_jump(state, cfg: ProblemConfig, facet: int) -> float:
    return float(edge_jumps(state, cfg, [facet])[0])


def navier_residuals(state, cfg: ProblemConfig, facets) -> np.ndarray:
    """Squared Navier-boundary terms for ``facets`` (all must be Navier facets)."""
    space = state.space
    mesh = space.mesh
    facets = np.asarray(facets, dtype=np.int64)
    if facets.size == 0:
        return np.zeros(0)
    if np.any(mesh.facet_tag[facets] != NAVIER):
        raise ValueError("Navier residual requested on a non-Navier facet")
    N = space.n_nodes
    phys = cfg.physical
    nu, beta, gamma = phys.nu, cfg.nitsche.beta, cfg.nitsche.gamma
    ev = FacetEvaluator(space, facets, 2 * space.degree + 1)
    u, G = ev.velocity(state.coefficients, N)
    n, t = ev.normals, ev.tangents
    eps = 0.5 * (G + np.swapaxes(G, -1, -2))
    n_q = np.broadcast_to(n[:, None, :], u.shape)
    t_q = np.broadcast_to(t[:, None, :], u.shape)
    r_t = 2.0 * nu * np.einsum("fk,fqkl,fl->fq", n, eps, t) + beta * np.einsum("fqk,fk->fq", u, t)
    if phys.traction_data is not None:
        r_t = r_t - phys.traction_data(ev.points, n_q, t_q)
    r_n = np.einsum("fqk,fk->fq", u, n)
    if phys.normal_data is not None:
        r_n = r_n - phys.normal_data(ev.points, n_q)
    h = ev.h_facet
    return (h / nu * np.sum(ev.weights * r_t ** 2, axis=1)
            + gamma ** 2 * nu / h * np.sum(ev.weights * r_n ** 2, axis=1))


def navier_residual(state, cfg: ProblemConfig, facet: int) -> float:
    return float(navier_residuals(state, cfg, [facet])[0])


def estimate(state, cfg: ProblemConfig) -> EstimatorBreakdown:
    """Per-cell squared indicators for a discrete state."""
    mesh = state.space.mesh
    rk = element_residuals(state, cfg)
    re = np.zeros(mesh.n_cells)
    inner = mesh.interior_facets
    if inner.size:
        contrib = edge_jumps(state, cfg, inner)
        np.add.at(re, mesh.facet_cells[inner, 0], contrib)
        np.add.at(re, mesh.facet_cells[inner, 1], contrib)
    jk = np.zeros(mesh.n_cells)
    nav = mesh.facets_with_tag(NAVIER)
    if nav.size:
        np.add.at(jk, mesh.facet_cells[nav, 0], navier_residuals(state, cfg, nav))
    return EstimatorBreakdown(rk, re, jk)


def mark_max(indicators, theta: float = 0.5) -> np.ndarray:
    """Cells with ``Psi_K >= theta * max Psi``.

    ``indicators`` are the (non-squared) cell indicators or an
    :class:`EstimatorBreakdown`. Returns sorted cell indices.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("marking parameter must lie in (0, 1)")
    if isinstance(indicators, EstimatorBreakdown):
        indicators = indicators.indicators
    eta = np.asarray(indicators, dtype=float)
    if eta.size == 0:
        return np.zeros(0, dtype=np.int64)
    top = eta.max()
    if not top > 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(eta >= theta * top)


# -- adaptive loop ----------------------------------------------------------------

@dataclass
class AdaptRecord:
    level: int
    n_cells: int
    dofs: int
    h_max: float
    psi: float
    n_marked: int
    iterations: int
    errors: Optional[object] = None
    slip_error: float = math.nan


@dataclass
class AdaptResult:
    records: List[AdaptRecord] = field(default_factory=list)
    state: Optional[object] = None
    mesh: Optional[Mesh] = None


def adaptive_loop(mesh: Mesh, degree: int, cfg: ProblemConfig, solve_config=None,
                  theta: float = 0.5, max_dofs: int = 10 ** 5, max_iters: int = 20,
                  exact=None, callback=None, warm_start: bool = True) -> AdaptResult:
    """SOLVE -> ESTIMATE -> MARK -> REFINE.

    Stops after ``max_iters`` solves or once the number of unknowns reaches
    ``max_dofs``. With an ``exact`` solution every record carries an
    :class:`~nsslip.verification.ErrorReport`. ``callback(record, state)``
    is called after each level. With ``warm_start`` every level after the
    first starts from the interpolated previous solution at the target
    viscosity instead of rerunning the viscosity ladder.
    """
    from .problems import solve_level
    from .solver import SolveConfig
    from .verification import count_dofs, error_norms, slip_error

    solve_config = solve_config or SolveConfig()
    if not 0.0 < theta < 1.0:
        raise ValueError("marking parameter must lie in (0, 1)")
    result = AdaptResult()
    for level in range(max_iters):
        space = build_space(mesh, degree)
        prev = result.state if warm_start else None
        state = solve_level(space, cfg, solve_config, prev)
        br = estimate(state, cfg)
        marked = mark_max(br, theta)
        rec = AdaptRecord(level, mesh.n_cells, count_dofs(space), mesh.h_max, br.psi,
                          int(marked.size), state.iterations, slip_error=slip_error(state))
        if exact is not None:
            rec.errors = error_norms(state, exact, psi=br.psi)
        result.records.append(rec)
        result.state, result.mesh = state, mesh
        log.info("level %d: cells=%d dofs=%d psi=%.4e marked=%d", level, rec.n_cells,
                 rec.dofs, rec.psi, rec.n_marked)
        if callback is not None:
            callback(rec, state)
        if rec.dofs >= max_dofs or marked.size == 0 or level == max_iters - 1:
            break
        mesh = refine(mesh, marked)
    return result
