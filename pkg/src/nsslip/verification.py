"""
Manufactured solutions, error norms, convergence rates and the cavity
vortex-centre locator.

Exact solutions carry closed-form first and second velocity derivatives,
so the forcing ``f = -2 nu div eps(u) + (grad u) u + grad p`` is evaluated
exactly rather than by numerical differentiation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .assembly import PhysicalConfig
from .fem import CellEvaluator, FacetEvaluator, Space, evaluate, triangle_rule
from .mesh import NAVIER


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form velocity/pressure pair.

    Every evaluator maps points (..., 2) to arrays with the point axes
    first: velocity (..., 2), velocity_grad (..., 2, 2) with ``[k, l] =
    d u_k / d x_l``, velocity_hess (..., 2, 2, 2) with ``[k, l, m] =
    d^2 u_k / d x_l d x_m``, pressure (...), pressure_grad (..., 2).
    """

    nu: float
    velocity: Callable
    velocity_grad: Callable
    velocity_hess: Callable
    pressure: Callable
    pressure_grad: Callable
    name: str = "exact"
    fields: Optional[Callable] = None

    def _derivs(self, pts):
        """Velocity, gradient and Hessian, in one pass when ``fields`` is given."""
        if self.fields is not None:
            return self.fields(pts)
        return self.velocity(pts), self.velocity_grad(pts), self.velocity_hess(pts)

    def divergence(self, pts):
        G = self.velocity_grad(pts)
        return G[..., 0, 0] + G[..., 1, 1]

    def div_eps(self, pts):
        """``div eps(u) = (lap u + grad div u) / 2``."""
        H = self.velocity_hess(pts)
        lap = H[..., 0, 0] + H[..., 1, 1]
        grad_div = H[..., 0, 0, :] + H[..., 1, 1, :]
        return 0.5 * (lap + grad_div)

    def force(self, pts):
        u, G, H = self._derivs(pts)
        div_eps = 0.5 * (H[..., 0, 0] + H[..., 1, 1] + H[..., 0, 0, :] + H[..., 1, 1, :])
        return (-2.0 * self.nu * div_eps + np.einsum("...kl,...l->...k", G, u)
                + self.pressure_grad(pts))

    def traction(self, pts, n, t, beta):
        """``2 nu n^T eps(u) t + beta u . t``."""
        G = self.velocity_grad(pts)
        eps = 0.5 * (G + np.swapaxes(G, -1, -2))
        return (2.0 * self.nu * np.einsum("...k,...kl,...l->...", n, eps, t)
                + beta * np.einsum("...k,...k->...", self.velocity(pts), t))

    def physical(self, beta: float, nu: Optional[float] = None) -> PhysicalConfig:
        """Data making this field the exact solution of the boundary value problem."""
        return PhysicalConfig(
            nu=self.nu if nu is None else nu,
            force=self.force,
            dirichlet=self.velocity,
            mass_source=self.divergence,
            normal_data=lambda x, n: np.einsum("...k,...k->...", self.velocity(x), n),
            traction_data=lambda x, n, t: self.traction(x, n, t, beta),
        )


# -- unit square -------------------------------------------------------------

def _quartic(s):
    # s^2 (s-1)^2 and derivatives
    return s * s * (s - 1) ** 2, 2 * s * (s - 1) * (2 * s - 1), 12 * s * s - 12 * s + 2


def _cubic(s):
    # s (s-1) (2s-1) and derivatives
    return 2 * s ** 3 - 3 * s * s + s, 6 * s * s - 6 * s + 1, 12 * s - 6


def _separable(cx, fx, fy, x, y):
    """Value, gradient and Hessian of ``cx * fx(x) * fy(y)``."""
    a, a1, a2 = fx(x)
    b, b1, b2 = fy(y)
    val = cx * a * b
    grad = np.stack([cx * a1 * b, cx * a * b1], axis=-1)
    hess = np.stack([np.stack([cx * a2 * b, cx * a1 * b1], axis=-1),
                     np.stack([cx * a1 * b1, cx * a * b2], axis=-1)], axis=-2)
    return val, grad, hess


def mms_square(nu: float, variant: str = "printed") -> ExactSolution:
    """Polynomial solution on the unit square.

    ``variant="printed"`` gives ``u = (-g, g)`` with
    ``g = 256 x^2 (x-1)^2 y (y-1) (2y-1)``; this field is not solenoidal and
    its divergence is supplied as a mass source. ``variant="solenoidal"``
    swaps ``x`` and ``y`` in the second component, giving the curl of
    ``128 x^2 (x-1)^2 y^2 (y-1)^2`` (up to sign). The pressure is
    ``150 (x - 1/2)(y - 1/2)`` in both cases.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    if variant not in ("printed", "solenoidal"):
        raise ValueError("unknown variant {!r}".format(variant))

    def parts(pts):
        x, y = pts[..., 0], pts[..., 1]
        c1 = _separable(-256.0, _quartic, _cubic, x, y)
        if variant == "printed":
            c2 = _separable(256.0, _quartic, _cubic, x, y)
        else:
            c2 = _separable(256.0, _cubic, _quartic, x, y)
        return c1, c2

    def velocity(pts):
        c1, c2 = parts(pts)
        return np.stack([c1[0], c2[0]], axis=-1)

    def velocity_grad(pts):
        c1, c2 = parts(pts)
        return np.stack([c1[1], c2[1]], axis=-2)

    def velocity_hess(pts):
        c1, c2 = parts(pts)
        return np.stack([c1[2], c2[2]], axis=-3)

    def pressure(pts):
        return 150.0 * (pts[..., 0] - 0.5) * (pts[..., 1] - 0.5)

    def pressure_grad(pts):
        return 150.0 * np.stack([pts[..., 1] - 0.5, pts[..., 0] - 0.5], axis=-1)

    def fields(pts):
        c1, c2 = parts(pts)
        return (np.stack([c1[0], c2[0]], axis=-1), np.stack([c1[1], c2[1]], axis=-2),
                np.stack([c1[2], c2[2]], axis=-3))

    return ExactSolution(nu, velocity, velocity_grad, velocity_hess, pressure,
                         pressure_grad, name="mms-square-" + variant, fields=fields)


# -- L-shape -------------------------------------------------------------------

LSHAPE_OMEGA = 3.0 * math.pi / 4.0
LSHAPE_CHI = 0.54448373
LSHAPE_A = 1.0e3
LSHAPE_B = 10.0


def lshape_constants(chi=LSHAPE_CHI, omega=LSHAPE_OMEGA, a=LSHAPE_A, b=LSHAPE_B):
    """Return ``(M1, M2)``."""
    m1 = -math.cos((chi + 1) * omega) / math.cos((chi - 1) * omega)
    m2 = 2.0 * (a + 2.0 * b) / (a + b)
    return m1, m2


def _polar_terms(terms, pts):
    """Sum of ``c r^alpha trig(m s + phase)`` with Cartesian derivatives.

    ``terms`` is a list of ``(c, alpha, m, phase, kind)`` with kind "cos" or
    "sin". Returns value, gradient (..., 2) and Hessian (..., 2, 2); all are
    set to zero at the origin.
    """
    x, y = pts[..., 0], pts[..., 1]
    r = np.hypot(x, y)
    origin = r == 0
    r = np.where(origin, 1.0, r)
    s = np.arctan2(y, x)
    C, S = np.cos(s), np.sin(s)
    F = Fr = Fs = Frr = Frs = Fss = 0.0
    for c, alpha, m, phase, kind in terms:
        arg = m * s + phase
        if kind == "cos":
            T, T1, T2 = np.cos(arg), -np.sin(arg), -np.cos(arg)
        else:
            T, T1, T2 = np.sin(arg), np.cos(arg), -np.sin(arg)
        ra = c * r ** alpha
        F = F + ra * T
        Fr = Fr + alpha * ra / r * T
        Fs = Fs + ra * m * T1
        Frr = Frr + alpha * (alpha - 1) * ra / r ** 2 * T
        Frs = Frs + alpha * m * ra / r * T1
        Fss = Fss + ra * m * m * T2
    Fx = C * Fr - S / r * Fs
    Fy = S * Fr + C / r * Fs
    Fxx = C * C * Frr - 2 * C * S / r * Frs + S * S / r ** 2 * Fss + S * S / r * Fr \
        + 2 * C * S / r ** 2 * Fs
    Fyy = S * S * Frr + 2 * C * S / r * Frs + C * C / r ** 2 * Fss + C * C / r * Fr \
        - 2 * C * S / r ** 2 * Fs
    Fxy = C * S * Frr + (C * C - S * S) / r * Frs - C * S / r ** 2 * Fss - C * S / r * Fr \
        - (C * C - S * S) / r ** 2 * Fs
    grad = np.stack([Fx, Fy], axis=-1)
    hess = np.stack([np.stack([Fxx, Fxy], axis=-1), np.stack([Fxy, Fyy], axis=-1)], axis=-2)
    F = np.where(origin, 0.0, F)
    grad = np.where(origin[..., None], 0.0, grad)
    hess = np.where(origin[..., None, None], 0.0, hess)
    return F, grad, hess


def mms_lshape(nu: float) -> ExactSolution:
    """Corner-singular solution on ``(-1,1)^2 \\ (-1,0)^2`` in polar coordinates.

    The angle uses the ``atan2`` branch ``(-pi, pi]``. Values at the origin
    are the continuous extension (zero); derivatives there are set to zero.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    chi, a = LSHAPE_CHI, LSHAPE_A
    m1, m2 = lshape_constants()
    k = 1.0 / (2.0 * a)
    u1_terms = [(-k * (chi + 1), chi, chi + 1, 0.0, "cos"),
                (k * (m2 - chi - 1) * m1, chi, chi - 1, 0.0, "cos")]
    u2_terms = [(k * (chi + 1), chi, chi + 1, 0.0, "sin"),
                (k * (m2 + chi - 1) * m1, chi, chi - 1, 0.0, "sin")]
    p_terms = [(1.0, 1.0 / 3.0, 1.0 / 3.0, math.pi / 6.0, "sin")]

    def velocity(pts):
        return np.stack([_polar_terms(u1_terms, pts)[0], _polar_terms(u2_terms, pts)[0]], axis=-1)

    def velocity_grad(pts):
        return np.stack([_polar_terms(u1_terms, pts)[1], _polar_terms(u2_terms, pts)[1]], axis=-2)

    def velocity_hess(pts):
        return np.stack([_polar_terms(u1_terms, pts)[2], _polar_terms(u2_terms, pts)[2]], axis=-3)

    def pressure(pts):
        return _polar_terms(p_terms, pts)[0]

    def pressure_grad(pts):
        return _polar_terms(p_terms, pts)[1]

    def fields(pts):
        a1, a2 = _polar_terms(u1_terms, pts), _polar_terms(u2_terms, pts)
        return (np.stack([a1[0], a2[0]], axis=-1), np.stack([a1[1], a2[1]], axis=-2),
                np.stack([a1[2], a2[2]], axis=-3))

    return ExactSolution(nu, velocity, velocity_grad, velocity_hess, pressure,
                         pressure_grad, name="mms-lshape", fields=fields)


# -- norms -----------------------------------------------------------------------

@dataclass
class ErrorReport:
    l2_p: float = math.nan
    l2_u: float = math.nan
    h1_u: float = math.nan
    total_error: float = math.nan
    slip_error: float = math.nan
    psi: float = math.nan
    effectivity: float = math.nan
    dofs: int = 0
    h_max: float = math.nan


def slip_error(state) -> float:
    """``|| u_h . n ||`` over the Navier boundary."""
    space = state.space
    facets = space.mesh.facets_with_tag(NAVIER)
    if facets.size == 0:
        return 0.0
    ev = FacetEvaluator(space, facets, 2 * space.degree + 4)
    u, _ = ev.velocity(state.coefficients, space.n_nodes)
    un = np.einsum("fqk,fk->fq", u, ev.normals)
    return float(np.sqrt(np.sum(ev.weights * un ** 2)))


def count_dofs(space: Space) -> int:
    """Velocity and pressure unknowns plus the mean-value multiplier."""
    return space.n_dofs + 1


def error_norms(state, exact: ExactSolution, psi: Optional[float] = None) -> ErrorReport:
    """Errors of a discrete state against an exact solution.

    The exact pressure is shifted to zero mean before comparison. ``h1_u``
    is the full H1 norm. The total error is
    ``sqrt(nu ||eps(e_u)||^2 + sum_E nu/h_E ||e_u . n||_E^2 + ||e_p||^2)``
    with the sum over Navier facets.
    """
    space = state.space
    mesh = space.mesh
    N = space.n_nodes
    nu = state.nu if state.nu is not None else exact.nu
    x = state.coefficients
    rule = triangle_rule(2 * space.degree + 4)
    ev = CellEvaluator(space, np.arange(mesh.n_cells), rule.points, rule.weights, hessians=False)
    W = ev.weights
    uh, Guh = ev.velocity(x, N)
    ph, _ = ev.scalar(x[2 * N:])
    p = exact.pressure(ev.points)
    area = W.sum()
    p_mean = np.sum(W * p) / area
    ph_mean = np.sum(W * ph) / area
    eu = exact.velocity(ev.points) - uh
    Ge = exact.velocity_grad(ev.points) - Guh
    ep = (p - p_mean) - (ph - ph_mean)
    l2u2 = np.sum(W[..., None] * eu ** 2)
    grad2 = np.sum(W[..., None, None] * Ge ** 2)
    eps = 0.5 * (Ge + np.swapaxes(Ge, -1, -2))
    eps2 = np.sum(W[..., None, None] * eps ** 2)
    l2p2 = np.sum(W * ep ** 2)

    slip_term = 0.0
    facets = mesh.facets_with_tag(NAVIER)
    if facets.size:
        fe = FacetEvaluator(space, facets, 2 * space.degree + 4)
        uf, _ = fe.velocity(x, N)
        en = np.einsum("fqk,fk->fq", exact.velocity(fe.points) - uf, fe.normals)
        slip_term = float(np.sum(nu / fe.h_facet[:, None] * fe.weights * en ** 2))

    te = math.sqrt(nu * eps2 + slip_term + l2p2)
    rep = ErrorReport(
        l2_p=math.sqrt(l2p2), l2_u=math.sqrt(l2u2), h1_u=math.sqrt(l2u2 + grad2),
        total_error=te, slip_error=slip_error(state), dofs=count_dofs(space),
        h_max=mesh.h_max)
    if psi is not None:
        rep.psi = float(psi)
        rep.effectivity = rep.psi / te if te > 0 else math.inf
    return rep


# -- rates -------------------------------------------------------------------------

def _check_positive(*seqs):
    arrs = [np.asarray(s, dtype=float) for s in seqs]
    n = len(arrs[0])
    if n < 2 or any(len(a) != n for a in arrs):
        raise ValueError("need equal-length sequences with at least two entries")
    if any(np.any(~(a > 0)) for a in arrs):
        raise ValueError("rates need positive entries")
    return arrs


def rate_h(errors: Sequence[float], hs: Sequence[float]) -> np.ndarray:
    """``log(e_{i-1}/e_i) / log(h_{i-1}/h_i)`` for consecutive pairs."""
    e, h = _check_positive(errors, hs)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def rate_dofs(errors: Sequence[float], dofs: Sequence[float]) -> np.ndarray:
    """``-2 log(e_i/e_{i-1}) / log(D_i/D_{i-1})`` for consecutive pairs."""
    e, d = _check_positive(errors, dofs)
    return -2.0 * np.log(e[1:] / e[:-1]) / np.log(d[1:] / d[:-1])


# -- point sampling and the vortex centre --------------------------------------------

def sample_velocity_grid(state, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Velocity on the tensor grid ``xs x ys``; NaN outside the mesh.

    Returns (len(ys), len(xs), 2).
    """
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    gx, gy = np.meshgrid(xs, ys)
    u, _ = evaluate(state.space, state.coefficients, np.column_stack([gx.ravel(), gy.ravel()]))
    return u.reshape(ys.size, xs.size, 2)


class VortexNotFound(RuntimeError):
    pass


def vortex_center(state, resolution: int = 400, margin: float = 0.2, tol: float = 1e-4,
                  window=None):
    """Interior stagnation point of the primary vortex by ``|u_h|`` minimization.

    The search box is the mesh bounding box shrunk by ``margin`` (a fraction
    of its size) on every side, or ``window = (xmin, xmax, ymin, ymax)``.
    After the coarse sampling the box is repeatedly shrunk to four grid
    spacings around the minimizer and resampled on a 21 x 21 grid until the
    spacing drops below ``tol``. A minimizer on the edge of the initial
    box raises :class:`VortexNotFound`.
    """
    v = state.space.mesh.vertices
    if window is None:
        (xa, ya), (xb, yb) = v.min(axis=0), v.max(axis=0)
        dx, dy = xb - xa, yb - ya
        window = (xa + margin * dx, xb - margin * dx, ya + margin * dy, yb - margin * dy)
    xmin, xmax, ymin, ymax = window
    n = resolution
    xs, ys = np.linspace(xmin, xmax, n), np.linspace(ymin, ymax, n)
    speed = np.linalg.norm(sample_velocity_grid(state, xs, ys), axis=-1)
    if np.all(np.isnan(speed)):
        raise VortexNotFound("search window does not intersect the mesh")
    j, i = np.unravel_index(np.nanargmax(-speed), speed.shape)
    if i in (0, n - 1) or j in (0, n - 1):
        raise VortexNotFound("minimum of |u_h| lies on the search boundary")
    cx, cy = xs[i], ys[j]
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    while max(hx, hy) >= tol:
        xs = np.linspace(cx - 2 * hx, cx + 2 * hx, 21)
        ys = np.linspace(cy - 2 * hy, cy + 2 * hy, 21)
        speed = np.linalg.norm(sample_velocity_grid(state, xs, ys), axis=-1)
        j, i = np.unravel_index(np.nanargmax(-speed), speed.shape)
        cx, cy = xs[i], ys[j]
        hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    return np.array([cx, cy])
