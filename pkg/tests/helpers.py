"""Small exact solutions and problem builders shared by the tests."""
import numpy as np

from nsslip.assembly import NitscheConfig, PhysicalConfig, ProblemConfig, StabConfig
from nsslip.mesh import build_unit_square, on_line
from nsslip.verification import ExactSolution


def linear_exact(nu=1.0, a=1.0):
    """``u = (1 + a x, -a y)``, ``p = x + 2 y``: reproduced exactly by P1 and P2."""

    def velocity(pts):
        pts = np.asarray(pts, float)
        return np.stack([1.0 + a * pts[..., 0], -a * pts[..., 1]], axis=-1)

    def grad(pts):
        out = np.zeros(np.shape(pts)[:-1] + (2, 2))
        out[..., 0, 0], out[..., 1, 1] = a, -a
        return out

    def hess(pts):
        return np.zeros(np.shape(pts)[:-1] + (2, 2, 2))

    def pressure(pts):
        pts = np.asarray(pts, float)
        return pts[..., 0] + 2.0 * pts[..., 1]

    def pressure_grad(pts):
        out = np.zeros(np.shape(pts)[:-1] + (2,))
        out[..., 0], out[..., 1] = 1.0, 2.0
        return out

    return ExactSolution(nu, velocity, grad, hess, pressure, pressure_grad, "linear")


def quadratic_exact(nu=1.0):
    """Divergence-free quadratic velocity with linear pressure (exact for P2)."""

    def velocity(pts):
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([x * x + 0.5 * y, -2.0 * x * y + 0.3], axis=-1)

    def grad(pts):
        x, y = pts[..., 0], pts[..., 1]
        out = np.zeros(np.shape(pts)[:-1] + (2, 2))
        out[..., 0, 0], out[..., 0, 1] = 2 * x, 0.5
        out[..., 1, 0], out[..., 1, 1] = -2 * y, -2 * x
        return out

    def hess(pts):
        out = np.zeros(np.shape(pts)[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = 2.0
        out[..., 1, 0, 1] = out[..., 1, 1, 0] = -2.0
        return out

    def pressure(pts):
        return 3.0 * pts[..., 0] - pts[..., 1]

    def pressure_grad(pts):
        out = np.zeros(np.shape(pts)[:-1] + (2,))
        out[..., 0], out[..., 1] = 3.0, -1.0
        return out

    return ExactSolution(nu, velocity, grad, hess, pressure, pressure_grad, "quadratic")


def patch_problem(theta=1, n=3, nu=1.0, beta=10.0, gamma=10.0, exact=None):
    """Unit square, Navier on ``y = 0``, data of ``exact`` (linear field by default)."""
    exact = exact or linear_exact(nu)
    cfg = ProblemConfig(NitscheConfig(theta, gamma, beta), StabConfig(), exact.physical(beta))
    mesh = build_unit_square(n, on_line(y=0.0))
    return mesh, cfg, exact


def stokes_config(theta=1, nu=1.0, beta=0.0, gamma=10.0):
    return ProblemConfig(NitscheConfig(theta, gamma, beta), StabConfig(), PhysicalConfig(nu))
