"""
Picard iteration, viscosity continuation and the linear-solve contract.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ._backends import Factorization
from .assembly import LinearSystem, ProblemConfig, apply_dirichlet, assemble_operator
from .fem import Space

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Nonlinear iteration did not converge."""

    def __init__(self, message, residual_history=(), nu=None, state=None):
        super().__init__(message)
        self.residual_history = list(residual_history)
        self.nu = nu
        self.state = state


class SingularSystemError(RuntimeError):
    """Factorization failed or the solve missed the residual contract."""


@dataclass
class SolveConfig:
    tol_rel: float = 1e-8
    tol_abs: float = 1e-9
    max_iters: int = 50
    continuation: Sequence[float] = ()
    newton: bool = False
    linear_solver: str = "auto"
    anderson: int = 0

    def __post_init__(self):
        if self.anderson < 0:
            raise ValueError("anderson depth must be non-negative")
        if self.linear_solver not in ("auto", "superlu", "pardiso"):
            raise ValueError("unknown linear solver {!r}".format(self.linear_solver))
        if not (self.tol_rel > 0 and self.tol_abs > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolverState:
    space: Space
    coefficients: np.ndarray
    iterations: int = 0
    residual_history: List[float] = field(default_factory=list)
    increment_history: List[float] = field(default_factory=list)
    converged: bool = False
    nu: Optional[float] = None
    multiplier: float = 0.0

    @property
    def n_nodes(self):
        return self.space.n_nodes

    @property
    def velocity(self) -> np.ndarray:
        """(N, 2) nodal velocity values."""
        N = self.n_nodes
        return np.column_stack([self.coefficients[:N], self.coefficients[N:2 * N]])

    @property
    def pressure(self) -> np.ndarray:
        return self.coefficients[2 * self.n_nodes:]

    def pressure_mean(self) -> float:
        m = self.space.pressure_mass
        return float(m @ self.pressure / m.sum())

    @classmethod
    def zero(cls, space: Space) -> "SolverState":
        return cls(space, np.zeros(space.n_dofs))


# -- linear algebra -----------------------------------------------------------

def linear_solve(system, rhs=None, rtol: float = 1e-10, backend: str = "auto") -> np.ndarray:
    """Direct sparse solve with a relative residual check.

    Accepts a :class:`LinearSystem` or a matrix plus ``rhs``. Indefinite
    matrices are fine (LU with pivoting). ``backend`` is "superlu",
    "pardiso" or "auto" (PARDISO when installed). A failing factorization
    raises :class:`SingularSystemError`; a residual above ``rtol`` after one
    step of iterative refinement raises the same error with the residual in
    the message.
    """
    if isinstance(system, LinearSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system, rhs
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError("system must be square and match the right-hand side")
    try:
        lu = Factorization(A, backend)
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SingularSystemError("factorization failed: {}".format(exc)) from exc
    bnorm = np.linalg.norm(b)
    scale = bnorm if bnorm > 0 else 1.0
    r = b - A @ x
    if np.linalg.norm(r) > rtol * scale and np.all(np.isfinite(x)):
        x += lu.solve(r)
        r = b - A @ x
    lu.free()
    rel = np.linalg.norm(r) / scale
    if not np.all(np.isfinite(x)) or rel > rtol:
        raise SingularSystemError("relative residual {:.3e} exceeds {:.1e}".format(rel, rtol))
    return x


def enforce_zero_mean(obj, space: Optional[Space] = None):
    """Pressure zero-mean constraint.

    For a :class:`LinearSystem` append one multiplier unknown coupling
    ``int p = 0`` (bordered matrix); for a :class:`SolverState` subtract the
    pressure mean.
    """
    if isinstance(obj, SolverState):
        N = obj.n_nodes
        x = obj.coefficients.copy()
        x[2 * N:] -= obj.pressure_mean()
        obj.coefficients = x
        return obj
    if space is None:
        raise ValueError("space required to border a linear system")
    if obj.bordered:
        return obj
    n = space.n_dofs
    m = np.zeros(n)
    m[2 * space.n_nodes:] = space.pressure_mass
    col = sp.csr_matrix(m.reshape(-1, 1))
    A = sp.bmat([[obj.matrix, col], [col.T, None]], format="csr")
    return LinearSystem(A, np.append(obj.rhs, 0.0), bordered=True)


def build_system(space: Space, x_adv, cfg: ProblemConfig, newton=False) -> LinearSystem:
    """Assembled, Dirichlet-constrained and bordered system about ``x_adv``."""
    system = assemble_operator(space, x_adv, cfg, newton=newton)
    system = apply_dirichlet(system, space, cfg.physical.dirichlet)
    return enforce_zero_mean(system, space)


# -- nonlinear iteration --------------------------------------------------------

class _Anderson:
    """Type-II Anderson mixing for a fixed-point map ``x -> g(x)``."""

    def __init__(self, depth: int):
        self.depth = depth
        self.g_hist: List[np.ndarray] = []
        self.f_hist: List[np.ndarray] = []

    def update(self, x, g):
        f = g - x
        self.g_hist.append(g)
        self.f_hist.append(f)
        if len(self.f_hist) > self.depth + 1:
            self.g_hist.pop(0)
            self.f_hist.pop(0)
        if len(self.f_hist) < 2:
            return g
        dF = np.column_stack([b - a for a, b in zip(self.f_hist, self.f_hist[1:])])
        dG = np.column_stack([b - a for a, b in zip(self.g_hist, self.g_hist[1:])])
        coef, *_ = np.linalg.lstsq(dF, f, rcond=None)
        return g - dG @ coef


def solve_stationary(space: Space, cfg: ProblemConfig, initial: Optional[SolverState] = None,
                     config: Optional[SolveConfig] = None) -> SolverState:
    """Fixed-point iteration on the frozen-advection operator.

    Each step assembles the operator about the current iterate, records the
    Euclidean residual of the current iterate in that system, and solves for
    the next iterate. Convergence is declared when the residual is below
    ``tol_abs`` or the relative coefficient increment is below ``tol_rel``.

    With ``config.anderson = m > 0`` the next iterate is the Anderson
    mixture of the last ``m + 1`` fixed-point images; the operator itself is
    unchanged, only the sequence of advection fields differs.
    """
    config = config or SolveConfig()
    n = space.n_dofs
    if initial is None:
        x = np.zeros(n)
        lam = 0.0
    else:
        if initial.coefficients.shape[0] != n:
            raise ValueError("initial state does not match the space")
        x = initial.coefficients.copy()
        lam = initial.multiplier
    res_hist, inc_hist = [], []
    nu = cfg.physical.nu
    mixer = _Anderson(config.anderson)
    for it in range(1, config.max_iters + 1):
        system = build_system(space, x, cfg, newton=config.newton and it > 1)
        xa = np.append(x, lam)
        res = float(np.linalg.norm(system.matrix @ xa - system.rhs))
        res_hist.append(res)
        if res <= config.tol_abs:
            state = SolverState(space, x, it - 1, res_hist, inc_hist, True, nu, lam)
            return enforce_zero_mean(state)
        g = linear_solve(system, backend=config.linear_solver)
        inc = float(np.linalg.norm(g[:n] - x) / max(np.linalg.norm(g[:n]), 1e-300))
        inc_hist.append(inc)
        log.debug("nu=%g it=%d residual=%.3e increment=%.3e", nu, it, res, inc)
        if config.anderson and inc > config.tol_rel:
            xa_new = mixer.update(xa, g)
        else:
            xa_new = g
        x, lam = xa_new[:n], float(xa_new[n])
        if inc <= config.tol_rel:
            state = SolverState(space, x, it, res_hist, inc_hist, True, nu, lam)
            return enforce_zero_mean(state)
    state = SolverState(space, x, config.max_iters, res_hist, inc_hist, False, nu, lam)
    raise SolverError("no convergence in {} iterations at nu={}".format(config.max_iters, nu),
                      res_hist, nu, state)


def solve_with_continuation(space: Space, cfg: ProblemConfig,
                            config: Optional[SolveConfig] = None,
                            initial: Optional[SolverState] = None) -> SolverState:
    """Solve along the viscosity ladder ending at ``cfg.physical.nu``.

    Rungs above the target reuse the target's data with a larger viscosity;
    each rung starts from the previous rung's solution.
    """
    config = config or SolveConfig()
    target = cfg.physical.nu
    ladder = [float(v) for v in config.continuation if v != target]
    if any(b > a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("continuation ladder must be non-increasing")
    state = initial
    for nu in ladder + [target]:
        try:
            state = solve_stationary(space, cfg.with_nu(nu), state, config)
        except SolverError as exc:
            exc.nu = nu
            raise
    return state
