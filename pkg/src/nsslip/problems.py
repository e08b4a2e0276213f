"""
Standard problem setups and the uniform-refinement study driver.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .assembly import NitscheConfig, PhysicalConfig, ProblemConfig, StabConfig
from .estimator import estimate
from .fem import build_space, transfer
from .mesh import Mesh, build_lshape, build_unit_square, on_line, any_of
from .solver import SolveConfig, SolverError, solve_stationary, solve_with_continuation
from .verification import ErrorReport, ExactSolution, count_dofs, error_norms, mms_lshape, \
    mms_square, slip_error

log = logging.getLogger(__name__)

PROBLEMS = ("mms-square", "mms-lshape", "cavity")


@dataclass
class Problem:
    """Mesh builder, configuration and (optionally) exact solution."""

    name: str
    config: ProblemConfig
    exact: Optional[ExactSolution] = None
    walls: str = ""

    def mesh(self, n: int) -> Mesh:
        if self.name == "mms-square":
            return build_unit_square(n, on_line(y=1.0))
        if self.name == "mms-lshape":
            return build_lshape(n)
        if self.name == "cavity":
            if self.walls == "slip":
                return build_unit_square(n, any_of(on_line(x=0.0), on_line(x=1.0), on_line(y=0.0)))
            return build_unit_square(n)
        raise ValueError("unknown problem {!r}".format(self.name))


def lid_velocity(points):
    """``(1, 0)`` on ``y = 1`` (corners included), zero elsewhere."""
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape)
    out[..., 0] = np.where(np.abs(pts[..., 1] - 1.0) < 1e-12, 1.0, 0.0)
    return out


def make_problem(name: str, nu: float = 1.0, theta: int = 1, gamma: float = 10.0,
                 beta: float = 10.0, stab: Optional[StabConfig] = None,
                 variant: str = "printed", walls: str = "noslip") -> Problem:
    """Build one of the standard problems.

    ``variant`` selects the square manufactured velocity (see
    :func:`~nsslip.verification.mms_square`); ``walls`` is "slip" or
    "noslip" for the cavity's three fixed walls.
    """
    nitsche = NitscheConfig(theta=theta, gamma=gamma, beta=beta)
    stab = stab or StabConfig()
    if name == "mms-square":
        exact = mms_square(nu, variant)
        return Problem(name, ProblemConfig(nitsche, stab, exact.physical(beta)), exact)
    if name == "mms-lshape":
        exact = mms_lshape(nu)
        return Problem(name, ProblemConfig(nitsche, stab, exact.physical(beta)), exact)
    if name == "cavity":
        if walls not in ("slip", "noslip"):
            raise ValueError("walls must be 'slip' or 'noslip'")
        phys = PhysicalConfig(nu=nu, dirichlet=lid_velocity)
        return Problem(name, ProblemConfig(nitsche, stab, phys), None, walls)
    raise ValueError("unknown problem {!r}; expected one of {}".format(name, PROBLEMS))


@dataclass
class LevelResult:
    n: int
    dofs: int
    h_max: float
    psi: float
    iterations: int
    seconds: float
    slip_error: float
    errors: Optional[ErrorReport] = None
    state: Optional[object] = field(default=None, repr=False)


def solve_level(space, cfg: ProblemConfig, solve_config: SolveConfig, previous=None):
    """Solve on ``space``; warm-start from ``previous`` (a state on another mesh).

    Without a previous state the full viscosity ladder is run. With one, its
    solution is interpolated onto ``space`` and only the target viscosity
    is solved.
    """
    if previous is None:
        return solve_with_continuation(space, cfg, solve_config)
    from .solver import SolverState
    x0 = transfer(previous.space, previous.coefficients, space)
    init = SolverState(space, x0, nu=previous.nu, multiplier=previous.multiplier)
    try:
        return solve_stationary(space, cfg, init, solve_config)
    except SolverError:
        log.info("warm start failed on %d dofs; rerunning the viscosity ladder", space.n_dofs)
        return solve_with_continuation(space, cfg, solve_config)


def run_uniform(problem: Problem, levels: Sequence[int], degree: int = 1,
                solve_config: Optional[SolveConfig] = None, warm_start: bool = True,
                keep_states: bool = False, callback=None) -> List[LevelResult]:
    """Solve on a sequence of uniform meshes ``problem.mesh(n)`` for ``n`` in ``levels``."""
    solve_config = solve_config or SolveConfig()
    results: List[LevelResult] = []
    prev = None
    for i, n in enumerate(levels):
        t0 = time.perf_counter()
        space = build_space(problem.mesh(n), degree)
        try:
            state = solve_level(space, problem.config, solve_config, prev if warm_start else None)
        except SolverError as exc:
            raise SolverError("level {} (n={}): {}".format(i, n, exc), exc.residual_history,
                              exc.nu, exc.state) from exc
        psi = estimate(state, problem.config).psi
        errs = error_norms(state, problem.exact, psi=psi) if problem.exact is not None else None
        res = LevelResult(n, count_dofs(space), space.mesh.h_max, psi, state.iterations,
                          time.perf_counter() - t0, slip_error(state), errs,
                          state if keep_states else None)
        results.append(res)
        log.info("n=%d dofs=%d psi=%.4e iters=%d %.1fs", n, res.dofs, psi, res.iterations,
                 res.seconds)
        if callback is not None:
            callback(res, state)
        prev = state
    return results
