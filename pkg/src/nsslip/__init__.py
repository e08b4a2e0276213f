"""
Stabilized equal-order finite elements for the stationary incompressible
Navier-Stokes equations with Navier slip boundary conditions imposed by
Nitsche's method, with a residual a posteriori estimator and adaptive
newest-vertex-bisection refinement.
"""
from .assembly import NitscheConfig, PhysicalConfig, ProblemConfig, StabConfig, assemble_operator
from .estimator import EstimatorBreakdown, adaptive_loop, estimate, mark_max
from .fem import Space, build_space
from .mesh import DIRICHLET, INTERIOR, NAVIER, Mesh, MeshError, build_lshape, build_unit_square, \
    refine, refine_uniform
from .problems import make_problem, run_uniform
from .solver import SolveConfig, SolverError, SolverState, solve_stationary, \
    solve_with_continuation
from .verification import ErrorReport, ExactSolution, error_norms, mms_lshape, mms_square, \
    vortex_center

__version__ = "0.1.0"
