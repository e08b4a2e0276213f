"""
Command-line driver: ``nsslip run <config> [--override key=value ...] [--deterministic]``.

The configuration file holds one ``key = value`` pair per line; ``#`` starts
a comment. Recognised keys (defaults in brackets):

problem         mms-square | mms-lshape | cavity | custom-mesh  (required)
mesh            mesh file, required for custom-mesh
data            data set used on a custom mesh: mms-square | mms-lshape | cavity [cavity]
variant         printed | solenoidal  [printed]   square manufactured velocity
walls           noslip | slip  [noslip]           cavity side and bottom walls
degree          1 | 2  [1]
theta           -1 | 0 | 1  [1]
gamma, beta     Nitsche penalty and friction [10, 10]
nu              target viscosity [1]
continuation    comma separated viscosity ladder, ending at nu [empty]
lam, m_k, p_norm  stabilization parameters [1, 0.0814814, 2]
refinement      uniform | adaptive  [uniform]
n0              subdivisions of the initial mesh [4]; ignored for custom-mesh
levels          number of uniform levels [5]; each level halves h (a custom
                mesh is bisected twice per level)
marking         maximum-marking fraction for adaptive runs [0.5]
max_dofs        adaptive stopping size [100000]
max_levels      adaptive solve limit [30]
newton          true | false [false]
anderson        Anderson acceleration depth [0]
linear_solver   auto | superlu | pardiso [auto]
tol_rel, tol_abs, max_iters   nonlinear stopping [1e-8, 1e-9, 50]
fields          write per-level VTK files: true | false [true]
output          output directory [output]

Exit status: 0 success, 2 invalid configuration, 3 solver failure,
4 input/output error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("nsslip")


class ConfigError(ValueError):
    """All validation problems of a configuration, reported together."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join("  - " + e for e in self.errors))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _theta(text: str) -> int:
    v = float(text)
    if v not in (-1.0, 0.0, 1.0):
        raise ValueError("must be one of -1, 0, 1")
    return int(v)


@dataclass
class RunConfig:
    problem: str = ""
    mesh: str = ""
    data: str = "cavity"
    variant: str = "printed"
    walls: str = "noslip"
    degree: int = 1
    theta: int = 1
    gamma: float = 10.0
    beta: float = 10.0
    nu: float = 1.0
    continuation: Tuple[float, ...] = ()
    lam: float = 1.0
    m_k: float = 0.0814814
    p_norm: float = 2.0
    refinement: str = "uniform"
    n0: int = 4
    levels: int = 5
    marking: float = 0.5
    max_dofs: int = 100000
    max_levels: int = 30
    newton: bool = False
    anderson: int = 0
    linear_solver: str = "auto"
    tol_rel: float = 1e-8
    tol_abs: float = 1e-9
    max_iters: int = 50
    fields: bool = True
    output: str = "output"


_PARSERS = {
    "problem": str, "mesh": str, "data": str, "variant": str, "walls": str,
    "degree": int, "theta": _theta, "gamma": float, "beta": float, "nu": float,
    "continuation": _floats, "lam": float, "m_k": float, "p_norm": float,
    "refinement": str, "n0": int, "levels": int, "marking": float, "max_dofs": int,
    "max_levels": int, "newton": _bool, "anderson": int, "linear_solver": str,
    "tol_rel": float, "tol_abs": float, "max_iters": int, "fields": _bool, "output": str,
}
_CHOICES = {
    "problem": ("mms-square", "mms-lshape", "cavity", "custom-mesh"),
    "data": ("mms-square", "mms-lshape", "cavity"),
    "variant": ("printed", "solenoidal"),
    "walls": ("noslip", "slip"),
    "refinement": ("uniform", "adaptive"),
    "linear_solver": ("auto", "superlu", "pardiso"),
}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def parse_pairs(lines: Sequence[str], source: str = "<config>") -> Tuple[Dict[str, str], List[str]]:
    pairs: Dict[str, str] = {}
    errors: List[str] = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append("{}:{}: expected 'key = value', got {!r}".format(source, lineno, line))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            errors.append("{}:{}: duplicate key '{}'".format(source, lineno, key))
        pairs[key] = value
    return pairs, errors


def build_config(pairs: Dict[str, str], errors: Optional[List[str]] = None) -> RunConfig:
    """Convert and validate ``key -> text`` pairs; raise :class:`ConfigError` listing every problem."""
    from .assembly import NitscheConfig, PhysicalConfig, StabConfig

    errors = list(errors or [])
    cfg = RunConfig()
    for key, text in pairs.items():
        if key not in _PARSERS:
            errors.append("{}: unknown key".format(key))
            continue
        try:
            value = _PARSERS[key](text)
        except ValueError as exc:
            errors.append("{}: invalid value {!r} ({})".format(key, text, exc))
            continue
        if key in _CHOICES and value not in _CHOICES[key]:
            errors.append("{}: {!r} is not one of {}".format(key, value, ", ".join(_CHOICES[key])))
            continue
        setattr(cfg, key, value)

    if "problem" not in pairs:
        errors.append("problem: required")
    if cfg.problem == "custom-mesh" and not cfg.mesh:
        errors.append("mesh: required for problem custom-mesh")
    # Re-run the model-level validation so messages name the offending field.
    for key, make in (("theta/gamma/beta", lambda: NitscheConfig(cfg.theta, cfg.gamma, cfg.beta)),
                      ("lam/m_k/p_norm", lambda: StabConfig(cfg.lam, cfg.m_k, cfg.p_norm)),
                      ("nu", lambda: PhysicalConfig(cfg.nu))):
        try:
            make()
        except ValueError as exc:
            errors.append("{}: {}".format(key, exc))
    if cfg.degree not in (1, 2):
        errors.append("degree: must be 1 or 2")
    if cfg.continuation:
        if any(not v > 0 for v in cfg.continuation):
            errors.append("continuation: viscosities must be positive")
        elif abs(cfg.continuation[-1] - cfg.nu) > 1e-14 * cfg.nu:
            errors.append("continuation: ladder must end at nu = {}".format(cfg.nu))
    if cfg.n0 < 1:
        errors.append("n0: must be at least 1")
    if cfg.levels < 1:
        errors.append("levels: must be at least 1")
    if not 0.0 < cfg.marking < 1.0:
        errors.append("marking: must lie in (0, 1)")
    for key in ("max_dofs", "max_levels", "max_iters"):
        if getattr(cfg, key) < 1:
            errors.append("{}: must be at least 1".format(key))
    if cfg.anderson < 0:
        errors.append("anderson: must be non-negative")
    if not (cfg.tol_rel > 0 and cfg.tol_abs > 0):
        errors.append("tol_rel/tol_abs: must be positive")
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: str, overrides: Sequence[str] = ()) -> RunConfig:
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(["cannot read {}: {}".format(path, exc.strerror)]) from None
    pairs, errors = parse_pairs(lines, path)
    extra, more = parse_pairs(overrides, "--override")
    pairs.update(extra)
    return build_config(pairs, errors + more)


# -- running ------------------------------------------------------------------------

def _problem(cfg: RunConfig):
    from .assembly import StabConfig
    from .problems import make_problem

    name = cfg.data if cfg.problem == "custom-mesh" else cfg.problem
    return make_problem(name, nu=cfg.nu, theta=cfg.theta, gamma=cfg.gamma, beta=cfg.beta,
                        stab=StabConfig(cfg.lam, cfg.m_k, cfg.p_norm), variant=cfg.variant,
                        walls=cfg.walls)


def _solve_config(cfg: RunConfig):
    from .solver import SolveConfig

    return SolveConfig(tol_rel=cfg.tol_rel, tol_abs=cfg.tol_abs, max_iters=cfg.max_iters,
                       continuation=cfg.continuation, newton=cfg.newton,
                       linear_solver=cfg.linear_solver, anderson=cfg.anderson)


class LevelFailure(RuntimeError):
    def __init__(self, level: int, cause: Exception):
        self.level = level
        super().__init__("solver failed on level {}: {}".format(level, cause))


def run(cfg: RunConfig, out=sys.stdout) -> Dict[str, object]:
    """Execute a configuration and write the result files.

    Returns a summary dict. Raises :class:`LevelFailure` when a nonlinear
    solve fails and :class:`OSError`/:class:`~nsslip.mesh.MeshError` on
    file problems.
    """
    from . import io
    from .estimator import adaptive_loop, estimate
    from .fem import build_space
    from .mesh import NAVIER, refine_uniform
    from .problems import LevelResult, solve_level
    from .solver import SolverError
    from .verification import count_dofs, error_norms, slip_error, \
        vortex_center, VortexNotFound

    problem = _problem(cfg)
    scfg = _solve_config(cfg)
    outdir = io.ensure_dir(cfg.output)
    if cfg.fields:
        io.ensure_dir(os.path.join(outdir, "fields"))

    if cfg.problem == "custom-mesh":
        base = io.read_mesh(cfg.mesh)
        mesh_at = lambda i: refine_uniform(base, 2 * i)  # noqa: E731
    else:
        mesh_at = lambda i: problem.mesh(cfg.n0 * 2 ** i)  # noqa: E731

    def emit(level, state):
        if cfg.fields:
            io.write_fields(state, os.path.join(outdir, "fields", "level_{:02d}.vtk".format(level)),
                            title="{} level {}".format(cfg.problem, level))

    entries: list = []
    state = None
    if cfg.refinement == "uniform":
        prev = None
        for i in range(cfg.levels):
            space = build_space(mesh_at(i), cfg.degree)
            try:
                state = solve_level(space, problem.config, scfg, prev)
            except (SolverError, RuntimeError) as exc:
                raise LevelFailure(i, exc) from exc
            psi = estimate(state, problem.config).psi
            errs = error_norms(state, problem.exact, psi) if problem.exact is not None else None
            entries.append(LevelResult(i, count_dofs(space), space.mesh.h_max, psi,
                                       state.iterations, 0.0, slip_error(state), errs))
            emit(i, state)
            print("level {}: dofs={} psi={:.6e}".format(i, entries[-1].dofs, psi), file=out)
        rates = "h"
    else:
        def cb(rec, st):
            entries.append(rec)
            emit(rec.level, st)
            print("level {}: dofs={} psi={:.6e} marked={}".format(rec.level, rec.dofs, rec.psi,
                                                                  rec.n_marked), file=out)
        try:
            res = adaptive_loop(mesh_at(0), cfg.degree, problem.config, scfg, theta=cfg.marking,
                                max_dofs=cfg.max_dofs, max_iters=cfg.max_levels,
                                exact=problem.exact, callback=cb)
        except (SolverError, RuntimeError) as exc:
            raise LevelFailure(len(entries), exc) from exc
        state = res.state
        rates = "dofs"

    io.write_report(os.path.join(outdir, "report.csv"), io.report_rows(entries, rates))
    summary: Dict[str, object] = {"levels": len(entries), "output": outdir}
    if state.space.mesh.facets_with_tag(NAVIER).size:
        io.write_slip(os.path.join(outdir, "slip.csv"), entries)
    lines = ["problem,{}".format(cfg.problem), "levels,{}".format(len(entries)),
             "final_dofs,{}".format(entries[-1].dofs)]
    if (cfg.data if cfg.problem == "custom-mesh" else cfg.problem) == "cavity":
        try:
            center = vortex_center(state)
        except VortexNotFound as exc:
            log.warning("no vortex center: %s", exc)
        else:
            summary["vortex_center"] = center
            lines.append("vortex_center,{},{}".format(io.fmt_float(center[0]),
                                                      io.fmt_float(center[1])))
            print("vortex center: ({:.4f}, {:.4f})".format(*center), file=out)
    with open(os.path.join(outdir, "summary.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return summary


def _set_deterministic():
    # Single-threaded, reproducible floating point in MKL/OpenMP/BLAS. Must
    # happen before the numerical libraries spin up their thread pools.
    for var in ("OMP_NUM_THREADS", "MKL_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        os.environ[var] = "1"
    os.environ["MKL_CBWR"] = "COMPATIBLE"


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="nsslip", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a configuration file")
    p_run.add_argument("config")
    p_run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration entry (repeatable)")
    p_run.add_argument("--deterministic", action="store_true",
                       help="single-threaded numerics for bitwise-reproducible output")
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    if args.deterministic:
        _set_deterministic()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .mesh import MeshError

    try:
        cfg = load_config(args.config, args.override)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    try:
        run(cfg)
    except LevelFailure as exc:
        print("error: {}".format(exc), file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, MeshError) as exc:
        print("error: {}".format(exc), file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
