"""
Sparse direct solver backends.

SuperLU (via scipy) is always available. PARDISO (via the optional
``pypardiso`` package) is much faster on the larger meshes; when its import
fails only because the MKL runtime is not on the loader path, the usual
install locations are searched and handed to it through
``PYPARDISO_MKL_RT``.
"""
from __future__ import annotations

import glob
import os
import sys
import sysconfig

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_pardiso = None
_pardiso_tried = False


def _mkl_candidates():
    dirs = [os.path.join(sys.prefix, "lib"), sysconfig.get_config_var("LIBDIR") or "",
            "/usr/local/lib", "/usr/lib", "/usr/lib/x86_64-linux-gnu"]
    for d in dirs:
        for path in sorted(glob.glob(os.path.join(d, "libmkl_rt.so*"))):
            yield path


def load_pardiso():
    """Return the ``pypardiso`` module or ``None`` when it cannot be used."""
    global _pardiso, _pardiso_tried
    if _pardiso_tried:
        return _pardiso
    _pardiso_tried = True
    try:
        import pypardiso
    except ImportError as exc:
        if "mkl_rt" not in str(exc) or "PYPARDISO_MKL_RT" in os.environ:
            return None
        for mod in [m for m in sys.modules if m.startswith("pypardiso")]:
            del sys.modules[mod]
        for path in _mkl_candidates():
            os.environ["PYPARDISO_MKL_RT"] = path
            try:
                import pypardiso
                break
            except ImportError:
                for mod in [m for m in sys.modules if m.startswith("pypardiso")]:
                    del sys.modules[mod]
        else:
            os.environ.pop("PYPARDISO_MKL_RT", None)
            return None
    _pardiso = pypardiso
    return _pardiso


def available_backends():
    names = ["superlu"]
    if load_pardiso() is not None:
        names.append("pardiso")
    return names


class Factorization:
    """Factorized square sparse matrix with a ``solve`` method."""

    def __init__(self, A, backend: str = "auto"):
        if backend not in ("auto", "superlu", "pardiso"):
            raise ValueError("unknown linear solver backend {!r}".format(backend))
        if backend == "auto":
            backend = "pardiso" if load_pardiso() is not None else "superlu"
        self.backend = backend
        if backend == "pardiso":
            mod = load_pardiso()
            if mod is None:
                raise RuntimeError("pypardiso is not available")
            self.A = sp.csr_matrix(A)
            self._solver = mod.PyPardisoSolver()
            try:
                self._solver.factorize(self.A)
            except Exception as exc:  # PyPardisoError derives from Exception only
                raise RuntimeError(str(exc)) from exc
        else:
            self.A = sp.csc_matrix(A)
            self._lu = spla.splu(self.A, permc_spec="COLAMD")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.backend == "pardiso":
            try:
                x = self._solver.solve(self.A, b)
            except Exception as exc:
                raise RuntimeError(str(exc)) from exc
            return np.asarray(x, dtype=float).reshape(b.shape)
        return self._lu.solve(b)

    def free(self):
        if self.backend == "pardiso":
            self._solver.free_memory(everything=True)
