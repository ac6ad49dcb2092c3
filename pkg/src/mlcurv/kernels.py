"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
versions in ``_kernels_py`` are used. Set ``MLCURV_BACKEND=python`` to
force the fallback.
"""
import os

from . import _kernels_py

SINUSOID = _kernels_py.SINUSOID
HYP_PARABOLOID = _kernels_py.HYP_PARABOLOID
PARABOLOID = _kernels_py.PARABOLOID
GAUSSIAN = _kernels_py.GAUSSIAN

_compiled = None
if os.environ.get("MLCURV_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def backend_module(name=None):
    """Return the kernel module for ``name`` ('cython' or 'python'), default active."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def reinit_rhs(phi, sgn, nb, sub_p, sub_m, h):
    return _impl.reinit_rhs(phi, sgn, nb, sub_p, sub_m, h)


def monge_newton(kind, prm, X, Y, Z, u0, v0, tol=1e-10, maxit=100):
    return _impl.monge_newton(kind, prm, X, Y, Z, u0, v0, tol, maxit)
