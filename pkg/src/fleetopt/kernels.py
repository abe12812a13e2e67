"""Numerical kernel backend, chosen once at import.

The compiled Cython extension is used when it was built; otherwise (or when
``FLEETOPT_PURE_PYTHON`` is set to a non-empty value) the numpy fallback is
loaded. ``BACKEND`` records which one is active.
"""
import os

if os.environ.get("FLEETOPT_PURE_PYTHON"):
    from . import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _pykernels as _impl

        BACKEND = "python"

sq_dists = _impl.sq_dists
assign_nearest = _impl.assign_nearest
matern52 = _impl.matern52
gp_nlml = _impl.gp_nlml
matern52_ls_grad = _impl.matern52_ls_grad
mc_expected_improvement = _impl.mc_expected_improvement

__all__ = [
    "BACKEND",
    "assign_nearest",
    "gp_nlml",
    "matern52",
    "matern52_ls_grad",
    "mc_expected_improvement",
    "sq_dists",
]
