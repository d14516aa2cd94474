"""Kernel dispatch: compiled extension when available, pure Python otherwise.

Set ``NAVSTACK_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("NAVSTACK_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

cast_rays = _impl.cast_rays
ekf_predict = _impl.ekf_predict
ekf_correct = _impl.ekf_correct
nees3 = _impl.nees3
sector_scan = _impl.sector_scan

__all__ = ["BACKEND", "cast_rays", "sector_scan", "ekf_predict", "ekf_correct", "nees3"]
