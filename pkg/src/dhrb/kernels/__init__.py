"""Spot-rendering kernels: compiled core with a numpy fallback.

The compiled extension is preferred when importable; set DHRB_PURE_PYTHON=1
to force the numpy implementation. ``benchmarks/bench_kernels.py`` compares
the two backends on the same workload.
"""

import os

import numpy as np

from . import _lobes_np

if os.environ.get("DHRB_PURE_PYTHON"):
    _impl = _lobes_np
    BACKEND = "numpy"
else:
    try:
        from . import _lobes_c as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _lobes_np
        BACKEND = "numpy"


def eval_lobes(patch_px, lobes, out=None):
    """Point-sample a sum of isotropic Gaussian lobes on a patch_px^2 grid.

    ``lobes`` is an (K, 4) array of rows [dr, dc, sigma, weight]: offsets in
    pixels from the patch centre pixel, lobe std, and energy fraction. Lobes
    carry their continuous 2D normalization, so the returned patch sums to
    ~sum(weight) up to discretization and tail truncation.
    """
    lobes = np.ascontiguousarray(lobes, dtype=np.float64)
    if lobes.ndim != 2 or lobes.shape[1] != 4:
        raise ValueError("lobes must be an (K, 4) array")
    if not np.all(np.isfinite(lobes)):
        raise ValueError("lobes must be finite")
    if lobes.shape[0] and np.any(lobes[:, 2] <= 0):
        raise ValueError("lobe sigma must be strictly positive")
    if patch_px < 1 or patch_px % 2 == 0:
        raise ValueError("patch_px must be a positive odd integer")
    if out is None:
        out = np.empty((patch_px, patch_px), dtype=np.float64)
    elif (out.shape != (patch_px, patch_px) or out.dtype != np.float64
          or not out.flags.c_contiguous):
        raise ValueError("out must be a C-contiguous float64 "
                         "(patch_px, patch_px) array")
    _impl.eval_lobes_into(out, lobes)
    return out
