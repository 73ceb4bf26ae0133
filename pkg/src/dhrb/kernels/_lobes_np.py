"""Numpy fallback for the spot-rendering kernel.

Same contract as the compiled extension (dhrb.kernels._lobes_c): point-sample
a sum of isotropic Gaussian lobes onto a square patch. Each lobe is evaluated
separably (outer product of 1D exponentials) so the fallback stays usable for
large defocus blurs.
"""

import numpy as np


def eval_lobes_into(out, lobes):
    """Overwrite ``out`` (P x P, float64) with the lobe sum.

    ``lobes`` rows are [dr, dc, sigma, weight]: offsets in pixels from the
    patch centre pixel, lobe std in pixels, and the fraction of total energy
    carried by the lobe. Each lobe is continuously normalized, i.e. carries
    the factor weight / (2*pi*sigma^2).
    """
    patch_px = out.shape[0]
    half = patch_px // 2
    coords = np.arange(patch_px, dtype=np.float64) - half
    out[:] = 0.0
    for k in range(lobes.shape[0]):
        dr, dc, sigma, weight = lobes[k]
        amp = weight / (2.0 * np.pi * sigma * sigma)
        inv2s2 = 1.0 / (2.0 * sigma * sigma)
        er = np.exp(-((coords - dr) ** 2) * inv2s2)
        ec = np.exp(-((coords - dc) ** 2) * inv2s2)
        out += amp * np.outer(er, ec)
