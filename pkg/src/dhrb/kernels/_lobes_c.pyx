# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled spot-rendering kernel: point-sampled sums of isotropic Gaussian
lobes on a square patch. Mirrors dhrb.kernels._lobes_np exactly (same
evaluation order), so the two backends agree to float rounding."""

from libc.math cimport exp, M_PI

import numpy as np


def eval_lobes_into(double[:, ::1] out, double[:, ::1] lobes):
    """Overwrite ``out`` (P x P) with the lobe sum; see the numpy fallback."""
    cdef Py_ssize_t patch_px = out.shape[0]
    cdef Py_ssize_t n_lobes = lobes.shape[0]
    cdef Py_ssize_t half = patch_px // 2
    cdef Py_ssize_t i, j, k
    cdef double dr, dc, sigma, weight, amp, inv2s2, x, row_factor
    cdef double[::1] er = np.empty(patch_px)
    cdef double[::1] ec = np.empty(patch_px)

    for i in range(patch_px):
        for j in range(patch_px):
            out[i, j] = 0.0

    for k in range(n_lobes):
        dr = lobes[k, 0]
        dc = lobes[k, 1]
        sigma = lobes[k, 2]
        weight = lobes[k, 3]
        amp = weight / (2.0 * M_PI * sigma * sigma)
        inv2s2 = 1.0 / (2.0 * sigma * sigma)
        for i in range(patch_px):
            x = (i - half) - dr
            er[i] = exp(-x * x * inv2s2)
        for j in range(patch_px):
            x = (j - half) - dc
            ec[j] = exp(-x * x * inv2s2)
        for i in range(patch_px):
            row_factor = amp * er[i]
            for j in range(patch_px):
                out[i, j] += row_factor * ec[j]
