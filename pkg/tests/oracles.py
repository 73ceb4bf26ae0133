"""Independent reference implementations used to cross-check the library.

Everything here is written the slow, obvious way — exhaustive scans, direct
sums, exact integer arithmetic — so agreement with the fast implementations
is meaningful.
"""

import itertools
import math
from fractions import Fraction

import numpy as np


def brute_force_match(det_xy, tru_xy, radius):
    """Best partial matching by full enumeration: maximize the number of
    pairs within ``radius``, then minimize the summed distance.

    Returns (count, total_distance). Any partial matching extends to a
    bijection of the padded sets without losing its feasible pairs, so
    scanning all bijections covers all partial matchings.
    """
    det_xy = np.asarray(det_xy, dtype=float).reshape(-1, 2)
    tru_xy = np.asarray(tru_xy, dtype=float).reshape(-1, 2)
    n, m = len(det_xy), len(tru_xy)
    size = max(n, m)
    best = (0, 0.0)
    have_best = False
    for perm in itertools.permutations(range(size)):
        count = 0
        total = 0.0
        for i in range(size):
            j = perm[i]
            if i >= n or j >= m:
                continue
            d = math.hypot(det_xy[i, 0] - tru_xy[j, 0],
                           det_xy[i, 1] - tru_xy[j, 1])
            if d <= radius:
                count += 1
                total += d
        key = (-count, total)
        if not have_best or key < (-best[0], best[1]):
            best = (count, total)
            have_best = True
    return best


def triangle_threshold_scan(counts):
    """Triangle threshold by literal geometry with exact arithmetic.

    Squared perpendicular distance from (i, counts[i]) to the chord through
    the peak and tail points, compared as exact fractions; candidates are
    scanned outward from the peak so ties keep the bin nearest the peak.
    """
    counts = [int(c) for c in counts]
    if all(c == 0 for c in counts):
        raise ValueError("all-zero histogram")
    peak = max(range(len(counts)), key=lambda i: (counts[i], -i))
    nonzero = [i for i, c in enumerate(counts) if c > 0]
    tail = nonzero[-1]
    if tail == peak:
        tail = nonzero[0]
    if tail == peak:
        return peak
    cp, ct = counts[peak], counts[tail]
    chord_sq = (tail - peak) ** 2 + (ct - cp) ** 2
    step = 1 if tail > peak else -1
    best, best_d2 = peak, Fraction(-1)
    for i in range(peak + step, tail, step):
        cross = (tail - peak) * (counts[i] - cp) - (i - peak) * (ct - cp)
        d2 = Fraction(cross * cross, chord_sq)
        if d2 > best_d2:
            best, best_d2 = i, d2
    return best


def direct_circular_xcorr(a, b):
    """O(N^4) circular cross-correlation of zero-mean unit-norm images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    az = a - a.mean()
    az /= np.sqrt((az * az).sum())
    bz = b - b.mean()
    bz /= np.sqrt((bz * bz).sum())
    height, width = a.shape
    out = np.empty((height, width))
    for dr in range(height):
        for dc in range(width):
            out[dr, dc] = (az * np.roll(bz, (-dr, -dc), axis=(0, 1))).sum()
    return out


def oversampled_gaussian_argmax(amp, row0, col0, sigma, shape, factor=100):
    """Argmax of a continuous Gaussian bump located by dense evaluation."""
    height, width = shape
    rows = np.linspace(0, height - 1, (height - 1) * factor + 1)
    cols = np.linspace(0, width - 1, (width - 1) * factor + 1)
    rr = np.exp(-((rows - row0) ** 2) / (2 * sigma * sigma))
    cc = np.exp(-((cols - col0) ** 2) / (2 * sigma * sigma))
    values = amp * np.outer(rr, cc)
    idx = np.unravel_index(np.argmax(values), values.shape)
    return rows[idx[0]], cols[idx[1]]


def oversampled_centroid(render_fn, shape, factor=100):
    """Intensity centroid of ``render_fn(rows, cols)`` on a dense subgrid.

    ``render_fn`` takes broadcastable row/col coordinate arrays in pixel
    units and returns intensities.
    """
    height, width = shape
    rows = np.linspace(-0.5, height - 0.5, height * factor, endpoint=False)
    rows += 0.5 / factor * 0.5  # sample midpoints of the fine cells
    cols = np.linspace(-0.5, width - 0.5, width * factor, endpoint=False)
    cols += 0.5 / factor * 0.5
    values = render_fn(rows[:, None], cols[None, :])
    total = values.sum()
    r = (values.sum(axis=1) @ rows) / total
    c = (values.sum(axis=0) @ cols) / total
    return r, c


def interval_scan_dof(z_grid, ji, threshold, eps=1e-12):
    """Depth of field by scanning every contiguous window containing z=0."""
    z = list(z_grid)
    i0 = min(range(len(z)), key=lambda i: abs(z[i]))
    best = None
    for lo in range(len(z)):
        for hi in range(lo, len(z)):
            if not lo <= i0 <= hi:
                continue
            window = ji[lo:hi + 1]
            if all(math.isfinite(v) and v >= threshold - eps for v in window):
                extent = z[hi] - z[lo]
                if best is None or extent > best:
                    best = extent
    return 0.0 if best is None else best
