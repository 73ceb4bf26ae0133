"""Subpixel image registration by dual-peak correlation.

A twin-lobe PSF correlated against a single-spot render produces two
correlation maxima straddling the true displacement; the midpoint of the two
subpixel-refined peaks is therefore the shift estimate. On single-peaked
correlation surfaces the second maximum is far weaker and is gated out, which
reduces the estimator to ordinary single-peak phase correlation.

Conventions: shifts are (dx, dy) with ``shifted[r, c] = original[r - dy,
c - dx]``; circular correlation indices unwrap to the signed range
(-N/2, N/2].
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .optics import PlaneImage

# Second peak participates in the midpoint only when its score is at least
# this fraction of the first; twin lobes correlate near-equally, while
# autocorrelation side lobes sit near half height.
TWIN_GATE_DEFAULT = 0.75

MIN_SEPARATION_DEFAULT = 3


@dataclass
class CorrelationMap:
    """Circular correlation surface; index (0, 0) is zero shift and indices
    wrap."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("correlation map must be 2D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("correlation map must be finite")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class PeakEstimate:
    """One correlation maximum: signed subpixel (row, col) in shift units,
    the map value at the underlying integer sample, and whether the
    quadratic refinement had to fall back to that integer sample."""

    row: float
    col: float
    score: float
    degraded: bool = False


@dataclass
class ShiftEstimate:
    """Estimated translation mapping the input image onto the target."""

    dx_px: float
    dy_px: float
    confidence: float  # mean of the two peak scores
    peaks: tuple = ()
    dual: bool = True  # False when the midpoint used one peak twice
    degraded: bool = False


def _zero_mean_unit_norm(pix, label):
    flat = pix - pix.mean()
    norm = np.sqrt((flat * flat).sum())
    if norm == 0:
        raise ValueError(f"{label} image is constant (zero variance)")
    return flat / norm


def normalized_xcorr(a: PlaneImage, b: PlaneImage, phase_only=False):
    """Circular cross-correlation of zero-mean unit-norm images.

    The value at integer shift s is the cosine similarity between ``a`` and
    ``b`` translated by s, so all values lie in [-1, 1]. With
    ``phase_only`` the spectrum is whitened first (classic phase
    correlation), trading the similarity interpretation for a sharper peak.
    """
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(
            f"shape mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    fa = np.fft.rfft2(_zero_mean_unit_norm(a.pixels, "first"))
    fb = np.fft.rfft2(_zero_mean_unit_norm(b.pixels, "second"))
    cross = np.conj(fa) * fb
    if phase_only:
        mag = np.abs(cross)
        cross = cross / np.maximum(mag, 1e-15)
        cross[0, 0] = 0.0
        values = np.fft.irfft2(cross, s=a.pixels.shape)
        values /= max(values.max(), 1e-15)
    else:
        values = np.fft.irfft2(cross, s=a.pixels.shape)
    return CorrelationMap(values)


def _circular_delta(idx, ref, n):
    return (idx - ref + n // 2) % n - n // 2


def unwrap_index(idx, n):
    """Map a circular index in [0, n) to the signed range (-n/2, n/2]."""
    return idx - n if idx > n // 2 else idx


def top_two_local_maxima(corr: CorrelationMap,
                         min_separation_px=MIN_SEPARATION_DEFAULT):
    """Global maximum plus the strongest 8-neighborhood local maximum at
    circular distance >= min_separation_px from it.

    Returns ((r1, c1), (r2, c2), found_second); when no qualifying second
    maximum exists both coordinates are the global peak and
    ``found_second`` is False.
    """
    if min_separation_px < 1:
        raise ValueError("min_separation_px must be >= 1")
    v = corr.values
    height, width = v.shape
    peak1 = np.unravel_index(int(np.argmax(v)), v.shape)

    is_max = np.ones(v.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            is_max &= v > np.roll(v, (dr, dc), axis=(0, 1))

    dr = _circular_delta(np.arange(height)[:, None], peak1[0], height)
    dc = _circular_delta(np.arange(width)[None, :], peak1[1], width)
    is_max &= dr * dr + dc * dc >= min_separation_px ** 2

    if not is_max.any():
        return peak1, peak1, False
    flat = np.where(is_max.ravel(), v.ravel(), -np.inf)
    peak2 = np.unravel_index(int(np.argmax(flat)), v.shape)
    return peak1, peak2, True


def subpixel_refine(corr: CorrelationMap, peak, window=5):
    """Quadratic least-squares refinement of a correlation maximum.

    Fits q(r, c) = a + b*r + c*c + d*r^2 + e*r*c + f*c^2 over a circularly
    gathered ``window`` x ``window`` patch centered on the integer peak and
    returns its stationary point when that point is a maximum inside the
    window; otherwise the integer peak is returned with ``degraded`` set.
    The reported score is the map value at the integer peak, which keeps it
    within the measured correlation bounds.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    v = corr.values
    height, width = v.shape
    pr, pc = int(peak[0]), int(peak[1])
    score = float(v[pr, pc])
    base_row = float(unwrap_index(pr, height))
    base_col = float(unwrap_index(pc, width))

    half = window // 2
    offsets = np.arange(-half, half + 1)
    rows = (pr + offsets) % height
    cols = (pc + offsets) % width
    patch = v[np.ix_(rows, cols)]

    rr, cc = np.meshgrid(offsets.astype(np.float64),
                         offsets.astype(np.float64), indexing="ij")
    design = np.column_stack([np.ones(rr.size), rr.ravel(), cc.ravel(),
                              rr.ravel() ** 2, rr.ravel() * cc.ravel(),
                              cc.ravel() ** 2])
    coef, _, rank, _ = np.linalg.lstsq(design, patch.ravel(), rcond=None)
    if rank < 6:
        return PeakEstimate(base_row, base_col, score, degraded=True)
    _, b, c, d, e, f = coef

    det = 4.0 * d * f - e * e
    if det <= 0 or d >= 0:  # stationary point is not a maximum
        return PeakEstimate(base_row, base_col, score, degraded=True)
    dr = (-2.0 * f * b + e * c) / det
    dc = (-2.0 * d * c + e * b) / det
    if abs(dr) > half or abs(dc) > half:
        return PeakEstimate(base_row, base_col, score, degraded=True)
    return PeakEstimate(base_row + dr, base_col + dc, score)


def dppcm_shift(input_img: PlaneImage, target_img: PlaneImage,
                min_separation_px=MIN_SEPARATION_DEFAULT, dual=True,
                twin_gate=TWIN_GATE_DEFAULT, phase_only=False):
    """Dual-peak subpixel shift estimate mapping ``input_img`` onto
    ``target_img``.

    The two strongest correlation maxima are refined to subpixel precision;
    when the second's score is at least ``twin_gate`` times the first's the
    estimate is their midpoint (the twin-lobe case), otherwise the first
    peak alone is used. ``dual=False`` forces the single-peak baseline.
    ``degraded`` reports refinement fallbacks or the absence of any second
    local maximum in dual mode, not the gate's deliberate single-peak
    choice.
    """
    corr = normalized_xcorr(input_img, target_img, phase_only=phase_only)
    peak1_idx, peak2_idx, found_second = top_two_local_maxima(
        corr, min_separation_px)
    peak1 = subpixel_refine(corr, peak1_idx)

    use_second = dual and found_second
    if use_second:
        peak2 = subpixel_refine(corr, peak2_idx)
        if peak2.score < twin_gate * peak1.score:
            use_second = False
    if not use_second:
        peak2 = peak1

    degraded = peak1.degraded or peak2.degraded or (dual and not found_second)
    row = 0.5 * (peak1.row + peak2.row)
    col = 0.5 * (peak1.col + peak2.col)
    confidence = 0.5 * (peak1.score + peak2.score)
    return ShiftEstimate(dx_px=col, dy_px=row, confidence=confidence,
                         peaks=(peak1, peak2), dual=use_second,
                         degraded=degraded)


def apply_shift(img: PlaneImage, dx_px, dy_px, method="fourier"):
    """Translate an image so ``out[r, c] = img[r - dy, c - dx]``.

    The fourier method is exact for band-limited periodic content; the
    bilinear method interpolates with zero fill at the borders.
    """
    if not (math.isfinite(dx_px) and math.isfinite(dy_px)):
        raise ValueError("shift must be finite")
    pix = img.pixels
    if method == "fourier":
        fy = np.fft.fftfreq(pix.shape[0])[:, None]
        fx = np.fft.rfftfreq(pix.shape[1])[None, :]
        ramp = np.exp(-2j * np.pi * (fy * dy_px + fx * dx_px))
        out = np.fft.irfft2(np.fft.rfft2(pix) * ramp, s=pix.shape)
    elif method == "bilinear":
        out = ndimage.shift(pix, (dy_px, dx_px), order=1, mode="constant")
    else:
        raise ValueError(f"unknown method {method!r}")
    return PlaneImage(out, pixel_size_nm=img.pixel_size_nm,
                      z_plane_um=img.z_plane_um)
