"""Bead detection, truth matching, and the tolerance-threshold
depth-of-field report.

The evaluation protocol: detect beads on a refocused image, match them
optimally against the ground-truth emitters of the focal slab within a hard
radius, score detectability as Jaccard index TP/(TP+FP+FN) and accuracy as
lateral RMSE over matched pairs, then sweep defocus to find the contiguous
axial interval around the target plane where the Jaccard index stays above a
tolerance-scaled fraction of its in-focus value. The extent of that interval
is the measured depth of field.
"""

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from . import preprocess
from .optics import (BeadField, ConfocalPsfParams, OpticalConfig, PlaneImage,
                     WidefieldPsfParams, add_noise, render_plane)

DETECT_THRESHOLD_DEFAULT = 0.2
MIN_PIXELS_DEFAULT = 4
MATCH_RADIUS_NM_DEFAULT = 250.0
_QUALIFY_EPS = 1e-12


@dataclass
class Localization:
    """One detected emitter: lateral position in nm and summed signal."""

    x_nm: float
    y_nm: float
    intensity: float


@dataclass
class LocalizationSet:
    """Struct-of-arrays container for localizations."""

    x_nm: np.ndarray
    y_nm: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.x_nm = np.atleast_1d(np.asarray(self.x_nm, dtype=np.float64))
        self.y_nm = np.atleast_1d(np.asarray(self.y_nm, dtype=np.float64))
        self.intensity = np.atleast_1d(
            np.asarray(self.intensity, dtype=np.float64))
        if not (self.x_nm.size == self.y_nm.size == self.intensity.size):
            raise ValueError("localization arrays must share length")
        if self.x_nm.size:
            if not (np.all(np.isfinite(self.x_nm))
                    and np.all(np.isfinite(self.y_nm))):
                raise ValueError("positions must be finite")
            if np.any(self.intensity <= 0):
                raise ValueError("intensity must be strictly positive")

    def __len__(self):
        return self.x_nm.size

    def __iter__(self):
        for i in range(len(self)):
            yield Localization(self.x_nm[i], self.y_nm[i], self.intensity[i])

    @classmethod
    def empty(cls):
        return cls(np.empty(0), np.empty(0), np.empty(0))


def slab_truth(bead_field: BeadField, native_dof_um, z_plane_um=0.0):
    """Ground-truth localizations for emitters within the focal slab of
    ``z_plane_um`` — the emitters a sectioned render at that plane shows."""
    keep = np.abs(bead_field.z_um - z_plane_um) <= native_dof_um
    return LocalizationSet(bead_field.x_um[keep] * 1000.0,
                           bead_field.y_um[keep] * 1000.0,
                           bead_field.photons[keep])


def _gaussian_refine(pixels, r0, c0, pixel_floor):
    """2D Gaussian least-squares refinement around an integer center;
    returns (row, col) or None when the fit is rejected."""
    height, width = pixels.shape
    ri, ci = int(round(r0)), int(round(c0))
    r_lo, r_hi = max(ri - 3, 0), min(ri + 4, height)
    c_lo, c_hi = max(ci - 3, 0), min(ci + 4, width)
    window = pixels[r_lo:r_hi, c_lo:c_hi]
    if window.size < 9:
        return None
    rr, cc = np.meshgrid(np.arange(r_lo, r_hi, dtype=np.float64),
                         np.arange(c_lo, c_hi, dtype=np.float64),
                         indexing="ij")

    def residual(p):
        amp, rc, cc_, sigma, off = p
        model = off + amp * np.exp(
            -((rr - rc) ** 2 + (cc - cc_) ** 2) / (2.0 * sigma * sigma))
        return (model - window).ravel()

    peak = window.max()
    x0 = np.array([max(peak - pixel_floor, 1e-6), r0, c0, 1.2, pixel_floor])
    try:
        fit = optimize.least_squares(residual, x0, method="lm", max_nfev=200)
    except Exception:
        return None
    amp, rc, cc_, sigma, _ = fit.x
    if not np.all(np.isfinite(fit.x)):
        return None
    if amp <= 0 or not 0.2 < abs(sigma) < 10.0:
        return None
    if abs(rc - r0) > 2.0 or abs(cc_ - c0) > 2.0:
        return None
    return rc, cc_


def detect_beads(img: PlaneImage, detect_threshold=DETECT_THRESHOLD_DEFAULT,
                 min_pixels=MIN_PIXELS_DEFAULT):
    """Detect bead-like spots on a normalized (~[0, 1]) image.

    Pixels above ``detect_threshold`` are grouped into 8-connected
    components; components smaller than ``min_pixels`` are dropped; each
    survivor yields an intensity-weighted centroid refined by a 2D Gaussian
    least-squares fit over a 7x7 window. Positions are reported in nm via
    the image's pixel pitch; intensity is the component's summed signal.
    """
    if min_pixels < 1:
        raise ValueError("min_pixels must be >= 1")
    pixels = img.pixels
    mask = pixels > detect_threshold
    if not mask.any():
        return LocalizationSet.empty()
    labels, n_components = ndimage.label(mask, structure=np.ones((3, 3)))
    xs, ys, intens = [], [], []
    floor = float(pixels.min())
    for objslice, index in zip(ndimage.find_objects(labels),
                               range(1, n_components + 1)):
        component = labels[objslice] == index
        if component.sum() < min_pixels:
            continue
        values = np.where(component, pixels[objslice], 0.0)
        total = values.sum()
        if total <= 0:
            continue
        rows = np.arange(objslice[0].start, objslice[0].stop)
        cols = np.arange(objslice[1].start, objslice[1].stop)
        r0 = float(values.sum(axis=1) @ rows) / total
        c0 = float(values.sum(axis=0) @ cols) / total
        refined = _gaussian_refine(pixels, r0, c0, floor)
        if refined is not None:
            r0, c0 = refined
        ys.append(r0 * img.pixel_size_nm)
        xs.append(c0 * img.pixel_size_nm)
        intens.append(total)
    if not xs:
        return LocalizationSet.empty()
    return LocalizationSet(np.array(xs), np.array(ys), np.array(intens))


@dataclass
class MatchResult:
    """Optimal pairing of detections to truths within a hard radius."""

    pairs: list  # (detected index, truth index, distance_nm)
    tp: int
    fp: int
    fn: int


def match_localizations(detected: LocalizationSet, truth: LocalizationSet,
                        radius_nm=MATCH_RADIUS_NM_DEFAULT):
    """Minimum-total-distance bipartite matching with a hard radius.

    Candidate pairs farther than ``radius_nm`` are forbidden; among
    assignments with the most matches, the one with the smallest summed
    distance wins. Unmatched detections count as false positives, unmatched
    truths as false negatives.
    """
    if radius_nm <= 0:
        raise ValueError("radius_nm must be positive")
    n_det, n_tru = len(detected), len(truth)
    if n_det == 0 or n_tru == 0:
        return MatchResult([], 0, n_det, n_tru)

    dx = detected.x_nm[:, None] - truth.x_nm[None, :]
    dy = detected.y_nm[:, None] - truth.y_nm[None, :]
    dist = np.hypot(dx, dy)
    # An infeasible cell costs more than any full feasible assignment, so
    # minimizing total cost first maximizes the number of feasible pairs.
    big = (min(n_det, n_tru) + 1) * radius_nm + 1.0
    cost = np.where(dist <= radius_nm, dist, big)
    rows, cols = optimize.linear_sum_assignment(cost)
    pairs = [(int(r), int(c), float(dist[r, c]))
             for r, c in zip(rows, cols) if dist[r, c] <= radius_nm]
    tp = len(pairs)
    return MatchResult(pairs, tp, n_det - tp, n_tru - tp)


def jaccard_index(m: MatchResult):
    """TP / (TP + FP + FN); undefined (error) when all counts are zero."""
    denom = m.tp + m.fp + m.fn
    if denom == 0:
        raise ValueError("Jaccard index undefined for empty match result")
    return m.tp / denom


def lateral_rmse(m: MatchResult):
    """Root-mean-square pair distance in nm; NaN (never 0) when nothing
    matched, rendered as a gap downstream."""
    if m.tp == 0:
        return math.nan
    return math.sqrt(sum(d * d for _, _, d in m.pairs) / m.tp)


def correlation_coefficient(a: PlaneImage, b: PlaneImage):
    """Pearson correlation over all pixels of two same-shape images."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(
            f"shape mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    av = a.pixels.ravel() - a.pixels.mean()
    bv = b.pixels.ravel() - b.pixels.mean()
    na = np.sqrt(av @ av)
    nb = np.sqrt(bv @ bv)
    if na == 0 or nb == 0:
        raise ValueError("correlation undefined for a constant image")
    return float(np.clip(av @ bv / (na * nb), -1.0, 1.0))


@dataclass
class MetricsReport:
    """Detectability and accuracy of one refocused plane."""

    ji: float
    rmse_nm: float
    pearson: float


@dataclass
class DofReport:
    """One tolerance row of the depth-of-field table."""

    tolerance: float
    ji_threshold: float
    dof_um: float
    avg_rmse_nm: float


@dataclass
class ZMetrics:
    """Per-plane metrics row of a defocus sweep."""

    z_um: float
    ji: float
    rmse_nm: float
    pearson: float


@dataclass
class DofSweepResult:
    reports: list = field(default_factory=list)   # [DofReport]
    curve: list = field(default_factory=list)     # [ZMetrics], z ascending
    native_ji: float = math.nan


def tolerance_threshold(native_ji, tolerance):
    """Qualifying Jaccard threshold for a tolerance level:
    (1 - tolerance) * native value."""
    if not 0.0 <= tolerance < 1.0:
        raise ValueError("tolerance must be in [0, 1)")
    return (1.0 - tolerance) * native_ji


def dof_interval(z_grid, ji_values, threshold):
    """Extent of the maximal contiguous qualifying run containing z = 0.

    Returns (dof_um, lo_index, hi_index); a non-qualifying target plane
    yields (0.0, i0, i0 - 1) — an empty interval.
    """
    z = np.asarray(z_grid, dtype=np.float64)
    ji = np.asarray(ji_values, dtype=np.float64)
    i0 = int(np.argmin(np.abs(z)))
    if abs(z[i0]) > 1e-9:
        raise ValueError("z grid must include 0")
    ok = np.where(np.isfinite(ji), ji >= threshold - _QUALIFY_EPS, False)
    if not ok[i0]:
        return 0.0, i0, i0 - 1
    lo = i0
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    hi = i0
    while hi + 1 < ok.size and ok[hi + 1]:
        hi += 1
    return float(z[hi] - z[lo]), lo, hi


def _plane_noise(noise, index):
    if noise is None:
        return None
    return dataclasses.replace(noise, seed=noise.seed + index)


def default_workers():
    """Worker cap for per-plane parallelism, from the DHRB_THREADS
    environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("DHRB_THREADS", "1")))
    except ValueError:
        return 1


def dof_sweep(refocuser, scene: BeadField, z_grid, tolerances,
              config: OpticalConfig, input_psf, *, size_px, noise=None,
              normalizer=None, detect_threshold=DETECT_THRESHOLD_DEFAULT,
              min_pixels=MIN_PIXELS_DEFAULT,
              radius_nm=MATCH_RADIUS_NM_DEFAULT, workers=None):
    """Defocus sweep: JI/RMSE/Pearson per plane plus per-tolerance DOF rows.

    For each z in ``z_grid`` the scene is rendered through ``input_psf`` at
    that plane, optionally noised (seed offset by the plane index),
    normalized, and handed to ``refocuser(img, delta_z_um)`` with
    ``delta_z_um = -z`` (the propagation that would bring the plane back to
    z = 0). Detections on the refocused image are matched against the
    focal-slab truths; Pearson is computed against the normalized sectioned
    render at z = 0.

    ``normalizer`` defaults to a fixed-scale normalizer frozen from the
    z = 0 input plane (one detector gain across a through-focus stack);
    pass ``preprocess.normalize_image`` for per-plane rescaling instead.

    The native JI is the mean over planes within the native focal slab;
    each tolerance row reports threshold = (1 - t) * native JI, the extent
    of the maximal contiguous qualifying interval containing z = 0, and the
    mean defined RMSE over that interval.
    """
    z = np.asarray(z_grid, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("z_grid must be a non-empty 1D sequence")
    if np.any(np.diff(z) <= 0):
        raise ValueError("z_grid must be strictly increasing")
    i0 = int(np.argmin(np.abs(z)))
    if abs(z[i0]) > 1e-9:
        raise ValueError("z_grid must include 0")
    for t in tolerances:
        if not 0.0 <= t < 1.0:
            raise ValueError("tolerances must be in [0, 1)")

    truth = slab_truth(scene, config.native_dof_um)
    target = preprocess.normalize_image(
        render_plane(scene, 0.0, _confocal_params(config), config, size_px))

    if normalizer is None:
        focal_raw = render_plane(scene, z[i0], input_psf, config, size_px)
        plane_noise = _plane_noise(noise, i0)
        if plane_noise is not None:
            focal_raw = add_noise(focal_raw, plane_noise)
        normalizer = preprocess.make_reference_normalizer(focal_raw)

    def evaluate(index):
        z_um = float(z[index])
        raw = render_plane(scene, z_um, input_psf, config, size_px)
        plane_noise = _plane_noise(noise, index)
        if plane_noise is not None:
            raw = add_noise(raw, plane_noise)
        normalized = normalizer(raw)
        try:
            refocused = refocuser(normalized, -z_um)
        except Exception as exc:
            raise RuntimeError(
                f"refocuser failed at z_um={z_um:g}: {exc}") from exc
        detections = detect_beads(refocused, detect_threshold, min_pixels)
        match = match_localizations(detections, truth, radius_nm)
        denom = match.tp + match.fp + match.fn
        ji = jaccard_index(match) if denom else math.nan
        rmse = lateral_rmse(match)
        try:
            pearson = correlation_coefficient(refocused, target)
        except ValueError:
            pearson = math.nan
        return ZMetrics(z_um, ji, rmse, pearson)

    if workers is None:
        workers = default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            curve = list(pool.map(evaluate, range(z.size)))
    else:
        curve = [evaluate(i) for i in range(z.size)]

    in_slab = [row.ji for row in curve
               if abs(row.z_um) <= config.native_dof_um
               and math.isfinite(row.ji)]
    if not in_slab:
        raise ValueError("no finite JI within the native focal slab")
    native_ji = float(np.mean(in_slab))

    reports = []
    ji_values = [row.ji for row in curve]
    rmse_values = np.array([row.rmse_nm for row in curve])
    for t in tolerances:
        threshold = tolerance_threshold(native_ji, t)
        dof_um, lo, hi = dof_interval(z, ji_values, threshold)
        window = rmse_values[lo:hi + 1]
        defined = window[np.isfinite(window)]
        avg_rmse = float(defined.mean()) if defined.size else math.nan
        reports.append(DofReport(t, threshold, dof_um, avg_rmse))
    return DofSweepResult(reports=reports, curve=curve, native_ji=native_ji)


def _confocal_params(config: OpticalConfig):
    return ConfocalPsfParams.from_widefield(WidefieldPsfParams())


def _format(value, fmt):
    return "" if not math.isfinite(value) else format(value, fmt)


def dof_reports_csv(reports):
    """Tolerance table as CSV: tolerance,ji_threshold,dof_um,avg_rmse_nm.
    Undefined RMSE renders as an empty field."""
    lines = ["tolerance,ji_threshold,dof_um,avg_rmse_nm"]
    for r in reports:
        lines.append(f"{r.tolerance:.2f},{r.ji_threshold:.3f},"
                     f"{r.dof_um:.1f},{_format(r.avg_rmse_nm, '.2f')}")
    return "\n".join(lines) + "\n"


def curve_csv(curve):
    """Per-plane sweep as CSV: z_um,ji,rmse_nm,pearson. Undefined values
    render as empty fields (plot gaps)."""
    lines = ["z_um,ji,rmse_nm,pearson"]
    for row in curve:
        lines.append(f"{row.z_um:.2f},{_format(row.ji, '.4f')},"
                     f"{_format(row.rmse_nm, '.2f')},"
                     f"{_format(row.pearson, '.4f')}")
    return "\n".join(lines) + "\n"
