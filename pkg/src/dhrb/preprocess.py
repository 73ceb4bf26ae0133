"""Image normalization and patch extraction.

The normalization recipe: estimate the background level with a
triangle-geometry histogram threshold, subtract the mean sub-threshold value,
repair saturated pixels from their neighbors, and rescale so the 99.9th
percentile maps to 1.0. Patch extraction tiles a frame into fixed-size
overlapping crops whose union covers every pixel.
"""

from dataclasses import dataclass, field

import numpy as np

from .optics import PlaneImage

HISTOGRAM_BINS = 256


@dataclass
class Histogram:
    """Binned intensity counts; edges strictly increasing, one more edge
    than count."""

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.bin_edges.ndim != 1 or self.counts.ndim != 1:
            raise ValueError("bin_edges and counts must be 1D")
        if self.bin_edges.size != self.counts.size + 1:
            raise ValueError("need exactly one more edge than count")
        if not np.all(np.diff(self.bin_edges) > 0):
            raise ValueError("bin_edges must be strictly increasing")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValueError("counts must be finite and non-negative")


def image_histogram(img: PlaneImage, bins=HISTOGRAM_BINS):
    """Histogram of pixel values over [min, max] with fixed bin count."""
    counts, edges = np.histogram(img.pixels, bins=bins)
    return Histogram(edges, counts)


def triangular_threshold(hist: Histogram):
    """Background threshold bin by the triangle geometry rule.

    Let p be the tallest bin and e the last nonzero bin (or, when the peak is
    itself the last nonzero bin, the first nonzero bin on the other side).
    Returns the bin strictly between p and e whose point (index, count) lies
    farthest from the chord joining (p, counts[p]) and (e, counts[e]); ties
    break toward p. Distances share the chord length as denominator, so the
    argmax is taken over cross products only.
    """
    counts = hist.counts
    nonzero = np.flatnonzero(counts > 0)
    if nonzero.size == 0:
        raise ValueError("all-zero histogram has no threshold")
    p = int(np.argmax(counts))
    e = int(nonzero[-1])
    if e == p:
        e = int(nonzero[0])
    if e == p:
        return p  # single nonzero bin: the chord degenerates to a point

    cp = float(counts[p])
    ce = float(counts[e])
    step = 1 if e > p else -1
    best = p  # no interior bin (adjacent p, e) keeps the peak bin
    best_cross = -1.0
    for i in range(p + step, e, step):  # ordered by distance from p
        cross = abs((e - p) * (float(counts[i]) - cp) - (i - p) * (ce - cp))
        if cross > best_cross:
            best = i
            best_cross = cross
    return best


def normalize_image(img: PlaneImage, saturation_level=60000.0):
    """Background-subtracted, saturation-repaired, percentile-scaled copy.

    Steps: (1) 256-bin histogram, (2) triangle threshold, (3) subtract the
    mean of sub-threshold pixels and clamp negatives to zero, (4) replace
    pixels at or above ``saturation_level`` by the median of their valid
    (in-bounds, unsaturated) 8-neighbors, (5) rescale so the 99.9th
    percentile maps to 1.0 (falling back to the maximum when the percentile
    is zero). A constant image degenerates to all zeros; that is a
    documented result, not an error.
    """
    if saturation_level <= 0:
        raise ValueError("saturation_level must be positive")
    pix = img.pixels
    if pix.max() == pix.min():
        return PlaneImage(np.zeros_like(pix), pixel_size_nm=img.pixel_size_nm,
                          z_plane_um=img.z_plane_um)

    hist = image_histogram(img)
    t = triangular_threshold(hist)
    cutoff = hist.bin_edges[t + 1]
    background = pix[pix < cutoff]
    if background.size == 0:
        background = pix[pix == pix.min()]
    work = np.clip(pix - background.mean(), 0.0, None)

    saturated = pix >= saturation_level
    if saturated.any():
        height, width = work.shape
        repaired = work.copy()
        for r, c in np.argwhere(saturated):
            neighbors = []
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < height and 0 <= cc < width and not saturated[rr, cc]:
                        neighbors.append(work[rr, cc])
            repaired[r, c] = np.median(neighbors) if neighbors else 0.0
        work = repaired

    scale = np.percentile(work, 99.9)
    if scale <= 0:
        scale = work.max()
    if scale <= 0:
        return PlaneImage(np.zeros_like(work),
                          pixel_size_nm=img.pixel_size_nm,
                          z_plane_um=img.z_plane_um)
    return PlaneImage(work / scale, pixel_size_nm=img.pixel_size_nm,
                      z_plane_um=img.z_plane_um)


def make_reference_normalizer(reference: PlaneImage, saturation_level=60000.0):
    """Normalizer with background and scale frozen from a reference frame.

    Through-focus stacks share one detector gain, so defocused planes must
    stay dimmer than the focal plane; per-frame percentile rescaling would
    hide that. The returned callable subtracts the reference's background
    mean, clamps at zero, and divides by the reference's 99.9th-percentile
    scale.
    """
    pix = reference.pixels
    if pix.max() == pix.min():
        raise ValueError("constant reference frame cannot define a scale")
    hist = image_histogram(reference)
    cutoff = hist.bin_edges[triangular_threshold(hist) + 1]
    background = pix[pix < cutoff]
    if background.size == 0:
        background = pix[pix == pix.min()]
    offset = background.mean()
    scale = np.percentile(np.clip(pix - offset, 0.0, None), 99.9)
    if scale <= 0:
        raise ValueError("reference frame has no signal above background")

    def normalize(img: PlaneImage):
        work = np.clip(np.minimum(img.pixels, saturation_level) - offset,
                       0.0, None)
        return PlaneImage(work / scale, pixel_size_nm=img.pixel_size_nm,
                          z_plane_um=img.z_plane_um)

    return normalize


@dataclass
class PatchGrid:
    """Tiling of a frame into square patches with fractional overlap.

    Origins advance by stride = round(patch_px * (1 - overlap_fraction));
    the final origin per axis is clamped so the last patch stays in-bounds,
    which guarantees full coverage.
    """

    patch_px: int = 256
    overlap_fraction: float = 0.10
    origins: list = field(default_factory=list)

    def __post_init__(self):
        if self.patch_px < 1:
            raise ValueError("patch_px must be positive")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must be in [0, 1)")

    @property
    def stride(self):
        return max(1, round(self.patch_px * (1.0 - self.overlap_fraction)))

    @classmethod
    def for_image(cls, shape, patch_px=256, overlap_fraction=0.10):
        grid = cls(patch_px=patch_px, overlap_fraction=overlap_fraction)
        height, width = shape
        if height < patch_px or width < patch_px:
            raise ValueError(
                f"image {height}x{width} smaller than patch {patch_px}")
        grid.origins = [(r, c) for r in _axis_origins(height, patch_px, grid.stride)
                        for c in _axis_origins(width, patch_px, grid.stride)]
        return grid


def _axis_origins(extent, patch_px, stride):
    origins = list(range(0, extent - patch_px + 1, stride))
    if origins[-1] + patch_px < extent:
        origins.append(extent - patch_px)
    return origins


def crop_patches(img: PlaneImage, grid: PatchGrid = None):
    """Cut the patches described by ``grid`` (built for this image when
    omitted). Union of patches covers every pixel."""
    if grid is None or not grid.origins:
        patch_px = grid.patch_px if grid is not None else 256
        overlap = grid.overlap_fraction if grid is not None else 0.10
        grid = PatchGrid.for_image(img.pixels.shape, patch_px, overlap)
    p = grid.patch_px
    height, width = img.pixels.shape
    if height < p or width < p:
        raise ValueError(f"image {height}x{width} smaller than patch {p}")
    patches = []
    for r, c in grid.origins:
        if r < 0 or c < 0 or r + p > height or c + p > width:
            raise ValueError(f"patch origin ({r}, {c}) out of bounds")
        patches.append(PlaneImage(img.pixels[r:r + p, c:c + p].copy(),
                                  pixel_size_nm=img.pixel_size_nm,
                                  z_plane_um=img.z_plane_um))
    return patches
