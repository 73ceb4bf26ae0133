"""Synthetic bead scenes and defocused double-helix / wide-field / confocal
renders.

The double-helix PSF is a parametric two-lobe model: two Gaussian lobes whose
axis rotates linearly with defocus and whose width grows linearly with
|defocus|. The wide-field PSF is a Gaussian-beam defocus model. The confocal
render stands in for the sharp, optically sectioned ground truth: a narrow
fixed Gaussian drawn only for emitters inside the native focal slab.

All rendering is photon-linear: an image is the sum over emitters of
``photons * psf_patch`` placed at the emitter's subpixel position, and every
patch is renormalized to unit sum before placement, so an unclipped emitter
contributes exactly its photon count to the frame.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import eval_lobes

# Angle tolerance when validating omega * z_range <= pi/2: the stock rotation
# rate (15 deg/um rounded to 0.2618 rad/um) times 6 um overshoots pi/2 by 4e-6.
_ANGLE_SLACK_RAD = 1e-3


@dataclass(frozen=True)
class OpticalConfig:
    """Microscope geometry at the sample plane."""

    pixel_size_nm: float = 72.0
    wavelength_nm: float = 580.0
    numerical_aperture: float = 1.4
    magnification: float = 63.0
    native_dof_um: float = 0.15

    def __post_init__(self):
        for name in ("pixel_size_nm", "wavelength_nm", "numerical_aperture",
                     "magnification", "native_dof_um"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.numerical_aperture > 1.6:
            raise ValueError("numerical_aperture must be <= 1.6")
        if self.pixel_size_nm >= self.wavelength_nm:
            raise ValueError("pixel_size_nm must be below wavelength_nm")


@dataclass(frozen=True)
class FieldBounds:
    """Lateral extent and axial slab that contain a bead field."""

    width_um: float
    height_um: float
    z_min_um: float
    z_max_um: float

    def __post_init__(self):
        if self.width_um <= 0 or self.height_um <= 0:
            raise ValueError("lateral bounds must be positive")
        if self.z_min_um > self.z_max_um:
            raise ValueError("z_min_um must not exceed z_max_um")


@dataclass
class BeadField:
    """Ground-truth emitter list; the simulation's source of truth.

    Positions are micrometers: x along columns, y along rows, z along the
    optical axis. ``photons`` is the expected photon count per emitter.
    """

    x_um: np.ndarray
    y_um: np.ndarray
    z_um: np.ndarray
    photons: np.ndarray
    bounds: FieldBounds

    def __post_init__(self):
        self.x_um = np.asarray(self.x_um, dtype=np.float64)
        self.y_um = np.asarray(self.y_um, dtype=np.float64)
        self.z_um = np.asarray(self.z_um, dtype=np.float64)
        self.photons = np.asarray(self.photons, dtype=np.float64)
        n = self.x_um.size
        if not (self.y_um.size == self.z_um.size == self.photons.size == n):
            raise ValueError("emitter arrays must share length")
        b = self.bounds
        if n:
            if np.any(self.photons <= 0):
                raise ValueError("photons must be strictly positive")
            if (np.any(self.x_um < 0) or np.any(self.x_um > b.width_um)
                    or np.any(self.y_um < 0) or np.any(self.y_um > b.height_um)
                    or np.any(self.z_um < b.z_min_um)
                    or np.any(self.z_um > b.z_max_um)):
                raise ValueError("emitter outside field bounds")

    def __len__(self):
        return self.x_um.size


@dataclass(frozen=True)
class DhPsfParams:
    """Two-lobe double-helix model: defocus encoded as lobe-axis rotation."""

    lobe_sigma0_px: float = 1.5
    lobe_distance_px: float = 8.0
    theta0_rad: float = 0.0
    omega_rad_per_um: float = 0.2618  # 15 deg / um
    z_range_um: float = 6.0
    sigma_growth_per_um: float = 0.05

    def __post_init__(self):
        for name in ("lobe_sigma0_px", "lobe_distance_px", "omega_rad_per_um",
                     "z_range_um", "sigma_growth_per_um"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.lobe_distance_px <= 2.0 * self.lobe_sigma0_px:
            raise ValueError("lobe_distance_px must exceed 2 * lobe_sigma0_px")
        if self.omega_rad_per_um * self.z_range_um > math.pi / 2 + _ANGLE_SLACK_RAD:
            raise ValueError("total rotation over z_range_um must stay within +-90 deg")

    def sigma_px(self, defocus_um):
        return self.lobe_sigma0_px + self.sigma_growth_per_um * abs(defocus_um)

    def theta_rad(self, defocus_um):
        return self.theta0_rad + self.omega_rad_per_um * defocus_um


@dataclass(frozen=True)
class WidefieldPsfParams:
    """Gaussian-beam defocus model for the wide-field arm."""

    sigma0_px: float = 1.2
    z_rayleigh_um: float = 0.15

    def __post_init__(self):
        if self.sigma0_px <= 0 or self.z_rayleigh_um <= 0:
            raise ValueError("sigma0_px and z_rayleigh_um must be positive")

    def sigma_px(self, defocus_um):
        return self.sigma0_px * math.sqrt(1.0 + (defocus_um / self.z_rayleigh_um) ** 2)


@dataclass(frozen=True)
class ConfocalPsfParams:
    """Sharp sectioned render used as ground truth: fixed narrow Gaussian,
    drawn only for emitters inside the native focal slab."""

    sigma_px: float = 0.84  # 0.7 * stock wide-field sigma0

    def __post_init__(self):
        if self.sigma_px <= 0:
            raise ValueError("sigma_px must be positive")

    @classmethod
    def from_widefield(cls, wf: WidefieldPsfParams):
        return cls(sigma_px=0.7 * wf.sigma0_px)


@dataclass(frozen=True)
class NoiseParams:
    """Poisson shot noise + Gaussian read noise + hard saturation clip."""

    background_photons: float = 5.0
    read_sigma: float = 2.0
    full_well: float = 60000.0
    seed: int = 0

    def __post_init__(self):
        if self.background_photons < 0 or self.read_sigma < 0:
            raise ValueError("noise levels must be non-negative")
        if self.full_well <= 0:
            raise ValueError("full_well must be positive")


@dataclass
class PlaneImage:
    """Single-channel 2D image in photon units with pixel-pitch metadata."""

    pixels: np.ndarray
    pixel_size_nm: float = 72.0
    z_plane_um: float = 0.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValueError("pixels must be a non-empty 2D array")
        if self.pixel_size_nm <= 0:
            raise ValueError("pixel_size_nm must be positive")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("pixels must be finite")

    @property
    def height_px(self):
        return self.pixels.shape[0]

    @property
    def width_px(self):
        return self.pixels.shape[1]


def _require_odd(patch_px):
    if patch_px < 1 or patch_px % 2 == 0:
        raise ValueError("patch_px must be a positive odd integer")


def _dh_lobes(defocus_um, params: DhPsfParams, offset_rc=(0.0, 0.0)):
    """Lobe table [dr, dc, sigma, weight] for a DH patch centre."""
    sigma = params.sigma_px(defocus_um)
    theta = params.theta_rad(defocus_um)
    half_d = 0.5 * params.lobe_distance_px
    dc = half_d * math.cos(theta)
    dr = half_d * math.sin(theta)
    orow, ocol = offset_rc
    return np.array([
        [orow + dr, ocol + dc, sigma, 0.5],
        [orow - dr, ocol - dc, sigma, 0.5],
    ])


def _normalized_patch(patch_px, lobes):
    patch = eval_lobes(patch_px, lobes)
    total = patch.sum()
    if total <= 0:
        raise ValueError("degenerate PSF patch (zero integral)")
    patch /= total
    return patch


def dh_psf_patch(defocus_um, params: DhPsfParams, subpixel_offset=(0.0, 0.0),
                 patch_px=25, pixel_size_nm=72.0):
    """Render one double-helix PSF patch, unit-normalized over the patch.

    ``subpixel_offset`` is (row, col) in pixels; the two lobes sit at
    +-lobe_distance/2 along the axis angle theta0 + omega * defocus.
    """
    _require_odd(patch_px)
    if abs(defocus_um) > 2.0 * params.z_range_um:
        raise ValueError(
            f"defocus {defocus_um} um outside 2 * z_range_um"
            f" = {2.0 * params.z_range_um} um")
    lobes = _dh_lobes(defocus_um, params, subpixel_offset)
    patch = _normalized_patch(patch_px, lobes)
    return PlaneImage(patch, pixel_size_nm=pixel_size_nm, z_plane_um=defocus_um)


def widefield_psf_patch(defocus_um, params: WidefieldPsfParams,
                        subpixel_offset=(0.0, 0.0), patch_px=25,
                        pixel_size_nm=72.0):
    """Render one defocused wide-field PSF patch, unit-normalized."""
    _require_odd(patch_px)
    orow, ocol = subpixel_offset
    sigma = params.sigma_px(defocus_um)
    lobes = np.array([[orow, ocol, sigma, 1.0]])
    patch = _normalized_patch(patch_px, lobes)
    return PlaneImage(patch, pixel_size_nm=pixel_size_nm, z_plane_um=defocus_um)


def generate_bead_field(n, bounds: FieldBounds, photon_range=(800.0, 2000.0),
                        min_separation_um=0.5, seed=0):
    """Place ``n`` beads uniformly in ``bounds`` with a minimum pairwise
    lateral distance, by rejection sampling. Deterministic under ``seed``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    lo, hi = photon_range
    if lo <= 0 or hi < lo:
        raise ValueError("photon_range must be positive and ordered")
    if min_separation_um < 0:
        raise ValueError("min_separation_um must be non-negative")

    rng = np.random.default_rng(seed)
    xs, ys, zs, ph = [], [], [], []
    budget = max(10_000, 500 * n)
    attempts = 0
    while len(xs) < n:
        if attempts >= budget:
            raise RuntimeError(
                f"bead placement infeasible: placed {len(xs)} of {n} beads "
                f"within {budget} attempts at min separation "
                f"{min_separation_um} um")
        attempts += 1
        x = rng.uniform(0.0, bounds.width_um)
        y = rng.uniform(0.0, bounds.height_um)
        z = rng.uniform(bounds.z_min_um, bounds.z_max_um)
        p = rng.uniform(lo, hi)
        if xs and min_separation_um > 0:
            d2 = (np.array(xs) - x) ** 2 + (np.array(ys) - y) ** 2
            if d2.min() < min_separation_um ** 2:
                continue
        xs.append(x)
        ys.append(y)
        zs.append(z)
        ph.append(p)
    return BeadField(np.array(xs), np.array(ys), np.array(zs), np.array(ph),
                     bounds)


def _frame_shape(size_px):
    if isinstance(size_px, tuple):
        h, w = size_px
    else:
        h = w = int(size_px)
    if h < 1 or w < 1:
        raise ValueError("size_px must be positive")
    return h, w


def _emitter_lobes(psf, defocus_um):
    """Lobe table for one emitter, or None when it does not contribute."""
    if isinstance(psf, DhPsfParams):
        # Out-of-range emitters still render, with extrapolated lobe width.
        return _dh_lobes(defocus_um, psf)
    if isinstance(psf, WidefieldPsfParams):
        return np.array([[0.0, 0.0, psf.sigma_px(defocus_um), 1.0]])
    if isinstance(psf, ConfocalPsfParams):
        return np.array([[0.0, 0.0, psf.sigma_px, 1.0]])
    raise TypeError(f"unsupported PSF parameter type: {type(psf).__name__}")


def render_plane(field: BeadField, z_plane_um, psf, config: OpticalConfig,
                 size_px, tail_sigmas=4.0):
    """Noise-free render of a bead field at one focal plane.

    ``psf`` selects the modality: DhPsfParams, WidefieldPsfParams, or
    ConfocalPsfParams (the latter draws only emitters within the native
    focal slab). Emitters outside the lateral frame contribute their
    in-frame tail.
    """
    height, width = _frame_shape(size_px)
    img = np.zeros((height, width), dtype=np.float64)
    pitch_um = config.pixel_size_nm / 1000.0
    confocal = isinstance(psf, ConfocalPsfParams)

    for i in range(len(field)):
        dz = z_plane_um - field.z_um[i]
        if confocal and abs(dz) > config.native_dof_um:
            continue
        lobes = _emitter_lobes(psf, dz)
        row_f = field.y_um[i] / pitch_um
        col_f = field.x_um[i] / pitch_um
        row0 = int(round(row_f))
        col0 = int(round(col_f))
        lobes[:, 0] += row_f - row0
        lobes[:, 1] += col_f - col0

        reach = np.max(np.hypot(lobes[:, 0], lobes[:, 1])
                       + tail_sigmas * lobes[:, 2])
        radius = min(int(math.ceil(reach)) + 1, 2 * max(height, width))
        patch_px = 2 * radius + 1
        if (row0 + radius < 0 or row0 - radius >= height
                or col0 + radius < 0 or col0 - radius >= width):
            continue

        patch = eval_lobes(patch_px, lobes)
        total = patch.sum()
        if total <= 0:
            continue
        scale = field.photons[i] / total

        r_lo = max(row0 - radius, 0)
        r_hi = min(row0 + radius + 1, height)
        c_lo = max(col0 - radius, 0)
        c_hi = min(col0 + radius + 1, width)
        pr_lo = r_lo - (row0 - radius)
        pc_lo = c_lo - (col0 - radius)
        img[r_lo:r_hi, c_lo:c_hi] += scale * patch[
            pr_lo:pr_lo + (r_hi - r_lo), pc_lo:pc_lo + (c_hi - c_lo)]

    return PlaneImage(img, pixel_size_nm=config.pixel_size_nm,
                      z_plane_um=z_plane_um)


def add_noise(img: PlaneImage, noise: NoiseParams):
    """Poisson(value + background) + Gaussian read noise, clipped to
    [0, full_well]. Deterministic under the noise seed."""
    pix = img.pixels
    if np.any(pix < 0):
        raise ValueError("add_noise requires non-negative pixel values")
    rng = np.random.default_rng(noise.seed)
    out = rng.poisson(pix + noise.background_photons).astype(np.float64)
    if noise.read_sigma > 0:
        out += rng.normal(0.0, noise.read_sigma, size=pix.shape)
    np.clip(out, 0.0, noise.full_well, out=out)
    return PlaneImage(out, pixel_size_nm=img.pixel_size_nm,
                      z_plane_um=img.z_plane_um)


def principal_axis_angle(patch):
    """Orientation of the intensity principal axis, in (-pi/2, pi/2].

    Second-central-moment estimator; for a two-lobe pattern this recovers the
    lobe-axis angle modulo pi.
    """
    pix = np.asarray(patch, dtype=np.float64)
    total = pix.sum()
    if total <= 0:
        raise ValueError("patch has no intensity")
    rows = np.arange(pix.shape[0], dtype=np.float64)
    cols = np.arange(pix.shape[1], dtype=np.float64)
    r_mean = (pix.sum(axis=1) @ rows) / total
    c_mean = (pix.sum(axis=0) @ cols) / total
    dr = rows - r_mean
    dc = cols - c_mean
    mu_rr = (pix * dr[:, None] ** 2).sum() / total
    mu_cc = (pix * dc[None, :] ** 2).sum() / total
    mu_rc = (pix * dr[:, None] * dc[None, :]).sum() / total
    angle = 0.5 * math.atan2(2.0 * mu_rc, mu_cc - mu_rr)
    if angle <= -math.pi / 2:
        angle += math.pi
    return angle
