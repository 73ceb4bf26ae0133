"""dhrb: double-helix refocusing benchmark toolkit.

Synthetic microscopy scenes with an engineered double-helix PSF, dual-peak
phase-correlation registration, a detection/matching evaluation protocol
with tolerance-based depth-of-field reports, and dataset plumbing for the
companion trainer.
"""

from .kernels import BACKEND
from .optics import (BeadField, ConfocalPsfParams, DhPsfParams, FieldBounds,
                     NoiseParams, OpticalConfig, PlaneImage,
                     WidefieldPsfParams, add_noise, dh_psf_patch,
                     generate_bead_field, principal_axis_angle, render_plane,
                     widefield_psf_patch)
from .preprocess import (Histogram, PatchGrid, crop_patches, image_histogram,
                         normalize_image, triangular_threshold)
from .registration import (CorrelationMap, PeakEstimate, ShiftEstimate,
                           apply_shift, dppcm_shift, normalized_xcorr,
                           subpixel_refine, top_two_local_maxima)
from .locmetrics import (DofReport, Localization, LocalizationSet,
                         MatchResult, correlation_coefficient, detect_beads,
                         dof_sweep, jaccard_index, lateral_rmse,
                         match_localizations, tolerance_threshold)
from .dataset_io import (Dpm, Sample, build_uniform_dpm, make_sample,
                         read_dataset, write_dataset)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "__version__",
    "BeadField", "ConfocalPsfParams", "DhPsfParams", "FieldBounds",
    "NoiseParams", "OpticalConfig", "PlaneImage", "WidefieldPsfParams",
    "add_noise", "dh_psf_patch", "generate_bead_field",
    "principal_axis_angle", "render_plane", "widefield_psf_patch",
    "Histogram", "PatchGrid", "crop_patches", "image_histogram",
    "normalize_image", "triangular_threshold",
    "CorrelationMap", "PeakEstimate", "ShiftEstimate", "apply_shift",
    "dppcm_shift", "normalized_xcorr", "subpixel_refine",
    "top_two_local_maxima",
    "DofReport", "Localization", "LocalizationSet", "MatchResult",
    "correlation_coefficient", "detect_beads", "dof_sweep", "jaccard_index",
    "lateral_rmse", "match_localizations", "tolerance_threshold",
    "Dpm", "Sample", "build_uniform_dpm", "make_sample", "read_dataset",
    "write_dataset",
]
