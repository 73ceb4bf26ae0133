"""Training-sample assembly and the on-disk dataset container.

A sample is (input image, per-pixel propagation map, sectioned target image)
plus metadata. The propagation map ("dpm") gives, per pixel, the signed
axial distance in micrometers the refocuser must propagate that pixel; for
plane-to-plane refocusing it is uniform at z_target - z_input.

Container formats (all integers and floats little-endian):

``.wnds``  magic ``WNDS`` | u32 version=1 | u32 height | u32 width |
           3 planes (input, dpm, target) of height*width float32 row-major |
           u32 CRC32 of those planes.
``.wndp``  magic ``WNDP`` | u32 version=1 | u32 height | u32 width |
           1 plane float32 row-major | u32 CRC32 of the plane.

The single-plane ``.wndp`` carries auxiliary planes (the same-modality
refocusing target alongside a sample) and standalone images exchanged with
the companion trainer. ``manifest.json`` indexes a dataset directory and is
written last, atomically.
"""

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import preprocess
from .optics import (BeadField, ConfocalPsfParams, DhPsfParams, NoiseParams,
                     OpticalConfig, PlaneImage, WidefieldPsfParams, add_noise,
                     render_plane)

SAMPLE_MAGIC = b"WNDS"
PLANE_MAGIC = b"WNDP"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

MODALITY_DH = "dh"
MODALITY_WIDEFIELD = "widefield"

# Axial ranges: input planes span the modality range, targets the sectioned
# range, so a propagation value spans their sum.
INPUT_Z_RANGE_UM = {MODALITY_DH: 8.0, MODALITY_WIDEFIELD: 4.0}
TARGET_Z_RANGE_UM = 2.0


def dpm_limit_um(modality):
    """Largest propagation distance a modality's samples can request."""
    try:
        return INPUT_Z_RANGE_UM[modality] + TARGET_Z_RANGE_UM
    except KeyError:
        raise ValueError(f"unknown modality {modality!r}") from None


@dataclass
class Dpm:
    """Per-pixel signed axial propagation distances, micrometers."""

    values: np.ndarray
    max_abs_um: float = 10.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("dpm must be 2D")
        if self.max_abs_um <= 0:
            raise ValueError("max_abs_um must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dpm values must be finite")
        if np.any(np.abs(self.values) > self.max_abs_um + 1e-9):
            raise ValueError(
                f"dpm magnitude exceeds {self.max_abs_um} um")


def build_uniform_dpm(shape, delta_z_um, max_abs_um=None,
                      modality=MODALITY_DH):
    """Uniform propagation map: every pixel refocuses by the same distance."""
    if max_abs_um is None:
        max_abs_um = dpm_limit_um(modality)
    if abs(delta_z_um) > max_abs_um:
        raise ValueError(
            f"delta_z_um {delta_z_um} outside +-{max_abs_um} um")
    return Dpm(np.full(shape, float(delta_z_um)), max_abs_um=max_abs_um)


@dataclass
class Sample:
    """One training/testing triplet plus optional same-modality refocusing
    target (auxiliary supervision for the cascaded trainer)."""

    input: PlaneImage
    dpm: Dpm
    target: PlaneImage
    meta: dict = field(default_factory=dict)
    refocus_target: PlaneImage = None

    def __post_init__(self):
        shapes = {self.input.pixels.shape, self.dpm.values.shape,
                  self.target.pixels.shape}
        if self.refocus_target is not None:
            shapes.add(self.refocus_target.pixels.shape)
        if len(shapes) != 1:
            raise ValueError(f"sample planes disagree on shape: {shapes}")


def _psf_for(modality, dh_params, wf_params):
    if modality == MODALITY_DH:
        return dh_params if dh_params is not None else DhPsfParams()
    if modality == MODALITY_WIDEFIELD:
        return wf_params if wf_params is not None else WidefieldPsfParams()
    raise ValueError(f"unknown modality {modality!r}")


def make_sample(scene: BeadField, modality, z_input_um, z_target_um,
                noise: NoiseParams, config: OpticalConfig, size_px=64,
                dh_params=None, wf_params=None, scene_seed=None,
                with_refocus_target=True):
    """Assemble one sample from a bead scene.

    The input is the noised modality render at ``z_input_um``; the target is
    the noise-free sectioned render at ``z_target_um``; both are normalized.
    The propagation map is uniform at ``z_target_um - z_input_um``. When
    ``with_refocus_target`` is set, the noise-free same-modality render at
    the target plane is attached as auxiliary supervision.
    """
    input_range = INPUT_Z_RANGE_UM.get(modality)
    if input_range is None:
        raise ValueError(f"unknown modality {modality!r}")
    if abs(z_input_um) > input_range:
        raise ValueError(
            f"z_input_um {z_input_um} outside +-{input_range} um "
            f"for modality {modality}")
    if abs(z_target_um) > TARGET_Z_RANGE_UM:
        raise ValueError(
            f"z_target_um {z_target_um} outside +-{TARGET_Z_RANGE_UM} um")

    psf = _psf_for(modality, dh_params, wf_params)
    confocal = ConfocalPsfParams.from_widefield(
        wf_params if wf_params is not None else WidefieldPsfParams())

    raw_input = render_plane(scene, z_input_um, psf, config, size_px)
    if noise is not None:
        raw_input = add_noise(raw_input, noise)
    input_img = preprocess.normalize_image(raw_input)

    target_img = preprocess.normalize_image(
        render_plane(scene, z_target_um, confocal, config, size_px))

    refocus_img = None
    if with_refocus_target:
        refocus_img = preprocess.normalize_image(
            render_plane(scene, z_target_um, psf, config, size_px))

    dpm = build_uniform_dpm(input_img.pixels.shape,
                            z_target_um - z_input_um, modality=modality)
    meta = {"modality": modality, "z_input_um": float(z_input_um),
            "z_target_um": float(z_target_um)}
    if scene_seed is not None:
        meta["scene_seed"] = int(scene_seed)
    return Sample(input=input_img, dpm=dpm, target=target_img, meta=meta,
                  refocus_target=refocus_img)


class DatasetFormatError(ValueError):
    """Malformed container file (magic, version, size, or checksum)."""


def _planes_payload(planes):
    parts = []
    for plane in planes:
        arr = np.ascontiguousarray(plane, dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise ValueError("refusing to write non-finite plane values")
        parts.append(arr.tobytes())
    return b"".join(parts)


def _write_container(path, magic, planes):
    height, width = planes[0].shape
    for plane in planes:
        if plane.shape != (height, width):
            raise ValueError("planes must share one shape")
    payload = _planes_payload(planes)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<III", FORMAT_VERSION, height, width))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def _read_container(path, magic, n_planes):
    with open(path, "rb") as fh:
        blob = fh.read()
    head = len(magic) + 12
    if len(blob) < head + 4:
        raise DatasetFormatError(f"{path}: truncated header")
    if blob[:len(magic)] != magic:
        raise DatasetFormatError(
            f"{path}: bad magic {blob[:len(magic)]!r}, expected {magic!r}")
    version, height, width = struct.unpack_from("<III", blob, len(magic))
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported version {version}")
    plane_bytes = height * width * 4
    expected = head + n_planes * plane_bytes + 4
    if len(blob) != expected:
        raise DatasetFormatError(
            f"{path}: size {len(blob)} != expected {expected}")
    payload = blob[head:head + n_planes * plane_bytes]
    (crc,) = struct.unpack_from("<I", blob, head + n_planes * plane_bytes)
    if zlib.crc32(payload) != crc:
        raise DatasetFormatError(f"{path}: payload checksum mismatch")
    planes = [
        np.frombuffer(payload, dtype="<f4", count=height * width,
                      offset=i * plane_bytes).reshape(height, width)
        for i in range(n_planes)
    ]
    return planes, height, width


def write_sample(path, sample: Sample):
    """Write one ``.wnds`` triplet (input, dpm, target)."""
    _write_container(path, SAMPLE_MAGIC,
                     [sample.input.pixels, sample.dpm.values,
                      sample.target.pixels])


def write_plane(path, image: PlaneImage):
    """Write one ``.wndp`` single-plane image."""
    _write_container(path, PLANE_MAGIC, [image.pixels])


def read_plane(path, pixel_size_nm=72.0, z_plane_um=0.0):
    """Read one ``.wndp`` single-plane image."""
    planes, _, _ = _read_container(path, PLANE_MAGIC, 1)
    return PlaneImage(planes[0].astype(np.float64),
                      pixel_size_nm=pixel_size_nm, z_plane_um=z_plane_um)


def read_sample(path, meta=None, pixel_size_nm=72.0, refocus_path=None):
    """Read one ``.wnds`` triplet back into a Sample."""
    planes, _, _ = _read_container(path, SAMPLE_MAGIC, 3)
    meta = dict(meta or {})
    modality = meta.get("modality", MODALITY_DH)
    z_input = float(meta.get("z_input_um", 0.0))
    z_target = float(meta.get("z_target_um", 0.0))
    refocus = None
    if refocus_path is not None:
        refocus = read_plane(refocus_path, pixel_size_nm=pixel_size_nm,
                             z_plane_um=z_target)
    return Sample(
        input=PlaneImage(planes[0].astype(np.float64),
                         pixel_size_nm=pixel_size_nm, z_plane_um=z_input),
        dpm=Dpm(planes[1].astype(np.float64),
                max_abs_um=dpm_limit_um(modality)),
        target=PlaneImage(planes[2].astype(np.float64),
                          pixel_size_nm=pixel_size_nm, z_plane_um=z_target),
        meta=meta, refocus_target=refocus)


def write_dataset(samples, directory, modality=MODALITY_DH,
                  pixel_size_nm=72.0):
    """Stream samples to ``directory`` as numbered ``.wnds`` files plus a
    manifest. Returns the manifest dict. Constant memory per sample; the
    manifest is written last via a temp-file rename so readers never see a
    partial index."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    patch_px = None
    for i, sample in enumerate(samples):
        height, width = sample.input.pixels.shape
        if height != width:
            raise ValueError("dataset samples must be square")
        if patch_px is None:
            patch_px = height
        elif patch_px != height:
            raise ValueError("dataset samples must share one patch size")
        name = f"sample_{i:05d}.wnds"
        write_sample(os.path.join(directory, name), sample)
        entry = {"file": name, **sample.meta}
        if sample.refocus_target is not None:
            aux = f"sample_{i:05d}.refocus.wndp"
            write_plane(os.path.join(directory, aux), sample.refocus_target)
            entry["refocus_file"] = aux
        entries.append(entry)

    manifest = {
        "version": FORMAT_VERSION,
        "count": len(entries),
        "patch_px": patch_px if patch_px is not None else 0,
        "pixel_size_nm": pixel_size_nm,
        "modality": modality,
        "dpm_max_abs_um": dpm_limit_um(modality),
        "samples": entries,
    }
    tmp = os.path.join(directory, MANIFEST_NAME + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(directory, MANIFEST_NAME))
    return manifest


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DatasetFormatError(f"{path}: no manifest") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid JSON ({exc})") from None
    for key in ("version", "count", "patch_px", "pixel_size_nm", "modality",
                "samples"):
        if key not in manifest:
            raise DatasetFormatError(f"{path}: missing field {key!r}")
    if manifest["version"] != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported version {manifest['version']}")
    if manifest["count"] != len(manifest["samples"]):
        raise DatasetFormatError(f"{path}: count disagrees with sample list")
    return manifest


def iter_dataset(directory):
    """Yield samples in manifest order, verifying each file as it loads."""
    manifest = read_manifest(directory)
    pitch = manifest["pixel_size_nm"]
    for entry in manifest["samples"]:
        path = os.path.join(directory, entry["file"])
        refocus = entry.get("refocus_file")
        refocus_path = os.path.join(directory, refocus) if refocus else None
        meta = {k: v for k, v in entry.items()
                if k not in ("file", "refocus_file")}
        meta.setdefault("modality", manifest["modality"])
        yield read_sample(path, meta=meta, pixel_size_nm=pitch,
                          refocus_path=refocus_path)


def read_dataset(directory):
    """All samples of a dataset directory, manifest order."""
    return list(iter_dataset(directory))
