"""Command-line entry point.

Subcommands: ``simulate`` (write a training dataset), ``register``
(subpixel shift between two images), ``dof`` / ``evaluate`` (defocus sweep
with tolerance table, curves, and SVG plots), and ``train`` / ``infer``
(delegated to the companion trainer when it is built).

Exit codes: 0 success; 1 runtime failure; 2 argument or input-validation
error; 3 trainer requested but not available. ``DHRB_THREADS`` caps per-z
parallelism in sweeps.
"""

import argparse
import base64
import json
import os
import subprocess
import sys

import numpy as np

from . import __version__, dataset_io, locmetrics, preprocess, svgplot
from .dataset_io import DatasetFormatError
from .optics import (ConfocalPsfParams, DhPsfParams, FieldBounds, NoiseParams,
                     OpticalConfig, PlaneImage, WidefieldPsfParams,
                     generate_bead_field, render_plane)
from .registration import dppcm_shift


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--modality", choices=[dataset_io.MODALITY_DH,
                                          dataset_io.MODALITY_WIDEFIELD],
                   default=dataset_io.MODALITY_DH)
    p.add_argument("--n", type=int, default=2000, help="sample count")
    p.add_argument("--patch", type=int, default=64, help="patch size, px")
    p.add_argument("--z-input-range", type=float, default=None,
                   help="input defocus span, um (default: modality range)")
    p.add_argument("--z-target-range", type=float,
                   default=dataset_io.TARGET_Z_RANGE_UM,
                   help="target plane span, um")
    p.add_argument("--bead-z-span-um", type=float,
                   default=dataset_io.TARGET_Z_RANGE_UM,
                   help="half-span of true bead depths, um")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--beads-min", type=int, default=8)
    p.add_argument("--beads-max", type=int, default=14)
    p.add_argument("--photons-min", type=float, default=800.0)
    p.add_argument("--photons-max", type=float, default=2000.0)
    p.add_argument("--min-separation-um", type=float, default=0.6)
    p.add_argument("--no-noise", action="store_true",
                   help="skip shot/read noise on inputs")
    p.add_argument("--no-refocus-target", action="store_true",
                   help="omit the auxiliary same-modality target plane")
    p.set_defaults(func=cmd_simulate)


def cmd_simulate(args):
    if args.n < 0:
        raise ValueError("--n must be non-negative")
    if args.patch < 16:
        raise ValueError("--patch must be at least 16")
    input_range = args.z_input_range
    if input_range is None:
        input_range = dataset_io.INPUT_Z_RANGE_UM[args.modality]
    if input_range <= 0 or args.z_target_range < 0:
        raise ValueError("z ranges must be positive")
    if args.beads_min < 1 or args.beads_max < args.beads_min:
        raise ValueError("bead count range must be ordered and >= 1")
    if args.bead_z_span_um < 0:
        raise ValueError("--bead-z-span-um must be non-negative")

    config = OpticalConfig()
    side_um = args.patch * config.pixel_size_nm / 1000.0
    target_span = min(args.z_target_range, dataset_io.TARGET_Z_RANGE_UM)
    bounds = FieldBounds(side_um, side_um, -args.bead_z_span_um,
                         args.bead_z_span_um)
    master = np.random.default_rng(args.seed)

    def samples():
        for i in range(args.n):
            z_input = float(master.uniform(-input_range, input_range))
            z_target = float(master.uniform(-target_span, target_span))
            n_beads = int(master.integers(args.beads_min, args.beads_max + 1))
            scene_seed = int(master.integers(0, 2 ** 31))
            noise_seed = int(master.integers(0, 2 ** 31))
            scene = generate_bead_field(
                n_beads, bounds,
                photon_range=(args.photons_min, args.photons_max),
                min_separation_um=args.min_separation_um, seed=scene_seed)
            noise = None if args.no_noise else NoiseParams(seed=noise_seed)
            yield dataset_io.make_sample(
                scene, args.modality, z_input, z_target, noise, config,
                size_px=args.patch, scene_seed=scene_seed,
                with_refocus_target=not args.no_refocus_target)

    manifest = dataset_io.write_dataset(samples(), args.out,
                                        modality=args.modality,
                                        pixel_size_nm=config.pixel_size_nm)
    print(f"wrote {manifest['count']} samples to {args.out}")
    return 0


def _add_register(sub):
    p = sub.add_parser("register",
                       help="subpixel shift between two images")
    p.add_argument("--input", required=True, help=".wndp or .npy image")
    p.add_argument("--target", required=True, help=".wndp or .npy image")
    p.add_argument("--single-peak", action="store_true",
                   help="disable the dual-peak midpoint rule")
    p.add_argument("--phase-only", action="store_true",
                   help="whitened-spectrum correlation baseline")
    p.add_argument("--min-separation", type=int, default=3,
                   help="minimum peak separation, px")
    p.set_defaults(func=cmd_register)


def _load_image(path):
    if path.endswith(".wndp"):
        return dataset_io.read_plane(path)
    if path.endswith(".npy"):
        arr = np.load(path)
        return PlaneImage(np.asarray(arr, dtype=np.float64))
    raise ValueError(f"{path}: expected a .wndp or .npy image")


def cmd_register(args):
    a = _load_image(args.input)
    b = _load_image(args.target)
    estimate = dppcm_shift(a, b, min_separation_px=args.min_separation,
                           dual=not args.single_peak,
                           phase_only=args.phase_only)
    print(f"{estimate.dx_px:.3f},{estimate.dy_px:.3f},"
          f"{estimate.confidence:.3f},{str(estimate.degraded).lower()}")
    return 0


def _add_dof(sub):
    p = sub.add_parser("dof", aliases=["evaluate"],
                       help="defocus sweep and tolerance table")
    p.add_argument("--refocuser", required=True,
                   choices=["identity", "oracle", "model"])
    p.add_argument("--checkpoint", help="trainer checkpoint (model mode)")
    p.add_argument("--dataset",
                   help="dataset dir supplying modality/patch defaults")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--modality", choices=[dataset_io.MODALITY_DH,
                                          dataset_io.MODALITY_WIDEFIELD],
                   default=None)
    p.add_argument("--z-min", type=float, default=-8.0)
    p.add_argument("--z-max", type=float, default=8.0)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--tolerances", default="0,0.1,0.2",
                   help="comma-separated tolerance levels")
    p.add_argument("--scene-seed", type=int, default=7)
    p.add_argument("--beads", type=int, default=40)
    p.add_argument("--field-px", type=int, default=None,
                   help="test frame size, px")
    p.add_argument("--photons-min", type=float, default=1400.0)
    p.add_argument("--photons-max", type=float, default=1600.0)
    p.add_argument("--min-separation-um", type=float, default=0.6)
    p.add_argument("--z-jitter-um", type=float, default=0.05,
                   help="half-span of true bead depths around the slab")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--normalization", choices=["focal", "per-plane"],
                   default=None,
                   help="focal: fixed scale from the z=0 frame (default for "
                        "identity/oracle); per-plane: rescale each frame "
                        "(default for model)")
    p.add_argument("--detect-threshold", type=float,
                   default=locmetrics.DETECT_THRESHOLD_DEFAULT)
    p.add_argument("--min-pixels", type=int,
                   default=locmetrics.MIN_PIXELS_DEFAULT)
    p.add_argument("--radius-nm", type=float,
                   default=locmetrics.MATCH_RADIUS_NM_DEFAULT)
    p.set_defaults(func=cmd_dof)


def _build_z_grid(z_min, z_max, step):
    if step <= 0:
        raise ValueError("--step must be positive")
    if z_max <= z_min:
        raise ValueError("--z-max must exceed --z-min")
    count = int(round((z_max - z_min) / step)) + 1
    grid = z_min + step * np.arange(count)
    if np.min(np.abs(grid)) > 1e-9:
        raise ValueError("z grid must include 0 "
                         "(choose z-min/z-max as multiples of step)")
    return np.round(grid, 9)


def cmd_dof(args):
    modality = args.modality
    field_px = args.field_px
    if args.dataset:
        manifest = dataset_io.read_manifest(args.dataset)
        if modality is None:
            modality = manifest["modality"]
        if field_px is None:
            field_px = int(manifest["patch_px"])
    if modality is None:
        modality = dataset_io.MODALITY_DH
    if field_px is None:
        field_px = 256
    if field_px < 32:
        raise ValueError("--field-px must be at least 32")

    tolerances = []
    for token in args.tolerances.split(","):
        token = token.strip()
        if token:
            tolerances.append(float(token))
    if not tolerances:
        raise ValueError("--tolerances must name at least one level")

    z_grid = _build_z_grid(args.z_min, args.z_max, args.step)
    config = OpticalConfig()
    psf = (DhPsfParams() if modality == dataset_io.MODALITY_DH
           else WidefieldPsfParams())
    side_um = field_px * config.pixel_size_nm / 1000.0
    jitter = max(args.z_jitter_um, 1e-6)
    scene = generate_bead_field(
        args.beads, FieldBounds(side_um, side_um, -jitter, jitter),
        photon_range=(args.photons_min, args.photons_max),
        min_separation_um=args.min_separation_um, seed=args.scene_seed)
    noise = None if args.no_noise else NoiseParams(seed=args.scene_seed + 1)

    normalization = args.normalization
    if normalization is None:
        normalization = "per-plane" if args.refocuser == "model" else "focal"
    normalizer = (preprocess.normalize_image
                  if normalization == "per-plane" else None)

    node = None
    workers = None
    try:
        if args.refocuser == "identity":
            def refocuser(img, delta_z_um):
                return img
        elif args.refocuser == "oracle":
            oracle_img = preprocess.normalize_image(render_plane(
                scene, 0.0, ConfocalPsfParams.from_widefield(
                    WidefieldPsfParams()), config, field_px))

            def refocuser(img, delta_z_um):
                return oracle_img
        else:
            if not args.checkpoint:
                raise ValueError("--refocuser model requires --checkpoint")
            if not os.path.exists(args.checkpoint):
                raise ValueError(f"missing checkpoint: {args.checkpoint}")
            node = NodeRefocuser(args.checkpoint)
            refocuser = node.refocus
            workers = 1  # one child process, serial requests

        result = locmetrics.dof_sweep(
            refocuser, scene, z_grid, tolerances, config, psf,
            size_px=field_px, noise=noise, normalizer=normalizer,
            detect_threshold=args.detect_threshold,
            min_pixels=args.min_pixels, radius_nm=args.radius_nm,
            workers=workers)
    finally:
        if node is not None:
            node.close()

    os.makedirs(args.out, exist_ok=True)
    report_csv = locmetrics.dof_reports_csv(result.reports)
    curve_csv = locmetrics.curve_csv(result.curve)
    _write_text(os.path.join(args.out, "dof_report.csv"), report_csv)
    _write_text(os.path.join(args.out, "dof_curve.csv"), curve_csv)

    zs = [row.z_um for row in result.curve]
    ji = [row.ji for row in result.curve]
    rmse = [row.rmse_nm for row in result.curve]
    _write_text(os.path.join(args.out, "ji_vs_z.svg"),
                svgplot.line_plot_svg([("JI", zs, ji)],
                                      title="Detectability vs defocus",
                                      xlabel="z (um)", ylabel="Jaccard index"))
    _write_text(os.path.join(args.out, "rmse_vs_z.svg"),
                svgplot.line_plot_svg([("RMSE", zs, rmse)],
                                      title="Lateral error vs defocus",
                                      xlabel="z (um)", ylabel="RMSE (nm)"))
    sys.stdout.write(report_csv)
    return 0


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _find_frontend():
    candidates = []
    env = os.environ.get("DHRB_FRONTEND")
    if env:
        candidates.append(env)
    candidates.append(os.path.join(os.getcwd(), "frontend"))
    here = os.path.dirname(os.path.abspath(__file__))
    candidates.append(os.path.normpath(
        os.path.join(here, "..", "..", "frontend")))
    for root in candidates:
        if os.path.isfile(os.path.join(root, "package.json")):
            return root
    return None


def _frontend_entry():
    root = _find_frontend()
    if root is None:
        return None, ("trainer component not found: build the frontend "
                      "package (or set DHRB_FRONTEND) to enable this "
                      "subcommand")
    entry = os.path.join(root, "dist", "cli.js")
    if not os.path.isfile(entry):
        return None, (f"trainer at {root} is not built: run "
                      f"`npm install && npm run build` there first")
    return entry, None


def _add_train(sub):
    p = sub.add_parser("train", help="train the companion model (delegated)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--arch", choices=["wnet", "unet"], default="wnet")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--limit", type=int, default=0,
                   help="cap on samples loaded (0 = all)")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_train)


def cmd_train(args):
    entry, message = _frontend_entry()
    if entry is None:
        print(f"error: {message}", file=sys.stderr)
        return 3
    cmd = ["node", entry, "train", "--dataset", args.dataset,
           "--out", args.out, "--arch", args.arch,
           "--epochs", str(args.epochs), "--batch", str(args.batch),
           "--seed", str(args.seed)]
    if args.limit:
        cmd += ["--limit", str(args.limit)]
    proc = subprocess.run(cmd)
    return 1 if proc.returncode else 0


def _add_infer(sub):
    p = sub.add_parser("infer", help="run the companion model (delegated)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help=".wndp input image")
    p.add_argument("--dpm", type=float, required=True,
                   help="uniform propagation distance, um")
    p.add_argument("--out", required=True, help="output .wndp path")
    p.add_argument("--refocused-out",
                   help="also save the intermediate refocused plane")
    p.set_defaults(func=cmd_infer)


def cmd_infer(args):
    entry, message = _frontend_entry()
    if entry is None:
        print(f"error: {message}", file=sys.stderr)
        return 3
    cmd = ["node", entry, "infer", "--checkpoint", args.checkpoint,
           "--input", args.input, "--dpm", str(args.dpm),
           "--out", args.out]
    if args.refocused_out:
        cmd += ["--refocused-out", args.refocused_out]
    proc = subprocess.run(cmd)
    return 1 if proc.returncode else 0


class NodeRefocuser:
    """Persistent trainer child process answering refocus requests.

    Speaks line-delimited JSON on stdin/stdout: request
    {"h", "w", "dpm", "data": base64 float32 LE} -> response
    {"data": base64 float32 LE} (the model's final output plane).
    """

    def __init__(self, checkpoint):
        entry, message = _frontend_entry()
        if entry is None:
            raise RuntimeError(message)
        self._proc = subprocess.Popen(
            ["node", entry, "infer", "--checkpoint", checkpoint, "--serve"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        ready = self._proc.stdout.readline()
        if not ready.strip().startswith("{"):
            raise RuntimeError(
                f"trainer process failed to start: {ready.strip()!r}")

    def refocus(self, img: PlaneImage, delta_z_um):
        h, w = img.pixels.shape
        payload = base64.b64encode(
            np.ascontiguousarray(img.pixels, dtype="<f4").tobytes()).decode()
        request = json.dumps({"h": h, "w": w, "dpm": float(delta_z_um),
                              "data": payload})
        self._proc.stdin.write(request + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError("trainer process closed unexpectedly")
        reply = json.loads(line)
        if "error" in reply:
            raise RuntimeError(f"trainer inference error: {reply['error']}")
        out = np.frombuffer(base64.b64decode(reply["data"]),
                            dtype="<f4").reshape(h, w)
        return PlaneImage(out.astype(np.float64),
                          pixel_size_nm=img.pixel_size_nm,
                          z_plane_um=img.z_plane_um)

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=10)
            except Exception:
                self._proc.kill()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dhrb",
        description="Synthetic double-helix microscopy: simulation, "
                    "registration, and refocusing evaluation.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_register(sub)
    _add_dof(sub)
    _add_train(sub)
    _add_infer(sub)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already reported (help=0, error=2)
        return 0 if exc.code is None else int(exc.code)
    try:
        return args.func(args)
    except DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
