"""Command line pipeline: simulate, reconstruct, evaluate.

Exit codes: 0 success, 2 bad arguments or config, 3 data mismatch or
unreadable input, 4 solver divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__, formats
from .config import ConfigError, mask_from_spec, parse_grid, read_config
from .diffprox import gaussian_smooth, threshold, truncate
from .forward import SCENE_KINDS, add_noise, apply_selection, get_operator, synth_scene
from .grid import GridError, SceneGrid
from .metrics import max_intensity_projection, psnr, rel_error, ssim, ssim_config
from .projection import project_arrays
from .solvers import (
    SolverDivergence,
    energy_at,
    inpaint_reconstruct,
    l1_baseline,
    lct_baseline,
    slct_reconstruct,
)

log = logging.getLogger("slct")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISMATCH = 3
EXIT_DIVERGED = 4

METHODS = ("slct", "l1", "l1-inpaint", "lct")


class UsageError(Exception):
    pass


class DataMismatch(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    formats.atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def _write_text(path, text):
    formats.atomic_write(path, text.encode("utf-8"))


def _outdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path!r}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path!r} is not writable")
    return path


def _grid_dict(g: SceneGrid):
    return {"nx": g.nx, "ny": g.ny, "nz": g.nz, "nt": g.nt, "wall_size": g.wall_size, "bin_length": g.bin_length}


# ------------------------------------------------------------------ simulate


def cmd_simulate(args):
    if args.scene not in SCENE_KINDS:
        raise UsageError(f"unknown scene {args.scene!r}; valid kinds: {', '.join(SCENE_KINDS)}")
    if args.noise < 0:
        raise UsageError("--noise must be nonnegative")
    try:
        grid = parse_grid(args.grid)
        mask = mask_from_spec(args.mask, grid)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    out = _outdir(args.out)

    gt = synth_scene(args.scene, grid)
    clean = get_operator(grid).forward(gt.data)
    sigma_abs = args.noise * float(clean.max())
    full = add_noise(clean, gauss_sigma=sigma_abs, seed=args.seed)
    masked = apply_selection(full, mask)

    files = {
        "volume": "ground_truth.nvol",
        "transient_full": "transient_full.ntra",
        "transient": "transient.ntra",
        "mask": "mask.pgm",
    }
    formats.write_volume(os.path.join(out, files["volume"]), gt.data, grid.wall_size, grid.bin_length)
    formats.write_transient(os.path.join(out, files["transient_full"]), full, grid.wall_size, grid.bin_length)
    formats.write_transient(os.path.join(out, files["transient"]), masked, grid.wall_size, grid.bin_length)
    formats.write_mask(os.path.join(out, files["mask"]), mask.mask)
    manifest = {
        "command": "simulate",
        "version": __version__,
        "scene": args.scene,
        "grid": _grid_dict(grid),
        "noise_rel": args.noise,
        "noise_abs": sigma_abs,
        "mask": args.mask,
        "scans": mask.count,
        "seed": args.seed,
        "files": {k: {"name": v, "sha256": _sha256(os.path.join(out, v))} for k, v in files.items()},
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {len(files)} files and manifest.json to {out}")
    return EXIT_OK


# --------------------------------------------------------------- reconstruct


def _load_transient(path):
    try:
        return formats.read_transient(path)
    except (OSError, formats.FormatError) as exc:
        raise DataMismatch(f"cannot read transient {path!r}: {exc}") from None


def _report_text(method, e1_init, rows):
    lines = [f"# method {method}", "# k E1 relchange D_obj I_obj", f"init {e1_init:.9e}"]
    for k, e1, rc, d, i in rows:
        lines.append(f"{k} {e1:.9e} {rc:.9e} {d:.9e} {i:.9e}")
    return "\n".join(lines) + "\n"


def _timings_text(timings):
    lines = ["# k tau D I u [s]"]
    for k, t in enumerate(timings, 1):
        lines.append(f"{k} {t['tau']:.6f} {t['D']:.6f} {t['I']:.6f} {t['u']:.6f}")
    return "\n".join(lines) + "\n"


def cmd_reconstruct(args):
    try:
        cfg = read_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config!r}: {exc}") from None
    except ConfigError as exc:
        raise UsageError(f"config {args.config}: {exc}") from None
    params = _params(cfg)

    tau, hdr = _load_transient(args.input)
    ny, nx, nt = hdr.dims
    nz = cfg.get("nz", nt // 2)
    try:
        grid = SceneGrid(nx, ny, nz, nt, hdr.wall_size, hdr.bin_length)
    except GridError as exc:
        raise DataMismatch(f"input header does not describe a valid grid: {exc}") from None
    try:
        mask = formats.read_mask(args.mask)
    except (OSError, formats.FormatError, ValueError) as exc:
        raise DataMismatch(f"cannot read mask {args.mask!r}: {exc}") from None
    if mask.shape != (ny, nx):
        raise DataMismatch(f"mask is {mask.shape[0]}x{mask.shape[1]}, transient is {ny}x{nx}")
    if not mask.any():
        raise DataMismatch("mask selects no scan positions")
    out = _outdir(args.out)

    tau = tau.astype(np.float64)
    report = None
    if args.method == "slct":
        u, I, D, report = slct_reconstruct(tau, mask, params, grid)
    elif args.method == "l1-inpaint":
        u, I, D, report = inpaint_reconstruct(tau, mask, params, grid)
    elif args.method == "l1":
        u = l1_baseline(tau, mask, params, grid)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            u = lct_baseline(tau, grid)
    udata = u.data

    if report is None:
        e1 = energy_at(udata, tau, mask, params, grid)
        text = _report_text(args.method, e1, [])
        timings = []
    else:
        text = _report_text(args.method, report.e1_init, report.numeric_rows())
        timings = report.timings

    albedo, idx = project_arrays(udata, params.p)
    albedo = np.clip(albedo, 0.0, None)
    front = max_intensity_projection(udata)
    amax = albedo.max()

    files = {
        "volume": "volume.nvol",
        "maps": "maps.nvol",
        "albedo_png": "albedo.pgm",
        "depth_png": "depth.pgm",
        "front": "front.pgm",
        "report": "report.txt",
    }
    formats.write_volume(os.path.join(out, files["volume"]), udata, grid.wall_size, grid.bin_length)
    maps = np.stack([albedo, idx.astype(float)], axis=2)
    formats.write_volume(os.path.join(out, files["maps"]), maps, grid.wall_size, grid.bin_length)
    formats.write_pgm16(os.path.join(out, files["albedo_png"]), albedo / amax if amax > 0 else albedo)
    formats.write_pgm16(os.path.join(out, files["depth_png"]), idx / grid.nz)
    formats.write_pgm16(os.path.join(out, files["front"]), front)
    _write_text(os.path.join(out, files["report"]), text)
    # wall-clock numbers live apart so every other artifact is reproducible
    _write_text(os.path.join(out, "timings.txt"), _timings_text(timings))
    manifest = {
        "command": "reconstruct",
        "version": __version__,
        "method": args.method,
        "grid": _grid_dict(grid),
        "config": cfg.values,
        "inputs": {
            "transient": {"name": os.path.basename(args.input), "sha256": _sha256(args.input)},
            "mask": {"name": os.path.basename(args.mask), "sha256": _sha256(args.mask)},
        },
        "files": {k: {"name": v, "sha256": _sha256(os.path.join(out, v))} for k, v in files.items()},
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"{args.method}: wrote reconstruction to {out}")
    return EXIT_OK


def _params(cfg):
    try:
        return cfg.solver_params()
    except (ConfigError, TypeError) as exc:
        raise UsageError(f"config: {exc}") from None


# ------------------------------------------------------------------ evaluate


def _parse_post(items):
    """``truncate=lo,hi``, ``threshold=f``, ``smooth=s`` into a fixed-order chain."""
    post = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"bad --post item {item!r}; expected name=value")
        name, val = item.split("=", 1)
        try:
            if name == "truncate":
                lo, hi = (float(s) for s in val.split(","))
                post[name] = (lo, hi)
            elif name in ("threshold", "smooth"):
                post[name] = float(val)
            else:
                raise UsageError(f"unknown post step {name!r}; use truncate, threshold or smooth")
        except ValueError:
            raise UsageError(f"bad value in --post {item!r}") from None
    return post


def apply_post(img, post):
    """Truncate, threshold, smooth (in that order), then renormalize to [0, 1]."""
    out = np.asarray(img, dtype=float)
    try:
        if "truncate" in post:
            out = truncate(out, *post["truncate"])
        if "threshold" in post:
            out = threshold(out, post["threshold"])
        if "smooth" in post:
            out = gaussian_smooth(out, post["smooth"])
    except ValueError as exc:
        raise UsageError(f"--post: {exc}") from None
    return max_intensity_projection(out[:, :, None])


def cmd_evaluate(args):
    post = _parse_post(args.post)
    try:
        ref, rh = formats.read_volume(args.ref)
        test, th = formats.read_volume(args.test)
    except (OSError, formats.FormatError) as exc:
        raise DataMismatch(str(exc)) from None
    if rh.dims != th.dims or rh.wall_size != th.wall_size or rh.bin_length != th.bin_length:
        raise DataMismatch(f"grids differ: ref {rh.dims} vs test {th.dims}")
    ref_img = max_intensity_projection(ref.astype(np.float64))
    test_img = apply_post(max_intensity_projection(test.astype(np.float64)), post)
    p = psnr(ref_img, test_img)
    print(f"PSNR {p:.4f}" if np.isfinite(p) else "PSNR INF")
    print(f"SSIM {ssim(ref_img, test_img):.4f}")
    print(f"REL {rel_error(test_img, ref_img):.6f}")
    log.info(ssim_config())
    return EXIT_OK


# ---------------------------------------------------------------------- main


def build_parser():
    ap = argparse.ArgumentParser(prog="slct", description="Sparse-scan confocal NLOS reconstruction pipeline.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic scene and its scanned transient")
    s.add_argument("--scene", required=True, help=f"one of: {', '.join(SCENE_KINDS)}")
    s.add_argument("--grid", required=True, help="nx,ny,nz,nt,wall_size,bin_length")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std as a fraction of the signal max")
    s.add_argument("--mask", default="full", help="full | every_k:<n> | random:<n>:<seed>")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", help="reconstruct a volume from a transient")
    r.add_argument("--input", required=True, help="NTRA transient")
    r.add_argument("--mask", required=True, help="scan mask (PGM)")
    r.add_argument("--config", required=True, help="key = value run configuration")
    r.add_argument("--method", default="slct", choices=METHODS)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="compare two volumes on their front projections")
    e.add_argument("--ref", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--post", nargs="*", default=[], metavar="STEP", help="truncate=lo,hi threshold=f smooth=sigma")
    e.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"slct {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataMismatch as exc:
        print(f"slct {args.command}: data mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except SolverDivergence as exc:
        print(f"slct {args.command}: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
