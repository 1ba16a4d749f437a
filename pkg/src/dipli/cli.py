"""Command-line interface: ``synth``, ``flow``, ``restore``, ``eval`` and ``sweep``.

Configuration is layered as defaults < preset < ``--config`` JSON < flags.
A run manifest written by ``restore`` is itself a valid ``--config`` file, so
any run can be replayed from its manifest alone.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 non-finite
loss, 5 at least one sweep point failed. Diagnostics go to stderr as
``<ErrorName>: <message>`` lines.
"""

import argparse
import copy
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core.filters import lanczos_resize, laplacian_energy
from .core.imageio import read_image, write_image
from .core.metrics import psnr, ssim
from .degrade import DegradationConfig
from .errors import ConfigError, DimNotDivisible, DipliError, ImageFormatError, InvalidConfig, IoFailure, NonFiniteLoss, ShapeMismatch
from .flow import (FlowField, TvL1Params, estimate_flow_tvl1, flow_magnitude_image, read_flo, upscale_flow,
                   write_flo)
from .generator import UNetConfig
from .lucky import FrameStack, lucky_imaging, select_pivot
from .sgld import TABLE_ROWS, SGLDConfig, run_dipli
from .synth import PATTERNS, Scene, SceneSpec, generate_scene, make_test_pattern

__all__ = ["main", "build_parser", "resolve_config", "DEFAULTS", "PRESETS", "EXIT_CODES"]

EXIT_CODES = {"ok": 0, "config": 2, "io": 3, "nonfinite": 4, "sweep": 5}
METHODS = ("li", "dip", "dipli")
SWEEP_AXES = ("frames", "sigma_xi", "lr_row")

DEFAULTS = {
    "method": "dipli",
    "seed": 0,
    "trace_stride": 1,
    "scene": {
        "pattern": "craters",
        "hq_size": 128,
        "K": 7,
        "jitter_px": 1.5,
        "warp_amp_px": 1.0,
        "warp_cells": 4,
        "gt_path": None,
    },
    "degradation": {
        "scale": 2,
        "psf_sigma": None,
        "psf_radius": None,
        "lanczos_lobes": 3,
        "noise_sigma": 0.04,
        "poisson_peak": 200.0,
        "mix_mode": "poisson_then_additive",
        "seed": None,
    },
    "net": {"stages": 4, "width": 16, "latent_channels": 32, "dropout_p": 0.05, "pooling": "avg"},
    "sgld": {
        "lambda_base": 1.0,
        "sched_a": 1.2e-4,
        "sched_b": 1.0,
        "sched_gamma": 0.0,
        "sigma_xi": 0.0025,
        "sigma_z": 0.02,
        "n_total": 1500,
        "n_warmup": 1200,
        "optimizer": "sgld_plain",
        "sigma_xi_mode": "constant",
    },
    "tvl1": TvL1Params().to_dict(),
    "lucky": {"select_frac": 1.0},
    "io": {"scene_dir": None, "frames": None, "gt": None, "oracle_flows": False},
}

PRESETS = {
    "desk": {},
    "paper": {
        "scene": {"hq_size": 256, "K": 11},
        "degradation": {"scale": 4},
        "net": {"width": 128},
        "sgld": {"lambda_base": 100.0, "sched_a": 5.5e-3, "sched_b": 555.0, "sched_gamma": 1.0,   # row P3
                 "n_total": 6500, "n_warmup": 6000},
    },
}


class SweepFailure(DipliError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise InvalidConfig(f"unknown configuration key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidConfig(f"'{where}' must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config_file(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path} must contain a JSON object")
    if "config" in data and "command" in data:
        data = data["config"]                # a run manifest
    return data


def resolve_config(preset="desk", file_config=None, overrides=None):
    """Merge defaults, a preset, a config mapping and flag overrides."""
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}")
    cfg = _merge(DEFAULTS, PRESETS[preset])
    if file_config:
        cfg = _merge(cfg, file_config)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg["method"] not in METHODS:
        raise InvalidConfig(f"method must be one of {METHODS}")
    if cfg["scene"]["pattern"] not in PATTERNS:
        raise InvalidConfig(f"pattern must be one of {PATTERNS}")
    try:
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"seed must be an integer, got {cfg['seed']!r}") from exc
    if cfg["seed"] < 0:
        raise InvalidConfig("seed must be non-negative")
    deg = degradation_config(cfg)
    size, scale = int(cfg["scene"]["hq_size"]), deg.scale_s
    if not cfg["scene"]["gt_path"] and size % scale:
        raise DimNotDivisible(f"scene size {size} is not divisible by scale {scale}")
    net_config(cfg, out_channels=1)
    sgld_config(cfg)
    TvL1Params(**cfg["tvl1"])
    if not 0 < cfg["lucky"]["select_frac"] <= 1:
        raise InvalidConfig("lucky.select_frac must lie in (0, 1]")
    if cfg["scene"]["K"] < 1:
        raise InvalidConfig("scene.K must be >= 1")
    return deg


def degradation_config(cfg):
    try:
        return DegradationConfig.from_dict(cfg["degradation"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise InvalidConfig(f"bad degradation settings: {exc}") from exc


def net_config(cfg, out_channels):
    n = cfg["net"]
    try:
        return UNetConfig(stages=int(n["stages"]), width=int(n["width"]), latent_channels=int(n["latent_channels"]),
                          dropout_p=float(n["dropout_p"]), scale_s=int(cfg["degradation"]["scale"]),
                          out_channels=out_channels, pooling=n["pooling"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise InvalidConfig(f"bad network settings: {exc}") from exc


def sgld_config(cfg):
    s = dict(cfg["sgld"])
    try:
        return SGLDConfig(seed=cfg["seed"], **s)
    except TypeError as exc:
        raise InvalidConfig(f"bad sgld settings: {exc}") from exc


# ---------------------------------------------------------------------------
# scenes on disk


def _git_blob_hash(path):
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _array_hash(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def _write_json(obj, path):
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return _finite_or_str(float(value))
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _finite_or_str(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc


def build_scene(cfg):
    sc = cfg["scene"]
    deg = degradation_config(cfg)
    if sc["gt_path"]:
        gt = read_image(sc["gt_path"])
    else:
        size = int(sc["hq_size"])
        gt = make_test_pattern(sc["pattern"], size, size, cfg["seed"])
    spec = SceneSpec(gt=gt, K=int(sc["K"]), jitter_px=float(sc["jitter_px"]), warp_amp_px=float(sc["warp_amp_px"]),
                     warp_cells=int(sc["warp_cells"]), degradation=deg, seed=cfg["seed"])
    return spec, generate_scene(spec)


def save_scene(scene, spec, out):
    _mkdir(out)
    out = Path(out)
    write_image(scene.gt, out / "gt.pfm")
    for k, (frame, flow) in enumerate(zip(scene.frames, scene.true_flows_lq)):
        write_image(frame, out / f"frame_{k:02d}.pfm")
        write_flo(flow, out / f"flow_{k:02d}.flo")
    meta = {
        "K": scene.K,
        "pivot_true": scene.pivot_true,
        "scale": spec.degradation.scale_s,
        "jitter_px": spec.jitter_px,
        "warp_amp_px": spec.warp_amp_px,
        "warp_cells": spec.warp_cells,
        "degradation": spec.degradation.to_dict(),
        "seed": spec.seed,
        "gt_shape": list(scene.gt.shape),
    }
    _write_json(meta, out / "scene.json")


def load_scene(directory):
    """Read a scene written by ``synth``; frames and flows come back as float32-exact values."""
    d = Path(directory)
    try:
        with open(d / "scene.json") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read scene metadata in {d}: {exc}") from exc
    frames = [read_image(d / f"frame_{k:02d}.pfm") for k in range(meta["K"])]
    flows = [read_flo(d / f"flow_{k:02d}.flo") for k in range(meta["K"])]
    gt = read_image(d / "gt.pfm") if (d / "gt.pfm").exists() else None
    return Scene(gt=gt, frames=frames, true_flows_lq=flows, pivot_true=int(meta["pivot_true"])), meta


def scene_inputs(scene_dir, meta):
    d = Path(scene_dir)
    names = ["scene.json", "gt.pfm"] + [f"frame_{k:02d}.pfm" for k in range(meta["K"])] + \
        [f"flow_{k:02d}.flo" for k in range(meta["K"])]
    return {str((d / n).resolve()): _git_blob_hash(d / n) for n in names if (d / n).exists()}


# ---------------------------------------------------------------------------
# restore


def _gather_inputs(cfg):
    io = cfg["io"]
    if io["scene_dir"]:
        scene, meta = load_scene(io["scene_dir"])
        return scene, scene_inputs(io["scene_dir"], meta)
    if io["frames"]:
        frames = [read_image(p) for p in io["frames"]]
        gt = read_image(io["gt"]) if io["gt"] else None
        inputs = {str(Path(p).resolve()): _git_blob_hash(p) for p in io["frames"]}
        if io["gt"]:
            inputs[str(Path(io["gt"]).resolve())] = _git_blob_hash(io["gt"])
        return Scene(gt=gt, frames=frames, true_flows_lq=None, pivot_true=None), inputs
    spec, scene = build_scene(cfg)
    return scene, {}


def _reference(scene, pivot):
    """Ground truth in the geometry of the reconstruction's anchor frame."""
    if scene.gt is None:
        return None
    if scene.true_flows_lq is None or scene.pivot_true is None:
        return scene.gt
    return scene.reference(pivot)


def _metrics(img, ref):
    out = {"laplacian_energy": laplacian_energy(img)}
    if ref is not None:
        out["psnr"] = psnr(img, ref)
        out["ssim"] = ssim(img, ref)
    return out


def _clean_path(value):
    return str(Path(value).resolve()) if value else value


def restore(cfg, out):
    """Run the configured method and write its artifacts into ``out``."""
    start = time.perf_counter()
    cfg = copy.deepcopy(cfg)
    cfg["io"]["scene_dir"] = _clean_path(cfg["io"]["scene_dir"])
    cfg["io"]["gt"] = _clean_path(cfg["io"]["gt"])
    if cfg["io"]["frames"]:
        cfg["io"]["frames"] = [_clean_path(p) for p in cfg["io"]["frames"]]
    scene, inputs = _gather_inputs(cfg)
    method = cfg["method"]
    stack = FrameStack(scene.frames)
    deg = degradation_config(cfg)
    tv = TvL1Params(**cfg["tvl1"])
    _mkdir(out)
    out = Path(out)
    summary = {"method": method}

    if method == "li":
        res = lucky_imaging(stack, cfg["lucky"]["select_frac"], tv, return_details=True)
        image, pivot = res.image, res.pivot
        ref = None
        if scene.gt is not None:
            # compare at LQ resolution against the reduced reference
            full = _reference(scene, pivot)
            ref = lanczos_resize(full, *image.shape[-2:], deg.lanczos_lobes)
        with open(out / "quality.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "laplacian_energy", "kept"])
            for k, (q, kept) in enumerate(zip(res.quality, res.kept)):
                w.writerow([k, repr(q), int(kept)])
        summary.update(_metrics(image, ref))
    else:
        frames = stack.frames
        if method == "dip":
            frames = [stack[select_pivot(stack)]]
        pivot_in_stack = select_pivot(stack)
        net = net_config(cfg, out_channels=stack.shape[0])
        opt = sgld_config(cfg)
        flows_hq = None
        if cfg["io"]["oracle_flows"] and method == "dipli":
            if scene.true_flows_lq is None:
                raise InvalidConfig("oracle_flows needs a synthetic scene with stored flows")
            flows_hq = _oracle_flows(scene, pivot_in_stack, deg.scale_s)
        ref = _reference(scene, pivot_in_stack)
        res = run_dipli(frames, deg, net, opt, gt=ref, flows_hq=flows_hq, flow_params=tv,
                        trace_stride=cfg["trace_stride"])
        image, pivot = res.y_star, pivot_in_stack
        res.trace.to_csv(out / "trace.csv")
        summary.update(_metrics(image, ref))
        summary["final_loss"] = res.trace.loss[-1]
        if ref is not None:
            summary["last_sample_psnr"] = psnr(res.last_sample, ref)

    write_image(image, out / "y_star.pfm")
    write_image(image, out / "preview.png")
    summary["pivot"] = pivot
    summary["wall_time"] = time.perf_counter() - start
    manifest = {
        "command": "restore",
        "version": __version__,
        "config": cfg,
        "inputs": inputs,
        "outputs": {"y_star": _array_hash(image), "y_star.pfm": _git_blob_hash(out / "y_star.pfm")},
        "summary": {k: _finite_or_str(v) if isinstance(v, float) else v for k, v in summary.items()},
    }
    _write_json(manifest, out / "manifest.json")
    return image, summary


def _oracle_flows(scene, pivot, s):
    """True flows re-anchored on ``pivot``: ``frame_k ~ warp(scene in pivot geometry, w_k)``."""
    ref = scene.true_flows_lq[pivot]
    flows = []
    for f in scene.true_flows_lq:
        # flows compose approximately by subtraction for the small, smooth fields used here
        flows.append(upscale_flow(FlowField(f.u - ref.u, f.v - ref.v), s))
    return flows


# ---------------------------------------------------------------------------
# eval / flow / synth / sweep


def evaluate(result_path, gt_path=None):
    img = read_image(result_path)
    metrics = {"laplacian_energy": laplacian_energy(img)}
    if gt_path:
        gt = read_image(gt_path)
        if gt.shape != img.shape:
            raise ShapeMismatch(f"result {img.shape} and ground truth {gt.shape} differ")
        metrics["psnr"] = psnr(img, gt)
        metrics["ssim"] = ssim(img, gt)
    return metrics


def _write_metrics(metrics, out):
    _mkdir(out)
    out = Path(out)
    _write_json({k: _finite_or_str(v) for k, v in metrics.items()}, out / "metrics.json")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(metrics))
        w.writerow([_fmt(v) for v in metrics.values()])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else _finite_or_str(v)
    return str(v)


def _sweep_job(args):
    cfg, out = args
    try:
        image, summary = restore(cfg, out)
        return {"ok": True, **summary}
    except Exception as exc:           # noqa: BLE001 - reported per point, the sweep continues
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def sweep_configs(cfg, axis, values):
    jobs = []
    for v in values:
        c = copy.deepcopy(cfg)
        if axis == "frames":
            c["scene"]["K"] = int(v)
        elif axis == "sigma_xi":
            c["sgld"]["sigma_xi"] = float(v)
        elif axis == "lr_row":
            if v not in TABLE_ROWS:
                raise InvalidConfig(f"unknown schedule row {v!r}; choose from {sorted(TABLE_ROWS)}")
            lam, a, b, gamma = TABLE_ROWS[v]
            c["sgld"].update(lambda_base=lam, sched_a=a, sched_b=b, sched_gamma=gamma)
        else:
            raise InvalidConfig(f"axis must be one of {SWEEP_AXES}")
        validate_config(c)
        jobs.append((str(v), c))
    return jobs


def sweep(cfg, axis, values, out, workers=1):
    jobs = sweep_configs(cfg, axis, values)
    _mkdir(out)
    args = [(c, str(Path(out) / f"{axis}_{label}")) for label, c in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, args))
    else:
        results = [_sweep_job(a) for a in args]
    with open(Path(out) / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "psnr", "ssim", "laplacian", "wall_time", "status"])
        for (label, _), r in zip(jobs, results):
            w.writerow([label, _fmt(r.get("psnr")), _fmt(r.get("ssim")), _fmt(r.get("laplacian_energy")),
                        _fmt(r.get("wall_time")), "ok" if r["ok"] else r["error"]])
    return results


# ---------------------------------------------------------------------------
# argument parsing


def _common(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON config or run manifest")
    parser.add_argument("--seed", type=int, default=d, help="seed for every random stream")
    parser.add_argument("--out", default=d, help="output directory")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes for sweeps")
    parser.add_argument("--preset", choices=sorted(PRESETS), default=argparse.SUPPRESS if suppress else "desk")


def _scene_flags(p):
    p.add_argument("--pattern", choices=PATTERNS)
    p.add_argument("--size", type=int, help="HQ ground-truth side length")
    p.add_argument("--frames", type=int, dest="K", help="number of LQ frames")
    p.add_argument("--scale", type=int, help="magnification factor s")


def _run_flags(p):
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--scene", help="scene directory written by 'synth'")
    p.add_argument("--inputs", nargs="+", help="raw LQ frame files (instead of --scene)")
    p.add_argument("--gt", help="ground truth for trace metrics with --inputs")
    p.add_argument("--iterations", type=int, help="SGLD iterations N")
    p.add_argument("--warmup", type=int, help="iterations before averaging")
    p.add_argument("--sigma-xi", type=float, dest="sigma_xi")
    p.add_argument("--width", type=int, help="U-Net channels per stage")
    p.add_argument("--trace-stride", type=int, dest="trace_stride")
    p.add_argument("--oracle-flows", action="store_true", default=None, dest="oracle_flows")


def build_parser():
    parser = argparse.ArgumentParser(prog="dipli",
                                     description="Multi-frame super-resolution with an untrained U-Net prior.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    _common(p, suppress=True)
    _scene_flags(p)

    p = sub.add_parser("flow", help="TV-L1 flow warping SOURCE onto TARGET")
    _common(p, suppress=True)
    p.add_argument("target")
    p.add_argument("source")

    p = sub.add_parser("restore", help="reconstruct an image with li, dip or dipli")
    _common(p, suppress=True)
    _scene_flags(p)
    _run_flags(p)

    p = sub.add_parser("eval", help="score a result image")
    _common(p, suppress=True)
    p.add_argument("result")
    p.add_argument("--gt", dest="eval_gt")

    p = sub.add_parser("sweep", help="restore + eval along one axis")
    _common(p, suppress=True)
    _scene_flags(p)
    _run_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", nargs="+", required=True)
    return parser


def _overrides(args):
    o = {}

    def put(section, key, value):
        if value is not None:
            if section is None:
                o[key] = value
            else:
                o.setdefault(section, {})[key] = value

    put(None, "seed", getattr(args, "seed", None))
    put("scene", "pattern", getattr(args, "pattern", None))
    put("scene", "hq_size", getattr(args, "size", None))
    put("scene", "K", getattr(args, "K", None))
    put("degradation", "scale", getattr(args, "scale", None))
    put(None, "method", getattr(args, "method", None))
    put("io", "scene_dir", getattr(args, "scene", None))
    put("io", "frames", getattr(args, "inputs", None))
    put("io", "gt", getattr(args, "gt", None))
    put("io", "oracle_flows", getattr(args, "oracle_flows", None))
    put("sgld", "n_total", getattr(args, "iterations", None))
    put("sgld", "n_warmup", getattr(args, "warmup", None))
    put("sgld", "sigma_xi", getattr(args, "sigma_xi", None))
    put("net", "width", getattr(args, "width", None))
    put(None, "trace_stride", getattr(args, "trace_stride", None))
    if "sgld" in o and "n_total" in o["sgld"] and "n_warmup" not in o["sgld"]:
        # keep the averaging window length when only N changes
        o["sgld"]["n_warmup"] = max(0, o["sgld"]["n_total"] - 300) if o["sgld"]["n_total"] > 300 else \
            o["sgld"]["n_total"] - 1
    return o


def _fail(exc, code):
    print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
    return code


def _run(args):
    file_cfg = load_config_file(args.config) if args.config else None
    cfg = resolve_config(args.preset, file_cfg, _overrides(args))
    out = args.out or "."
    if args.command == "synth":
        spec, scene = build_scene(cfg)
        save_scene(scene, spec, out)
        _write_json({"command": "synth", "version": __version__, "config": cfg}, Path(out) / "manifest.json")
        print(f"wrote {scene.K} frames to {out} (pivot_true={scene.pivot_true})")
        return 0
    if args.command == "flow":
        target, source = read_image(args.target), read_image(args.source)
        flow = estimate_flow_tvl1(target, source, TvL1Params(**cfg["tvl1"]))
        _mkdir(out)
        write_flo(flow, Path(out) / "flow.flo")
        write_image(flow_magnitude_image(flow), Path(out) / "flow_magnitude.pgm")
        mag = flow.magnitude()
        _write_json({"mean_magnitude": float(mag.mean()), "max_magnitude": float(mag.max()),
                     "shape": list(flow.shape)}, Path(out) / "flow.json")
        print(f"mean |flow| = {mag.mean():.4f} px")
        return 0
    if args.command == "restore":
        _, summary = restore(cfg, out)
        print(json.dumps({k: _finite_or_str(v) if isinstance(v, float) else v for k, v in summary.items()}))
        return 0
    if args.command == "eval":
        metrics = evaluate(args.result, args.eval_gt)
        _write_metrics(metrics, out)
        print(json.dumps({k: _finite_or_str(v) for k, v in metrics.items()}))
        return 0
    if args.command == "sweep":
        results = sweep(cfg, args.axis, args.values, out, workers=max(1, args.threads or 1))
        failed = [r for r in results if not r["ok"]]
        for r in failed:
            print(f"SweepFailure: {r['error']}", file=sys.stderr)
        print(f"{len(results) - len(failed)}/{len(results)} sweep points succeeded; summary in {out}/summary.csv")
        return EXIT_CODES["sweep"] if failed else 0
    raise InvalidConfig(f"unknown command {args.command!r}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except NonFiniteLoss as exc:
        return _fail(exc, EXIT_CODES["nonfinite"])
    except (ConfigError, ShapeMismatch) as exc:
        return _fail(exc, EXIT_CODES["config"])
    except (IoFailure, ImageFormatError, OSError) as exc:
        return _fail(exc, EXIT_CODES["io"])
    except DipliError as exc:
        return _fail(exc, EXIT_CODES["config"])


if __name__ == "__main__":
    sys.exit(main())
