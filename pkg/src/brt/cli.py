"""Command-line surface for batch use.

Subcommands: synthesize | align | restore | train | evaluate. Every command
accepts --config (TOML or JSON) whose keys mirror the flags one-to-one;
explicit flags win over the file. Every command writes a run manifest next
to its outputs with the fully resolved configuration, so a manifest is
enough to repeat a run bit-identically.

Exit codes: 0 success, 2 bad input, 3 alignment-degraded (outputs are still
written). BRT_THREADS caps the worker threads used for per-sample
parallelism; results never depend on the thread count.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__, proxnet, training
from .align import PyramidConfig, align_burst
from .image import Burst, Image, PixelSpace, linrgb_to_srgb, load_image, psnr, save_image, srgb_to_linrgb
from .solver import (
    IdentityProx,
    NetworkProx,
    SoftThresholdProx,
    SolverConfig,
    init_continuation,
    run,
    run_with_alignment,
)
from .training import (
    GaussianNoise,
    HeteroskedasticNoise,
    SyntheticBurstSpec,
    TrainConfig,
    TrainSample,
    TrainState,
    op_for_task,
    synthesize_burst,
    tbptt_train,
)
from .warps import AffineTransform, build_warp, invert_transform

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_ALIGNMENT_DEGRADED = 3


class CliError(Exception):
    """Input problems that should exit with code 2 and a clean message."""


# -- plumbing -------------------------------------------------------------------

def _thread_count(n_items: int) -> int:
    raw = os.environ.get("BRT_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, min(n, n_items)) if n_items else 1


def _load_config_file(path: Path) -> dict:
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as f:
            return tomllib.load(f)
    if path.suffix == ".json":
        with open(path) as f:
            return json.load(f)
    raise CliError(f"config must be .toml or .json, got {path.suffix!r}")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge precedence: explicit flag > config file > defaults.

    Parsers set every optional default to None so an untouched flag is
    distinguishable from an explicit one.
    """
    cfg_file = {}
    if getattr(args, "config", None):
        cfg_file = _load_config_file(Path(args.config))
        unknown = set(cfg_file) - set(defaults)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg_file:
            out[key] = cfg_file[key]
        else:
            out[key] = default
    return out


def _write_manifest(path: Path, command: str, config: dict, seed, inputs, outputs, t0: float) -> None:
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_clock_sec": round(time.time() - t0, 3),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_transforms(path: Path, reference_index: int, convention: str, entries: list,
                      task: "str | None" = None, sigma: "float | None" = None) -> None:
    doc = {"reference_index": reference_index, "convention": convention, "frames": entries}
    if task is not None:
        doc["task"] = task
    if sigma is not None:
        doc["sigma"] = sigma
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def _read_transforms(path: Path) -> dict:
    with open(path) as f:
        doc = json.load(f)
    if "frames" not in doc or "reference_index" not in doc:
        raise CliError(f"{path}: not a transforms file")
    return doc


def _transform_entry(name: str, t: AffineTransform, ecc=None, converged=None) -> dict:
    return {
        "file": name,
        "rotation_deg": float(t.degrees),
        "dx": float(t.dx),
        "dy": float(t.dy),
        "ecc": None if ecc is None else float(ecc),
        "converged": None if converged is None else bool(converged),
    }


def _entry_transform(e: dict) -> AffineTransform:
    return AffineTransform(math.radians(e["rotation_deg"]), e["dx"], e["dy"])


def _load_burst_dir(path: Path):
    """Read frame_*.brt from a sample directory; the last frame (sorted) is
    the reference, matching the synthesis convention."""
    files = sorted(path.glob("frame_*.brt"))
    if not files:
        raise CliError(f"no frame_*.brt files in {path}")
    frames = tuple(load_image(f) for f in files)
    return Burst(frames, len(frames) - 1), [f.name for f in files]


def _load_gt_image(path: Path, declared_space: str) -> Image:
    if path.suffix == ".brt":
        img = load_image(path)
    else:
        img = load_image(path, PixelSpace.SRGB if declared_space == "srgb" else PixelSpace.LINEAR_RGB)
    if img.space is PixelSpace.SRGB:
        img = srgb_to_linrgb(img)
    if img.space is not PixelSpace.LINEAR_RGB:
        raise CliError(f"{path}: expected an RGB image, got {img.space.name}")
    if img.channels != 3:
        raise CliError(f"{path}: need 3 channels for synthesis")
    return img


def _make_noise(cfg: dict):
    kind = cfg["noise"]
    if kind == "gaussian":
        return GaussianNoise(cfg["sigma"])
    if kind == "heteroskedastic":
        return HeteroskedasticNoise(cfg["alpha"], cfg["beta"])
    raise CliError(f"unknown noise model {kind!r}")


# -- synthesize -----------------------------------------------------------------

_SYNTH_DEFAULTS = {
    "burst_size": 8,
    "crop": 128,
    "task": "demosaick",
    "noise": "gaussian",
    "sigma": 25.0 / 255.0,
    "alpha": 1e-3,
    "beta": 1e-2,
    "max_rotation_deg": 2.0,
    "max_translation": 10.0,
    "flips": True,
    "color_jitter": True,
    "interp": "bilinear",
    "per_gt": 1,
    "gt_space": "srgb",
    "seed": 0,
}


def cmd_synthesize(gt_dir, out_dir, cfg: dict) -> int:
    t0 = time.time()
    gt_dir, out_dir = Path(gt_dir), Path(out_dir)
    gt_files = sorted(list(gt_dir.glob("*.png")) + list(gt_dir.glob("*.brt")))
    if not gt_files:
        raise CliError(f"no .png or .brt images in {gt_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = SyntheticBurstSpec(
        burst_size=cfg["burst_size"], crop=cfg["crop"], task=cfg["task"],
        max_rotation_deg=cfg["max_rotation_deg"], max_translation=cfg["max_translation"],
        flips=cfg["flips"], color_jitter=cfg["color_jitter"], interp=cfg["interp"],
    )
    noise = _make_noise(cfg)
    jobs = [(g, r) for g in range(len(gt_files)) for r in range(cfg["per_gt"])]

    def make_sample(job_index: int):
        g, _ = jobs[job_index]
        rng = np.random.default_rng([cfg["seed"], job_index])
        gt = _load_gt_image(gt_files[g], cfg["gt_space"])
        burst, transforms, gt_crop = synthesize_burst(gt, spec, noise, rng)
        sdir = out_dir / f"sample_{job_index:04d}"
        sdir.mkdir(exist_ok=True)
        entries = []
        for i, frame in enumerate(burst.frames):
            name = f"frame_{i:02d}.brt"
            save_image(frame, sdir / name)
            entries.append(_transform_entry(name, transforms[i], ecc=None, converged=True))
        save_image(gt_crop, sdir / "gt.brt")
        _write_transforms(sdir / "transforms.json", burst.reference_index, "observation",
                          entries, task=spec.task, sigma=noise.prox_sigma)
        return sdir.name

    with ThreadPoolExecutor(max_workers=_thread_count(len(jobs))) as pool:
        names = list(pool.map(make_sample, range(len(jobs))))

    dataset = {
        "task": spec.task,
        "burst_size": spec.burst_size,
        "crop": spec.crop,
        "sigma": noise.prox_sigma,
        "noise": {"kind": cfg["noise"], "sigma": cfg["sigma"], "alpha": cfg["alpha"], "beta": cfg["beta"]},
        "samples": names,
    }
    with open(out_dir / "dataset.json", "w") as f:
        json.dump(dataset, f, indent=2)
        f.write("\n")
    _write_manifest(out_dir / "manifest.json", "synthesize", cfg, cfg["seed"],
                    [gt_dir], [out_dir], t0)
    print(f"synthesized {len(names)} bursts into {out_dir}")
    return EXIT_OK


# -- align ----------------------------------------------------------------------

_ALIGN_DEFAULTS = {
    "levels": 3,
    "blur_std": 1.0,
    "max_iterations": 50,
    "epsilon": 1e-6,
    "seed": 0,
}


def cmd_align(burst_dir, out_path, cfg: dict) -> int:
    t0 = time.time()
    burst_dir, out_path = Path(burst_dir), Path(out_path)
    burst, names = _load_burst_dir(burst_dir)
    pcfg = PyramidConfig(cfg["levels"], cfg["blur_std"], cfg["max_iterations"], cfg["epsilon"])
    results = align_burst(burst, pcfg)
    entries = [
        _transform_entry(name, res.transform, ecc=res.final_ecc, converged=res.converged)
        for name, res in zip(names, results)
    ]
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_transforms(out_path, burst.reference_index, "registration", entries)
    _write_manifest(out_path.with_suffix(out_path.suffix + ".manifest.json"),
                    "align", cfg, cfg["seed"], [burst_dir], [out_path], t0)
    failed = sum(1 for i, r in enumerate(results) if i != burst.reference_index and not r.converged)
    if failed:
        print(f"warning: {failed} frame(s) did not converge", file=sys.stderr)
        return EXIT_ALIGNMENT_DEGRADED
    print(f"aligned {len(results)} frames -> {out_path}")
    return EXIT_OK


# -- restore --------------------------------------------------------------------

_RESTORE_DEFAULTS = {
    "task": None,  # falls back to transforms.json, then demosaick
    "prox": "network",
    "checkpoint": None,
    "transforms": None,
    "sigma": None,
    "iterations": 10,
    "threshold": 0.05,
    "lipschitz_safety": False,
    "frames": None,  # comma list for the burst-size sweep
    "gt": None,
    "interp": "bilinear",
    "levels": 3,
    "blur_std": 1.0,
    "max_iterations": 50,
    "epsilon": 1e-6,
    "seed": 0,
}


def _sub_burst(burst: Burst, warps, size: int):
    """Keep the reference plus the last size-1 other frames (index order)."""
    if size < 1 or size > len(burst):
        raise CliError(f"cannot take {size} frames from a burst of {len(burst)}")
    others = [i for i in range(len(burst)) if i != burst.reference_index]
    keep = others[-(size - 1):] if size > 1 else []
    keep.append(burst.reference_index)
    frames = tuple(burst.frames[i] for i in keep)
    sub_warps = [warps[i] for i in keep] if warps is not None else None
    return Burst(frames, len(frames) - 1), sub_warps


def cmd_restore(burst_dir, out_prefix, cfg: dict) -> int:
    t0 = time.time()
    burst_dir = Path(burst_dir)
    out_prefix = Path(out_prefix)
    if out_prefix.suffix in (".png", ".brt"):
        out_prefix = out_prefix.with_suffix("")
    burst, names = _load_burst_dir(burst_dir)
    dims = (burst.reference.height, burst.reference.width)

    meta = {}
    tpath = cfg["transforms"]
    if tpath is None and (burst_dir / "transforms.json").exists():
        # synthesised samples carry their oracle transforms; only use the
        # sidecar's metadata unless oracle warps were explicitly requested
        meta = _read_transforms(burst_dir / "transforms.json")
    elif tpath is not None:
        meta = _read_transforms(Path(tpath))

    sigma = cfg["sigma"] if cfg["sigma"] is not None else meta.get("sigma")
    task = cfg["task"] or meta.get("task")

    prox_kind = cfg["prox"]
    if prox_kind == "network":
        if not cfg["checkpoint"]:
            raise CliError("--checkpoint is required for the network prox")
        params, s, w, manifest, _ = proxnet.load_checkpoint(cfg["checkpoint"])
        prox = NetworkProx(params)
        iterations = len(s)  # the checkpoint fixes the unroll length
        extra = manifest.get("extra", {})
        if sigma is None:
            sigma = extra.get("sigma")
        if task is None:
            task = extra.get("task")
        if sigma is None:
            raise CliError("--sigma is required (neither transforms nor checkpoint record it)")
    else:
        iterations = cfg["iterations"]
        s, w = init_continuation(iterations)
        if prox_kind == "identity":
            prox = IdentityProx()
        elif prox_kind == "soft-threshold":
            prox = SoftThresholdProx(cfg["threshold"])
        else:
            raise CliError(f"unknown prox {prox_kind!r}")
        if sigma is None:
            sigma = 1.0  # only scales the trace for the analytic proxes
    task = task or "demosaick"
    op = op_for_task(task)
    solver_cfg = SolverConfig(iterations, sigma, s, w, prox, lipschitz_safety=cfg["lipschitz_safety"])

    warps = None
    degraded = False
    if tpath is not None:
        if len(meta["frames"]) != len(burst):
            raise CliError("transforms file does not match the burst frame count")
        convention = meta.get("convention", "observation")
        warps = []
        for e in meta["frames"]:
            t = _entry_transform(e)
            if convention == "registration":
                t = invert_transform(t)
            warps.append(build_warp(t, dims, cfg["interp"]))

    gt = load_image(Path(cfg["gt"])) if cfg["gt"] else None

    def restore_one(b: Burst, bw):
        nonlocal degraded
        if bw is not None:
            return run(b, bw, op, solver_cfg)
        pcfg = PyramidConfig(cfg["levels"], cfg["blur_std"], cfg["max_iterations"], cfg["epsilon"])
        img, _, trace = run_with_alignment(b, op, solver_cfg, pcfg, interp=cfg["interp"])
        if trace.warnings:
            degraded = True
        return img, trace

    out, trace = restore_one(burst, warps)
    outputs = []
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, out_prefix.with_suffix(".brt"))
    save_image(out, Path(str(out_prefix) + "_linrgb.png"))
    save_image(linrgb_to_srgb(out), Path(str(out_prefix) + "_srgb.png"))
    trace.to_csv(Path(str(out_prefix) + "_trace.csv"))
    outputs += [out_prefix.with_suffix(".brt"), Path(str(out_prefix) + "_linrgb.png"),
                Path(str(out_prefix) + "_srgb.png"), Path(str(out_prefix) + "_trace.csv")]

    if gt is not None:
        print(f"psnr_linrgb {psnr(out, gt):.4f}")

    if cfg["frames"]:
        if gt is None:
            raise CliError("--frames sweep needs --gt to report PSNR")
        sizes = [int(x) for x in str(cfg["frames"]).split(",")]
        sweep_path = Path(str(out_prefix) + "_sweep.csv")
        with open(sweep_path, "w") as f:
            f.write("burst_size,psnr_linrgb\n")
            for size in sizes:
                sb, sw = _sub_burst(burst, warps, size)
                s_out, _ = restore_one(sb, sw)
                val = psnr(s_out, gt)
                f.write(f"{size},{val:.6f}\n")
                print(f"B={size}: psnr {val:.4f}")
        outputs.append(sweep_path)

    _write_manifest(Path(str(out_prefix) + "_manifest.json"), "restore",
                    {**cfg, "task": task, "sigma": sigma}, cfg["seed"],
                    [burst_dir], outputs, t0)
    for wmsg in trace.warnings:
        print(f"warning: {wmsg}", file=sys.stderr)
    return EXIT_ALIGNMENT_DEGRADED if degraded else EXIT_OK


# -- train ----------------------------------------------------------------------

_TRAIN_DEFAULTS = {
    "task": None,
    "depth": 5,
    "filters": 64,
    "iterations": 10,
    "chunk": 5,
    "epochs": 100,
    "batch_size": 4,
    "lr": 1e-3,
    "lr_decay_epochs": 100,
    "s_max": 0.7,
    "s_min": 0.05,
    "val_count": 8,
    "resume": None,
    "seed": 0,
    "interp": "bilinear",
}


def _load_dataset(dataset_dir: Path):
    dpath = dataset_dir / "dataset.json"
    if not dpath.exists():
        raise CliError(f"{dataset_dir} has no dataset.json (not a synthesized dataset?)")
    with open(dpath) as f:
        ds = json.load(f)
    samples = []
    for name in ds["samples"]:
        sdir = dataset_dir / name
        burst, _ = _load_burst_dir(sdir)
        meta = _read_transforms(sdir / "transforms.json")
        transforms = [_entry_transform(e) for e in meta["frames"]]
        gt = load_image(sdir / "gt.brt")
        samples.append(TrainSample(burst, transforms, gt, float(meta["sigma"])))
    return ds, samples


def cmd_train(dataset_dir, out_checkpoint, cfg: dict) -> int:
    t0 = time.time()
    dataset_dir, out_checkpoint = Path(dataset_dir), Path(out_checkpoint)
    ds, samples = _load_dataset(dataset_dir)
    if cfg["task"] is not None and cfg["task"] != ds["task"]:
        raise CliError(f"config says task {cfg['task']!r} but dataset is {ds['task']!r}")
    op = op_for_task(ds["task"])

    val_count = min(cfg["val_count"], max(0, len(samples) - 1))
    train_samples = samples[: len(samples) - val_count]
    val_samples = samples[len(samples) - val_count :]

    net_cfg = proxnet.NetConfig(depth=cfg["depth"], filters=cfg["filters"])
    tcfg = TrainConfig(
        iterations=cfg["iterations"], chunk=cfg["chunk"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], lr=cfg["lr"], lr_decay_epochs=cfg["lr_decay_epochs"],
        s_max=cfg["s_max"], s_min=cfg["s_min"], seed=cfg["seed"], interp=cfg["interp"],
    )

    state = None
    if cfg["resume"]:
        params, s, w, manifest, opt_state = proxnet.load_checkpoint(cfg["resume"])
        if params.cfg != net_cfg:
            raise CliError("resume checkpoint architecture does not match the config")
        opt = training.AmsGrad(tcfg.lr, tcfg.beta1, tcfg.beta2)
        if opt_state:
            opt.load_state(opt_state)
        state = TrainState(params, s, w, opt, epoch=manifest.get("extra", {}).get("epoch", 0))

    out_checkpoint.parent.mkdir(parents=True, exist_ok=True)
    metrics_path = out_checkpoint.with_suffix(".metrics.csv")
    mode = "a" if (cfg["resume"] and metrics_path.exists()) else "w"
    metrics = open(metrics_path, mode)
    if mode == "w":
        metrics.write("epoch,loss,lr,val_psnr\n")

    def on_epoch(st: TrainState, record: dict):
        metrics.write(f"{record['epoch']},{record['loss']:.8f},{record['lr']:.3e},{record['val_psnr']:.4f}\n")
        metrics.flush()
        proxnet.save_checkpoint(out_checkpoint, st.net, st.s, st.w,
                                extra={"epoch": st.epoch, "task": ds["task"], "sigma": ds["sigma"]},
                                state_tensors=st.optimizer.state_tensors())
        print(f"epoch {record['epoch']}: loss {record['loss']:.5f} val_psnr {record['val_psnr']:.3f}")

    try:
        tbptt_train(train_samples, net_cfg, tcfg, val_samples=val_samples, op=op,
                    state=state, on_epoch=on_epoch)
    finally:
        metrics.close()

    _write_manifest(out_checkpoint.with_suffix(".manifest.json"), "train", cfg, cfg["seed"],
                    [dataset_dir], [out_checkpoint, metrics_path], t0)
    print(f"checkpoint -> {out_checkpoint}")
    return EXIT_OK


# -- evaluate -------------------------------------------------------------------

_EVAL_DEFAULTS = {
    "space": "linear",
    "out": None,
    "seed": 0,
}


def cmd_evaluate(pred_dir, gt_dir, cfg: dict) -> int:
    t0 = time.time()
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    out_path = Path(cfg["out"]) if cfg["out"] else pred_dir / "metrics.csv"

    def images_in(d: Path) -> dict:
        out = {}
        for p in sorted(list(d.glob("*.brt")) + list(d.glob("*.png"))):
            out.setdefault(p.stem, p)
        return out

    preds = images_in(pred_dir)
    gts = images_in(gt_dir)
    if not preds:
        raise CliError(f"no images in {pred_dir}")
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise CliError(f"unmatched files between pred and gt: {missing}")

    declared = PixelSpace.LINEAR_RGB if cfg["space"] == "linear" else PixelSpace.SRGB

    def load_any(p: Path) -> Image:
        img = load_image(p) if p.suffix == ".brt" else load_image(p, declared)
        if img.space is PixelSpace.SRGB:
            img = srgb_to_linrgb(img)
        return img

    rows = []
    for stem in sorted(preds):
        a = load_any(preds[stem])
        b = load_any(gts[stem])
        lin = psnr(a, b)
        srgb = psnr(linrgb_to_srgb(a), linrgb_to_srgb(b))
        rows.append((stem, lin, srgb))

    def fmt(v: float) -> str:
        return "inf" if math.isinf(v) else f"{v:.6f}"

    with open(out_path, "w") as f:
        f.write("name,psnr_linrgb,psnr_srgb\n")
        for stem, lin, srgb in rows:
            f.write(f"{stem},{fmt(lin)},{fmt(srgb)}\n")
        mean_lin = sum(r[1] for r in rows) / len(rows)
        mean_srgb = sum(r[2] for r in rows) / len(rows)
        f.write(f"mean,{fmt(mean_lin)},{fmt(mean_srgb)}\n")
    _write_manifest(out_path.with_suffix(".manifest.json"), "evaluate", cfg, cfg["seed"],
                    [pred_dir, gt_dir], [out_path], t0)
    print(f"metrics -> {out_path} (mean linrgb {fmt(mean_lin)} dB)")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def _add_config_flag(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML or JSON file with keys mirroring the flags")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brt", description="burst restoration toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="generate degraded bursts from clean images")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_flag(p)
    p.add_argument("--burst-size", type=int, dest="burst_size")
    p.add_argument("--crop", type=int)
    p.add_argument("--task", choices=["demosaick", "denoise"])
    p.add_argument("--noise", choices=["gaussian", "heteroskedastic"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--max-rotation-deg", type=float, dest="max_rotation_deg")
    p.add_argument("--max-translation", type=float, dest="max_translation")
    p.add_argument("--flips", action=argparse.BooleanOptionalAction)
    p.add_argument("--color-jitter", action=argparse.BooleanOptionalAction, dest="color_jitter")
    p.add_argument("--interp", choices=["bilinear", "nearest"])
    p.add_argument("--per-gt", type=int, dest="per_gt")
    p.add_argument("--gt-space", choices=["srgb", "linear"], dest="gt_space")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("align", help="estimate rigid alignment for a burst")
    p.add_argument("--burst-dir", required=True)
    p.add_argument("--out", required=True)
    _add_config_flag(p)
    p.add_argument("--levels", type=int)
    p.add_argument("--blur-std", type=float, dest="blur_std")
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("restore", help="restore one burst")
    p.add_argument("--burst-dir", required=True)
    p.add_argument("--out", required=True)
    _add_config_flag(p)
    p.add_argument("--task", choices=["demosaick", "denoise"])
    p.add_argument("--prox", choices=["network", "identity", "soft-threshold"])
    p.add_argument("--checkpoint")
    p.add_argument("--transforms", help="transforms JSON; skips alignment")
    p.add_argument("--sigma", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--lipschitz-safety", action=argparse.BooleanOptionalAction, dest="lipschitz_safety")
    p.add_argument("--frames", help="comma list of burst sizes to sweep, needs --gt")
    p.add_argument("--gt", help="clean reference for PSNR reporting")
    p.add_argument("--interp", choices=["bilinear", "nearest"])
    p.add_argument("--levels", type=int)
    p.add_argument("--blur-std", type=float, dest="blur_std")
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train the prox network on a synthesized dataset")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--out", required=True)
    _add_config_flag(p)
    p.add_argument("--task", choices=["demosaick", "denoise"])
    p.add_argument("--depth", type=int)
    p.add_argument("--filters", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--chunk", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay-epochs", type=int, dest="lr_decay_epochs")
    p.add_argument("--s-max", type=float, dest="s_max")
    p.add_argument("--s-min", type=float, dest="s_min")
    p.add_argument("--val-count", type=int, dest="val_count")
    p.add_argument("--resume")
    p.add_argument("--seed", type=int)
    p.add_argument("--interp", choices=["bilinear", "nearest"])

    p = sub.add_parser("evaluate", help="PSNR metrics for matched prediction/gt images")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    _add_config_flag(p)
    p.add_argument("--out")
    p.add_argument("--space", choices=["linear", "srgb"])
    p.add_argument("--seed", type=int)

    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "synthesize":
            return cmd_synthesize(args.gt_dir, args.out_dir, _resolve(args, _SYNTH_DEFAULTS))
        if args.command == "align":
            return cmd_align(args.burst_dir, args.out, _resolve(args, _ALIGN_DEFAULTS))
        if args.command == "restore":
            return cmd_restore(args.burst_dir, args.out, _resolve(args, _RESTORE_DEFAULTS))
        if args.command == "train":
            return cmd_train(args.dataset_dir, args.out, _resolve(args, _TRAIN_DEFAULTS))
        if args.command == "evaluate":
            return cmd_evaluate(args.pred_dir, args.gt_dir, _resolve(args, _EVAL_DEFAULTS))
        raise CliError(f"unknown command {args.command!r}")
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (FileNotFoundError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
