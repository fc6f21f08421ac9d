"""Command-line entry point: one subcommand per stage plus the full pipeline.

Exit status is 0 on success, 1 when a stage fails and 2 when an input or
the configuration is missing or invalid.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _kernels
from .config import ConfigError, PipelineConfig
from .himap import score_map
from .metrics import MaskEntry, MetricsReport, brightness_report, dsc, lesion_intersection
from .nifti import read_atlas, read_mask, read_volume, write_mask, write_volume
from .phantom import PhantomSpec, generate_phantom, save_phantom
from .pipeline import InputError, StageError, run_pipeline
from .plotting import brightness_figure, wm_comparison_figure
from .preprocess import build_intermediate, nlm_denoise, normalize_intensity, sobel_magnitude
from .wmmask import (estimate_wm, initial_segmentation, merge_wm_ground_truth, pure_cluster,
                     select_cluster_by_atlas)

log = logging.getLogger("flairhi")


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON pipeline configuration; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (default: all available cores)")
    p.add_argument("--brain-mask", help="brain mask NIfTI (default: input > 0)")
    p.add_argument("-q", "--quiet", action="store_true", help="log warnings only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flairhi",
        description="FLAIR lesion enhancement, hyperintensity maps and WM mask estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="run every stage, resuming finished ones")
    _add_common(p)
    p.add_argument("--flair")
    p.add_argument("--t1")
    p.add_argument("--wm-atlas")
    p.add_argument("--gm-atlas")
    p.add_argument("--lesion-gt", action="append", help="lesion ground truth; repeat per rater")
    p.add_argument("--labels", help="precomputed tissue labels; skips k-means")
    p.add_argument("--seed", type=int)
    p.add_argument("--k-sigma", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--net-radius", type=int)
    p.add_argument("--theta-step", type=int)
    p.add_argument("--no-overlays", action="store_true")
    p.add_argument("--overlay-slice", type=int)

    p = sub.add_parser("denoise", help="non-local means inside the brain mask")
    _add_common(p)
    p.add_argument("--input", "--flair", dest="input", help="image to denoise")
    p.add_argument("--sigma", type=float, help="noise level (default 15)")

    p = sub.add_parser("normalize", help="divide by masked mean + 3 std")
    _add_common(p)
    p.add_argument("--input", "--flair", dest="input")

    p = sub.add_parser("intermediate", help="Sobel edges and the gradient-weighted remapping")
    _add_common(p)
    p.add_argument("--input", "--flair", dest="input", help="normalised FLAIR")
    p.add_argument("--bins", type=int)

    p = sub.add_parser("himap", help="hyperintensity score map from an intermediate image")
    _add_common(p)
    p.add_argument("--input", dest="input", help="intermediate image")
    p.add_argument("--net-radius", type=int)
    p.add_argument("--theta-step", type=int)

    p = sub.add_parser("wm-estimate", help="initial WM cluster and its expansion")
    _add_common(p)
    p.add_argument("--hi-map")
    p.add_argument("--wm-atlas")
    p.add_argument("--gm-atlas")
    p.add_argument("--labels", help="precomputed tissue labels")
    p.add_argument("--flair", help="FLAIR to cluster when no labels are given")
    p.add_argument("--t1", help="optional second clustering channel")
    p.add_argument("--seed", type=int)
    p.add_argument("--k-sigma", type=float)

    p = sub.add_parser("metrics", help="brightness and mask-agreement report")
    _add_common(p)
    p.add_argument("--flair")
    p.add_argument("--hi-map")
    p.add_argument("--wm-initial")
    p.add_argument("--wm-estimated")
    p.add_argument("--gm-initial")
    p.add_argument("--lesion-gt", action="append")

    p = sub.add_parser("phantom", help="write a synthetic phantom and its truth masks")
    p.add_argument("--config", help="phantom spec JSON")
    p.add_argument("--preset", choices=["default", "paper"], default="default")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("-q", "--quiet", action="store_true")
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    threads = args.threads if args.threads is not None else cfg.threads
    return cfg.override(
        out=args.out,
        threads=threads if threads is not None else available_cores(),
        brain_mask=args.brain_mask,
        flair=getattr(args, "flair", None),
        t1=getattr(args, "t1", None),
        wm_atlas=getattr(args, "wm_atlas", None),
        gm_atlas=getattr(args, "gm_atlas", None),
        lesion_gt=tuple(args.lesion_gt) if getattr(args, "lesion_gt", None) else None,
        labels=getattr(args, "labels", None),
        seed=getattr(args, "seed", None),
        k_sigma=getattr(args, "k_sigma", None),
        bins=getattr(args, "bins", None),
        net_radius=getattr(args, "net_radius", None),
        theta_step=getattr(args, "theta_step", None),
        overlays=False if getattr(args, "no_overlays", False) else None,
        overlay_slice=getattr(args, "overlay_slice", None),
    ).validate()


def _need(what: str, path) -> Path:
    if not path:
        raise InputError(f"missing required input: {what}")
    if not Path(path).is_file():
        raise InputError(f"{what} input not found: {path}")
    return Path(path)


def _read_input(what: str, path, fn=read_volume, shape=None):
    _need(what, path)
    try:
        value = fn(path)
    except Exception as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc
    if shape is not None and np.shape(value) != tuple(shape):
        raise InputError(f"{what} {path} has shape {np.shape(value)}, expected {tuple(shape)}")
    return value


def _brain_mask(args, vol):
    if args.brain_mask:
        return _read_input("brain mask", args.brain_mask, read_mask, np.shape(vol))
    return np.asarray(vol) > 0


def _outdir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stage(name: str, fn):
    try:
        return fn()
    except (InputError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _write(vol_like, data, path: Path, datatype="float32") -> None:
    tmp = path.with_name(path.name + ".partial")
    write_volume(vol_like.with_data(data), tmp, datatype)
    os.replace(tmp, path)


def _write_mask(vol_like, m, path: Path) -> None:
    tmp = path.with_name(path.name + ".partial")
    write_mask(m, tmp, like=vol_like)
    os.replace(tmp, path)


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    result = run_pipeline(cfg)
    print(f"ran: {', '.join(result.ran) or '-'}")
    print(f"skipped: {', '.join(result.skipped) or '-'}")
    for name in sorted(result.outputs):
        print(f"  {result.outputs[name]}")
    return 0


def cmd_denoise(args) -> int:
    cfg = _load_config(args)
    if args.sigma is not None:
        cfg = replace(cfg, nlm=replace(cfg.nlm, sigma=args.sigma))
    _kernels.set_threads(cfg.threads)
    vol = _read_input("FLAIR", args.input)
    mask = _brain_mask(args, vol)
    out = _stage("denoise", lambda: nlm_denoise(vol, mask, cfg.nlm))
    _write(vol, out, _outdir(cfg) / "denoised.nii")
    return 0


def cmd_normalize(args) -> int:
    cfg = _load_config(args)
    vol = _read_input("FLAIR", args.input)
    mask = _brain_mask(args, vol)
    out = _stage("normalize", lambda: normalize_intensity(vol, mask))
    _write(vol, out, _outdir(cfg) / "normalized.nii")
    return 0


def cmd_intermediate(args) -> int:
    cfg = _load_config(args)
    vol = _read_input("normalised FLAIR", args.input)
    mask = _brain_mask(args, vol)
    sob = _stage("sobel", lambda: sobel_magnitude(vol))
    inter, _ = _stage("intermediate",
                      lambda: build_intermediate(vol, sob, mask, cfg.bins, cfg.gradient_bins))
    out = _outdir(cfg)
    _write(vol, sob, out / "sobel.nii")
    _write(vol, inter, out / "intermediate.nii")
    return 0


def cmd_himap(args) -> int:
    cfg = _load_config(args)
    vol = _read_input("intermediate image", args.input)
    mask = _brain_mask(args, vol)
    hi = _stage("himap", lambda: score_map(
        vol, mask, None, cfg.neighborhood_radius, net_radius=cfg.net_radius,
        theta_step=cfg.theta_step, threads=cfg.threads))
    _write(vol, hi, _outdir(cfg) / "hi_map.nii")
    return 0


def cmd_wm_estimate(args) -> int:
    cfg = _load_config(args)
    hi_vol = _read_input("HI map", args.hi_map)
    shape = np.shape(hi_vol)
    atlas = _read_input("WM atlas", args.wm_atlas, read_atlas, shape)
    gm_atlas = _read_input("GM atlas", args.gm_atlas, read_atlas, shape) if args.gm_atlas else None
    if args.labels:
        labels = np.rint(np.asarray(_read_input("labels", args.labels, shape=shape)))
        mask = _brain_mask(args, labels) if args.brain_mask else labels > 0
        labels = np.where(mask, labels, 0).astype(np.uint8)
    else:
        flair = _read_input("FLAIR (or --labels)", args.flair, shape=shape)
        mask = _brain_mask(args, flair)
        channels = [normalize_intensity(flair, mask)]
        if args.t1:
            channels.append(normalize_intensity(_read_input("T1", args.t1, shape=shape), mask))
        labels = _stage("segment", lambda: initial_segmentation(channels, mask, cfg.k, cfg.seed))
    wm0 = _stage("segment", lambda: select_cluster_by_atlas(labels, atlas))
    est = _stage("wm_estimate", lambda: estimate_wm(wm0, hi_vol, atlas, cfg.wm, mask))
    out = _outdir(cfg)
    _write(hi_vol, labels, out / "labels.nii", "uint8")
    _write_mask(hi_vol, wm0, out / "wm_initial.nii")
    if gm_atlas is not None:
        gm0 = _stage("segment", lambda: select_cluster_by_atlas(np.where(wm0, 0, labels), gm_atlas))
        _write_mask(hi_vol, gm0, out / "gm_initial.nii")
    _write_mask(hi_vol, est, out / "wm_estimated.nii")
    print(f"wm_initial: {int(wm0.sum())} voxels, wm_estimated: {int(est.sum())} voxels")
    return 0


def cmd_metrics(args) -> int:
    cfg = _load_config(args)
    flair = _read_input("FLAIR", args.flair)
    shape = np.shape(flair)
    hi = _read_input("HI map", args.hi_map, shape=shape)
    wm0 = _read_input("WM initial mask", args.wm_initial, read_mask, shape)
    gm0 = _read_input("GM initial mask", args.gm_initial, read_mask, shape) if args.gm_initial else None
    est = (_read_input("WM estimated mask", args.wm_estimated, read_mask, shape)
           if args.wm_estimated else None)
    if not args.lesion_gt:
        raise InputError("missing required input: lesion ground truth (--lesion-gt)")
    gts = [_read_input("lesion ground truth", p, read_mask, shape) for p in args.lesion_gt]
    mask = _brain_mask(args, flair)

    def build():
        report = MetricsReport(images={"flair": args.flair, "hi_map": args.hi_map},
                               config=cfg.provenance(), config_hash=cfg.config_hash)
        for i, gt in enumerate(gts):
            ref = "gt" if len(gts) == 1 else f"gt{i + 1}"
            gm_pure = pure_cluster(gm0, gt) if gm0 is not None else None
            report.brightness += brightness_report(
                {"flair": flair, "hi_map": hi}, gt, pure_cluster(wm0, gt), gm_pure,
                brain_mask=mask, reference=ref)
            whole = merge_wm_ground_truth(wm0, gt)
            for name, m in (("wm_initial", wm0), ("wm_estimated", est)):
                if m is not None:
                    report.masks.append(MaskEntry(name, ref, dsc(whole, m),
                                                  lesion_intersection(gt, m)))
        return report

    report = _stage("metrics", build)
    out = _outdir(cfg)
    report.write_json(out / "metrics.json")
    report.write_csv(out / "metrics.csv")
    brightness_figure(report, out / "brightness.png")
    wm_comparison_figure(report, out / "wm_comparison.png")
    for e in report.brightness:
        print(f"{e.image:8s} {e.tissue} [{e.reference}]  IPD {e.ipd_percent:9.2f}%")
    for e in report.masks:
        print(f"{e.mask:13s} [{e.reference}]  DSC {e.dsc:.4f}  LI {e.li_percent:6.2f}%")
    return 0


def cmd_phantom(args) -> int:
    if args.config:
        _need("phantom spec", args.config)
        try:
            spec = PhantomSpec.from_json(args.config)
        except (ValueError, TypeError, KeyError) as exc:
            raise InputError(f"invalid phantom spec {args.config}: {exc}") from exc
    elif args.preset == "paper":
        spec = PhantomSpec.paper_scale()
    else:
        spec = PhantomSpec.default()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    ph = _stage("phantom", lambda: generate_phantom(spec))
    paths = save_phantom(ph, args.out or "phantom")
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


COMMANDS = {
    "pipeline": cmd_pipeline,
    "denoise": cmd_denoise,
    "normalize": cmd_normalize,
    "intermediate": cmd_intermediate,
    "himap": cmd_himap,
    "wm-estimate": cmd_wm_estimate,
    "metrics": cmd_metrics,
    "phantom": cmd_phantom,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (InputError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
