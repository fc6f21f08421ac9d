"""Staged, resumable pipeline from a FLAIR volume to the WM mask and its metrics.

Each stage has a key built from its own parameters, the keys of the stages
it reads from and digests of the input files. ``stages.json`` in the output
directory records the key of every finished stage; on a rerun a stage whose
key and output files are unchanged is loaded from disk instead of being
recomputed. Outputs are written under a ``.partial`` name and renamed only
when the stage succeeds.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .config import PipelineConfig, digest, file_digest
from .himap import score_map
from .metrics import MaskEntry, MetricsReport, brightness_report, dsc, lesion_intersection
from .nifti import read_atlas, read_mask, read_volume, write_mask, write_volume
from .plotting import brightness_figure, render_overlay, wm_comparison_figure
from .preprocess import build_intermediate, nlm_denoise, normalize_intensity, sobel_magnitude
from .wmmask import (estimate_wm, initial_segmentation, merge_wm_ground_truth, pure_cluster,
                     select_cluster_by_atlas)

log = logging.getLogger(__name__)

MANIFEST = "stages.json"


class InputError(Exception):
    """A required input is missing or unusable."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    out: Path
    ran: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    outputs: dict[str, Path] = field(default_factory=dict)
    report: MetricsReport | None = None


def _f32(a: np.ndarray) -> np.ndarray:
    # what a float32 file round trip gives back
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _partial(p: Path) -> Path:
    return p.with_name(p.name + ".partial")


class _Stages:
    def __init__(self, out: Path, result: PipelineResult):
        self.out = out
        self.result = result
        self.manifest_path = out / MANIFEST
        self.manifest = {}
        if self.manifest_path.exists():
            try:
                self.manifest = json.loads(self.manifest_path.read_text())
            except json.JSONDecodeError:
                log.warning("ignoring unreadable %s", self.manifest_path)

    def run(self, name: str, key: dict, outputs: list[str], compute, load):
        """Return the stage value, recomputing only when its key or files changed.

        ``compute(paths)`` writes every output to the given paths and returns
        the value; ``load(paths)`` rebuilds the value from finished files.
        """
        key = dict(key, stage=name)
        h = digest(key)
        paths = [self.out / o for o in outputs]
        entry = self.manifest.get(name)
        if (entry and entry.get("hash") == h and entry.get("outputs") == outputs
                and all(p.exists() for p in paths)):
            log.info("stage %s: up to date, skipped", name)
            self.result.skipped.append(name)
            value = load(paths)
        else:
            t0 = time.perf_counter()
            try:
                value = compute([_partial(p) for p in paths])
            except Exception as exc:
                raise StageError(name, exc) from exc
            for p in paths:
                os.replace(_partial(p), p)
            self.manifest[name] = {"hash": h, "outputs": outputs}
            self._save_manifest()
            log.info("stage %s: done in %.2f s", name, time.perf_counter() - t0)
            self.result.ran.append(name)
        for o, p in zip(outputs, paths):
            self.result.outputs[o] = p
        return h, value

    def _save_manifest(self) -> None:
        tmp = _partial(self.manifest_path)
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.manifest_path)


def _check_inputs(cfg: PipelineConfig) -> None:
    if not cfg.flair:
        raise InputError("no FLAIR input given (--flair)")
    named = [("FLAIR", cfg.flair), ("T1", cfg.t1), ("brain mask", cfg.brain_mask),
             ("WM atlas", cfg.wm_atlas), ("GM atlas", cfg.gm_atlas), ("labels", cfg.labels)]
    named += [("lesion ground truth", p) for p in cfg.lesion_gt]
    for what, p in named:
        if p and not Path(p).is_file():
            raise InputError(f"{what} input not found: {p}")


def _read(what: str, fn, path, shape=None):
    try:
        value = fn(path)
    except Exception as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc
    if shape is not None and np.shape(value) != tuple(shape):
        raise InputError(f"{what} {path} has shape {np.shape(value)}, FLAIR has {tuple(shape)}")
    return value


def _lesion_slice(cfg: PipelineConfig, gts: list[np.ndarray], mask: np.ndarray) -> int:
    nz = mask.shape[2]
    if cfg.overlay_slice is not None:
        if cfg.overlay_slice >= nz:
            raise ValueError(f"overlay_slice {cfg.overlay_slice} outside 0..{nz - 1}")
        return cfg.overlay_slice
    if gts and gts[0].any():
        return int(np.argmax(gts[0].sum(axis=(0, 1))))
    return nz // 2


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Run every stage the inputs allow; see the module docstring for resumption.

    WM stages need a WM atlas, metrics need at least one lesion ground
    truth. Without a brain mask the mask is ``flair > 0``.
    """
    cfg.validate()
    _check_inputs(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = _kernels.set_threads(cfg.threads)
    result = PipelineResult(out)
    stages = _Stages(out, result)

    flair_vol = _read("FLAIR", read_volume, cfg.flair)
    flair = np.asarray(flair_vol)
    shape = flair.shape
    d_flair = file_digest(cfg.flair)
    if cfg.brain_mask:
        mask = _read("brain mask", read_mask, cfg.brain_mask, shape)
        d_mask = file_digest(cfg.brain_mask)
    else:
        mask = flair > 0
        d_mask = "flair>0"
    if not mask.any():
        raise InputError("brain mask is empty")
    gts = [_read("lesion ground truth", read_mask, p, shape) for p in cfg.lesion_gt]
    d_gts = [file_digest(p) for p in cfg.lesion_gt]

    (out / "config.json").write_text(json.dumps(
        {"config": cfg.to_dict(), "config_hash": cfg.config_hash}, indent=2) + "\n")

    def vol_stage(name, filename, key, fn):
        def compute(paths):
            v = _f32(fn())
            write_volume(flair_vol.with_data(v), paths[0], "float32")
            return v
        return stages.run(name, key, [filename], compute,
                          lambda paths: np.asarray(read_volume(paths[0])))

    h_den, den = vol_stage(
        "denoise", "denoised.nii",
        {"flair": d_flair, "mask": d_mask, "nlm": cfg.nlm.to_dict()},
        lambda: nlm_denoise(flair, mask, cfg.nlm))
    h_norm, norm = vol_stage(
        "normalize", "normalized.nii", {"prev": h_den, "mask": d_mask},
        lambda: normalize_intensity(den, mask))
    h_sob, sob = vol_stage(
        "sobel", "sobel.nii", {"prev": h_norm},
        lambda: sobel_magnitude(norm))
    h_int, inter = vol_stage(
        "intermediate", "intermediate.nii",
        {"norm": h_norm, "sobel": h_sob, "mask": d_mask, "bins": cfg.bins,
         "gradient_bins": cfg.gradient_bins},
        lambda: build_intermediate(norm, sob, mask, cfg.bins, cfg.gradient_bins)[0])
    h_hi, hi = vol_stage(
        "himap", "hi_map.nii",
        {"prev": h_int, "mask": d_mask, "net_radius": cfg.net_radius,
         "theta_step": cfg.theta_step, "neighborhood_radius": cfg.neighborhood_radius},
        lambda: score_map(inter, mask, None, cfg.neighborhood_radius,
                          net_radius=cfg.net_radius, theta_step=cfg.theta_step,
                          threads=threads))

    wm0 = gm0 = wm_est = None
    h_seg = h_est = None
    if cfg.wm_atlas:
        wm_atlas = _read("WM atlas", read_atlas, cfg.wm_atlas, shape)
        gm_atlas = _read("GM atlas", read_atlas, cfg.gm_atlas, shape) if cfg.gm_atlas else None
        t1 = np.asarray(_read("T1", read_volume, cfg.t1, shape)) if cfg.t1 else None
        labels_in = None
        if cfg.labels:
            labels_in = np.rint(np.asarray(_read("labels", read_volume, cfg.labels, shape)))
        seg_key = {
            "norm": h_norm, "mask": d_mask, "k": cfg.k, "seed": cfg.seed,
            "t1": file_digest(cfg.t1) if cfg.t1 else None,
            "labels": file_digest(cfg.labels) if cfg.labels else None,
            "wm_atlas": file_digest(cfg.wm_atlas),
            "gm_atlas": file_digest(cfg.gm_atlas) if cfg.gm_atlas else None,
        }
        seg_outputs = ["labels.nii", "wm_initial.nii"] + (["gm_initial.nii"] if cfg.gm_atlas else [])

        def segment(paths):
            if labels_in is not None:
                labels = np.where(mask, labels_in, 0).astype(np.uint8)
            else:
                channels = [norm]
                if t1 is not None:
                    channels.append(normalize_intensity(t1, mask))
                labels = initial_segmentation(channels, mask, cfg.k, cfg.seed)
            wm = select_cluster_by_atlas(labels, wm_atlas)
            write_volume(flair_vol.with_data(labels), paths[0], "uint8")
            write_mask(wm, paths[1], like=flair_vol)
            gm = None
            if gm_atlas is not None:
                gm = select_cluster_by_atlas(np.where(wm, 0, labels), gm_atlas)
                write_mask(gm, paths[2], like=flair_vol)
            return wm, gm

        def load_segment(paths):
            return read_mask(paths[1]), (read_mask(paths[2]) if len(paths) > 2 else None)

        h_seg, (wm0, gm0) = stages.run("segment", seg_key, seg_outputs, segment, load_segment)

        def estimate(paths):
            est = estimate_wm(wm0, hi, wm_atlas, cfg.wm, mask)
            write_mask(est, paths[0], like=flair_vol)
            return est

        h_est, wm_est = stages.run(
            "wm_estimate",
            {"seg": h_seg, "hi": h_hi, "mask": d_mask, "wm": cfg.to_dict()["wm"]},
            ["wm_estimated.nii"], estimate, lambda paths: read_mask(paths[0]),
        )
    else:
        log.info("no WM atlas given; skipping segmentation and WM estimation")

    if gts and wm0 is not None:
        def metrics(paths):
            report = _metrics_report(cfg, flair, hi, mask, wm0, gm0, wm_est, gts)
            report.write_json(paths[0])
            report.write_csv(paths[1])
            brightness_figure(report, paths[2])
            wm_comparison_figure(report, paths[3])
            return report

        _, result.report = stages.run(
            "metrics",
            {"flair": d_flair, "hi": h_hi, "seg": h_seg, "est": h_est, "gts": d_gts,
             "config_hash": cfg.config_hash},
            ["metrics.json", "metrics.csv", "brightness.png", "wm_comparison.png"],
            metrics, lambda paths: MetricsReport.read_json(paths[0]),
        )
    elif not gts:
        log.info("no lesion ground truth given; skipping metrics")

    if cfg.overlays:
        panels = [("flair", "brain_mask", flair, mask), ("hi_map", "brain_mask", hi, mask)]
        if wm0 is not None:
            panels += [("flair", "wm_initial", flair, wm0), ("flair", "wm_estimated", flair, wm_est),
                       ("hi_map", "wm_estimated", hi, wm_est)]
        if gts:
            panels.append(("flair", "lesion_gt", flair, gts[0]))
        names = [f"overlay_{img}_{m}.png" for img, m, _, _ in panels]

        def overlays(paths):
            z = _lesion_slice(cfg, gts, mask)
            for (_, _, img, m), p in zip(panels, paths):
                render_overlay(img, m, z, p)
            return None

        stages.run("overlays",
                   {"flair": d_flair, "hi": h_hi, "panels": names, "gts": d_gts,
                    "seg": h_seg, "est": h_est,
                    "slice": cfg.overlay_slice},
                   names, overlays, lambda paths: None)
    return result


def _metrics_report(cfg, flair, hi, mask, wm0, gm0, wm_est, gts) -> MetricsReport:
    report = MetricsReport(
        images={"flair": str(cfg.flair), "hi_map": "hi_map.nii"},
        config=cfg.provenance(),
        config_hash=cfg.config_hash,
    )
    for i, gt in enumerate(gts):
        ref = "gt" if len(gts) == 1 else f"gt{i + 1}"
        wm_pure = pure_cluster(wm0, gt)
        gm_pure = pure_cluster(gm0, gt) if gm0 is not None else None
        report.brightness += brightness_report({"flair": flair, "hi_map": hi}, gt, wm_pure,
                                               gm_pure, brain_mask=mask, reference=ref)
        whole = merge_wm_ground_truth(wm0, gt)
        for name, est in (("wm_initial", wm0), ("wm_estimated", wm_est)):
            report.masks.append(MaskEntry(mask=name, reference=ref, dsc=dsc(whole, est),
                                          li_percent=lesion_intersection(gt, est)))
    return report

