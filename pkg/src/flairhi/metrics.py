"""Lesion-contrast and mask-agreement metrics, and the report that carries them."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .volume import DomainError, _as_array, as_mask, rescale_unit


def ipd(image, lesion, tissue) -> float:
    """Percent by which the mean lesion intensity exceeds the mean tissue intensity."""
    a = _as_array(image)
    les = as_mask(lesion, a.shape)
    tis = as_mask(tissue, a.shape)
    if not les.any() or not tis.any():
        raise DomainError("IPD needs nonempty lesion and tissue masks")
    tissue_mean = float(a[tis].mean())
    if tissue_mean == 0:
        raise DomainError("tissue mean is zero; IPD is undefined")
    return (float(a[les].mean()) / tissue_mean - 1.0) * 100.0


def confusion_counts(reference, estimate) -> tuple[int, int, int]:
    a = as_mask(reference)
    b = as_mask(estimate, a.shape)
    tp = int(np.count_nonzero(a & b))
    fp = int(np.count_nonzero(b & ~a))
    fn = int(np.count_nonzero(a & ~b))
    return tp, fp, fn


def dsc(a, b) -> float:
    """Dice overlap 2TP / (FP + FN + 2TP); two empty masks agree perfectly."""
    tp, fp, fn = confusion_counts(a, b)
    denom = fp + fn + 2 * tp
    return 1.0 if denom == 0 else 2.0 * tp / denom


def lesion_intersection(lesion_gt, estimated) -> float:
    """Percent of ground-truth lesion voxels that fall inside ``estimated``."""
    gt = as_mask(lesion_gt)
    est = as_mask(estimated, gt.shape)
    n = int(np.count_nonzero(gt))
    if n == 0:
        raise DomainError("lesion ground truth is empty")
    return 100.0 * np.count_nonzero(gt & est) / n


@dataclass
class BrightnessEntry:
    image: str
    tissue: str
    tissue_mean: float
    tissue_std: float
    lesion_mean: float
    ipd_percent: float
    reference: str = "gt"
    ipd_std: float | None = None  # set when entries are aggregated


@dataclass
class MaskEntry:
    mask: str
    reference: str
    dsc: float
    li_percent: float | None = None
    dsc_std: float | None = None
    li_std: float | None = None


@dataclass
class MetricsReport:
    images: dict[str, str] = field(default_factory=dict)
    brightness: list[BrightnessEntry] = field(default_factory=list)
    masks: list[MaskEntry] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "images": dict(self.images),
            "metrics": {
                "brightness": [_round_dict(asdict(e)) for e in self.brightness],
                "masks": [_round_dict(asdict(e)) for e in self.masks],
            },
            "config_hash": self.config_hash,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        m = d.get("metrics", {})
        return cls(
            images=dict(d.get("images", {})),
            brightness=[BrightnessEntry(**e) for e in m.get("brightness", [])],
            masks=[MaskEntry(**e) for e in m.get("masks", [])],
            config=d.get("config", {}),
            config_hash=d.get("config_hash", ""),
        )

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n")

    @classmethod
    def read_json(cls, path) -> MetricsReport:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path) -> None:
        """One row per brightness or mask entry; unused columns stay empty."""
        cols = ["kind", "image", "tissue", "reference", "tissue_mean", "tissue_std",
                "lesion_mean", "ipd_percent", "ipd_std", "mask", "dsc", "dsc_std",
                "li_percent", "li_std"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for e in self.brightness:
                w.writerow({"kind": "brightness", **_round_dict(asdict(e))})
            for e in self.masks:
                w.writerow({"kind": "mask", **_round_dict(asdict(e))})


def sig6(x):
    """Round a float to 6 significant digits for serialisation."""
    if x is None or isinstance(x, (bool, int, str)):
        return x
    return float(f"{float(x):.6g}")


def _round_dict(d: dict) -> dict:
    return {k: sig6(v) if isinstance(v, float) else v for k, v in d.items()}


def brightness_report(images, lesion, wm_pure, gm_pure, brain_mask=None,
                      reference: str = "gt") -> list[BrightnessEntry]:
    """Mean/std of WM and GM, mean lesion intensity and IPD for every image.

    ``images`` maps a name to an array. When ``brain_mask`` is given each
    image is first rescaled to [0, 1] inside it; otherwise images are taken
    as already rescaled.
    """
    entries = []
    for name, img in images.items():
        a = _as_array(img)
        if brain_mask is not None:
            a = rescale_unit(a, brain_mask)
        les = as_mask(lesion, a.shape)
        for tissue, tmask in (("wm", wm_pure), ("gm", gm_pure)):
            if tmask is None:
                continue
            t = as_mask(tmask, a.shape)
            value = ipd(a, les, t)
            entries.append(BrightnessEntry(
                image=name,
                tissue=tissue,
                tissue_mean=float(a[t].mean()),
                tissue_std=float(a[t].std()),
                lesion_mean=float(a[les].mean()),
                ipd_percent=value,
                reference=reference,
            ))
    return entries


def aggregate_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Mean (and population std) of each metric across time-point reports."""
    bright = defaultdict(list)
    for r in reports:
        for e in r.brightness:
            bright[(e.image, e.tissue, e.reference)].append(e)
    masks = defaultdict(list)
    for r in reports:
        for e in r.masks:
            masks[(e.mask, e.reference)].append(e)

    out = MetricsReport(config=reports[0].config if reports else {},
                        config_hash=reports[0].config_hash if reports else "")
    for r in reports:
        out.images.update(r.images)
    for (image, tissue, ref), es in bright.items():
        ipds = np.array([e.ipd_percent for e in es])
        out.brightness.append(BrightnessEntry(
            image=image, tissue=tissue, reference=ref,
            tissue_mean=float(np.mean([e.tissue_mean for e in es])),
            tissue_std=float(np.mean([e.tissue_std for e in es])),
            lesion_mean=float(np.mean([e.lesion_mean for e in es])),
            ipd_percent=float(ipds.mean()),
            ipd_std=float(ipds.std()),
        ))
    for (name, ref), es in masks.items():
        d = np.array([e.dsc for e in es])
        lis = [e.li_percent for e in es if e.li_percent is not None]
        out.masks.append(MaskEntry(
            mask=name, reference=ref,
            dsc=float(d.mean()), dsc_std=float(d.std()),
            li_percent=float(np.mean(lis)) if lis else None,
            li_std=float(np.std(lis)) if lis else None,
        ))
    return out
