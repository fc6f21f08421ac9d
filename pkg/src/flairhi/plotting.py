"""Slice overlays and report figures."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .volume import DomainError, ShapeError, _as_array, as_mask

BOUNDARY_RGB = (255, 0, 0)


def _to_uint8(sl: np.ndarray) -> np.ndarray:
    lo, hi = float(sl.min()), float(sl.max())
    if hi <= lo:
        return np.zeros(sl.shape, np.uint8)
    return np.round((sl - lo) / (hi - lo) * 255.0).astype(np.uint8)


def mask_boundary(m2: np.ndarray) -> np.ndarray:
    """Set pixels with a 4-neighbour outside the set (the slice edge counts as outside)."""
    padded = np.pad(m2, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m2 & ~interior


def render_overlay(image, mask, slice_z: int, path) -> None:
    """Write axial slice ``slice_z`` as a PNG with the mask outline drawn in red.

    The slice is linearly stretched to 0..255 over its own range. Rows are
    y and columns are x. Identical inputs give identical bytes.
    """
    a = _as_array(image)
    m = as_mask(mask)
    if m.shape != a.shape:
        raise ShapeError(f"mask shape {m.shape} does not match image shape {a.shape}")
    if not 0 <= slice_z < a.shape[2]:
        raise DomainError(f"slice {slice_z} outside 0..{a.shape[2] - 1}")
    gray = _to_uint8(a[:, :, slice_z]).T
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    rgb[mask_boundary(m[:, :, slice_z]).T] = BOUNDARY_RGB
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG", optimize=False)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path) -> None:
    fig.savefig(path, format="png", dpi=100, metadata={"Software": None})
    _pyplot().close(fig)


def brightness_figure(report, path) -> None:
    """Grouped bars of IPD percent per image, one group per tissue and reference."""
    plt = _pyplot()
    groups = sorted({(e.tissue, e.reference) for e in report.brightness})
    images = list(dict.fromkeys(e.image for e in report.brightness))
    value = {(e.image, e.tissue, e.reference): e for e in report.brightness}
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    width = 0.8 / max(len(images), 1)
    x = np.arange(len(groups))
    for i, name in enumerate(images):
        es = [value.get((name, t, r)) for t, r in groups]
        ys = [e.ipd_percent if e else 0.0 for e in es]
        errs = [e.ipd_std or 0.0 if e else 0.0 for e in es]
        ax.bar(x + i * width, ys, width, yerr=errs, label=name)
    ax.set_xticks(x + width * (len(images) - 1) / 2)
    ax.set_xticklabels([f"{t.upper()} / {r}" for t, r in groups])
    ax.set_ylabel("lesion vs tissue brightness (%)")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def wm_comparison_figure(report, path) -> None:
    """Dice and lesion retention of each WM mask against each reference."""
    plt = _pyplot()
    entries = report.masks
    labels = [f"{e.mask}\n{e.reference}" for e in entries]
    x = np.arange(len(entries))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.6))
    ax1.bar(x, [e.dsc for e in entries], yerr=[e.dsc_std or 0.0 for e in entries], color="C0")
    ax1.set_ylim(0.0, 1.0)
    ax1.set_ylabel("Dice")
    ax2.bar(x, [e.li_percent or 0.0 for e in entries],
            yerr=[e.li_std or 0.0 for e in entries], color="C1")
    ax2.set_ylim(0.0, 100.0)
    ax2.set_ylabel("lesion voxels retained (%)")
    for ax in (ax1, ax2):
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=7)
    fig.tight_layout()
    _save(fig, path)
