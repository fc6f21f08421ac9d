"""Denoising, intensity normalisation, Sobel edges and the gradient-weighted
intensity remapping that produces the intermediate image."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .volume import DomainError, ShapeError, _as_array, as_mask, masked_stats


@dataclass(frozen=True)
class NlmParams:
    sigma: float = 15.0
    patch_radius: int = 1
    search_radius: int = 5
    filter_h: float | None = None  # defaults to sigma

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.patch_radius < 1 or self.search_radius < 1:
            raise ValueError("patch_radius and search_radius must be >= 1")
        if self.filter_h is not None and not self.filter_h > 0:
            raise ValueError(f"filter_h must be > 0, got {self.filter_h}")

    @property
    def h(self) -> float:
        return self.sigma if self.filter_h is None else float(self.filter_h)

    def to_dict(self) -> dict:
        return asdict(self)


def _mask_bbox(m: np.ndarray, margin: int) -> tuple[slice, ...]:
    sl = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(m.any(axis=other))
        sl.append(slice(max(int(idx[0]) - margin, 0), int(idx[-1]) + margin + 1))
    return tuple(sl)


def nlm_denoise(vol, mask, params: NlmParams | None = None) -> np.ndarray:
    """Non-local means restricted to the mask.

    Each masked voxel becomes the weighted mean of the masked voxels in its
    search window, including itself with weight 1. Patch distances use
    edge-replicated support at the volume border. Voxels outside the mask
    are returned unchanged.
    """
    params = params or NlmParams()
    u = _as_array(vol)
    m = as_mask(mask, u.shape)
    out = u.copy()
    if not m.any():
        return out
    p = params.patch_radius
    # Search centres are masked, so patches never read beyond bbox +/- p.
    box = _mask_bbox(m, p)
    uc = np.ascontiguousarray(u[box])
    mc = np.ascontiguousarray(m[box])
    up = np.pad(uc, p, mode="edge")
    weights = np.where(mc, 1.0, 0.0)
    acc = np.zeros_like(uc)
    offsets = _kernels.half_window_offsets(params.search_radius)
    _kernels.nlm_accumulate(
        uc, up, mc, offsets, p,
        2.0 * params.sigma ** 2, 1.0 / params.h ** 2,
        weights, acc,
    )
    sub = out[box]
    vals = uc[mc]
    # the mean is convex; clip away last-bit rounding past the masked range
    sub[mc] = np.clip(vals + acc[mc] / weights[mc], vals.min(), vals.max())
    out[box] = sub
    return out


def normalize_intensity(vol, mask) -> np.ndarray:
    """Divide by the masked mean + 3 std, then zero everything outside the mask."""
    u = _as_array(vol)
    m = as_mask(mask, u.shape)
    st = masked_stats(u, m)
    divisor = st.mean + 3.0 * st.std
    if not divisor > 0:
        raise DomainError(f"masked mean + 3*std is {divisor}; cannot normalise")
    out = u / divisor
    out[~m] = 0.0
    return out


def sobel_magnitude(vol) -> np.ndarray:
    """Euclidean norm of the three 3x3x3 Sobel responses, edges replicated."""
    u = _as_array(vol)
    if min(u.shape) < 3:
        raise ShapeError(f"Sobel needs at least 3 voxels per axis, got {u.shape}")
    sq = np.zeros_like(u)
    for axis in range(3):
        g = ndimage.sobel(u, axis=axis, mode="nearest")
        sq += g * g
    return np.sqrt(sq)


@dataclass(frozen=True, eq=False)
class IntensityHistogram:
    """Per-bin gradient-weighted histogram ``h`` and its running sum ``q``."""

    bin_count: int
    bin_edges: np.ndarray
    h: np.ndarray
    q: np.ndarray
    q_rescaled: np.ndarray
    voxel_counts: np.ndarray


def quantize(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    """Equal-width bin index of each value over [lo, hi]; ``hi`` lands in the last bin."""
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def gradient_cdf(grad: np.ndarray, bins: int = 1024) -> np.ndarray:
    """Prob(g <= g_s) for each value, from a ``bins``-bin histogram of ``grad``.

    A voxel's probability is the fraction of values whose bin is at or
    below its own bin.
    """
    lo, hi = float(grad.min()), float(grad.max())
    if not hi > lo:
        return np.ones(grad.shape)
    idx = quantize(grad, lo, hi, bins)
    cdf = np.cumsum(np.bincount(idx, minlength=bins)) / grad.size
    return cdf[idx]


def build_intermediate(flair_norm, sobel, mask, bin_count: int = 1024,
                       gradient_bins: int = 1024) -> tuple[np.ndarray, IntensityHistogram]:
    """Remap normalised FLAIR intensities through the cumulative gradient-weighted histogram.

    For intensity bin i, h(i) is the mean over the bin's voxels of the
    gradient CDF evaluated at each voxel's Sobel value; empty bins get 0.
    q is the running sum of h, divided by its last entry so the output of
    masked voxels lies in (0, 1] with the brightest bin at exactly 1.
    """
    f = _as_array(flair_norm)
    g = _as_array(sobel)
    if g.shape != f.shape:
        raise ShapeError(f"Sobel shape {g.shape} does not match FLAIR shape {f.shape}")
    m = as_mask(mask, f.shape)
    if bin_count < 2:
        raise ValueError("bin_count must be >= 2")
    vals = f[m]
    if vals.size == 0:
        raise DomainError("intermediate image requested over an empty mask")
    lo, hi = float(vals.min()), float(vals.max())
    if not hi > lo:
        raise DomainError(f"masked intensities are constant ({lo}); cannot quantise")

    ibin = quantize(vals, lo, hi, bin_count)
    prob = gradient_cdf(g[m], gradient_bins)
    counts = np.bincount(ibin, minlength=bin_count)
    sums = np.bincount(ibin, weights=prob, minlength=bin_count)
    h = np.divide(sums, counts, out=np.zeros(bin_count), where=counts > 0)
    q = np.cumsum(h)
    q_rescaled = q / q[-1]

    out = np.zeros_like(f)
    out[m] = q_rescaled[ibin]
    edges = lo + (hi - lo) * np.arange(bin_count + 1) / bin_count
    return out, IntensityHistogram(bin_count, edges, h, q, q_rescaled, counts)
