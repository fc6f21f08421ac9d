"""Tissue clustering, atlas-guided cluster choice and white-matter mask expansion."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .volume import DomainError, ShapeError, _as_array, as_mask, box_mean, masked_stats

MAX_KMEANS_ITER = 100
N_INIT = 10


@dataclass(frozen=True)
class WmEstimationConfig:
    k_sigma: float = 3.0
    neighborhood_radius: int = 1
    iterate_to_fixpoint: bool = False

    def __post_init__(self):
        if not self.k_sigma >= 0:
            raise ValueError(f"k_sigma must be >= 0, got {self.k_sigma}")
        if self.neighborhood_radius < 0:
            raise ValueError("neighborhood_radius must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x - c) ** 2).sum(axis=1)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dist(x, centers[0])
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            i = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            i = min(i, n - 1)
        else:
            i = int(rng.integers(n))
        centers[j] = x[i]
        closest = np.minimum(closest, _sq_dist(x, centers[j]))
    return centers


def _assign(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    best = _sq_dist(x, centers[0])
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for j in range(1, len(centers)):
        dj = _sq_dist(x, centers[j])
        closer = dj < best
        best = np.where(closer, dj, best)
        labels[closer] = j
    return labels, best


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int):
    k = len(centers)
    assign = np.full(x.shape[0], -1, dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new, _ = _assign(x, centers)
        if np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=k)
        nonempty = counts > 0
        for c in range(x.shape[1]):
            sums = np.bincount(assign, weights=x[:, c], minlength=k)
            centers[nonempty, c] = sums[nonempty] / counts[nonempty]
    _, dist = _assign(x, centers)
    return assign, centers, iterations, float(dist.sum())


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = MAX_KMEANS_ITER,
           n_init: int = N_INIT):
    """Lloyd's k-means with k-means++ seeding, best of ``n_init`` starts.

    Returns ``(assignments, centers, iterations)``. All starts draw from one
    generator seeded with ``seed``; the lowest-inertia run wins, earliest
    first on ties. Assignment ties go to the lowest cluster index and an
    emptied cluster keeps its previous centre. A run stops when no
    assignment changes or after ``max_iter`` iterations.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if k < 2:
        raise ValueError("k must be >= 2")
    if x.shape[0] < k:
        raise DomainError(f"{x.shape[0]} samples cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        run = _lloyd(x, _kmeans_pp(x, k, rng), max_iter)
        if best is None or run[3] < best[3]:
            best = run
    return best[0], best[1], best[2]


def initial_segmentation(channels, mask, k: int = 3, seed: int = 0) -> np.ndarray:
    """Cluster masked voxels by their channel vectors into labels 1..k (0 outside).

    Labels are ordered by ascending centre of the first channel, so for a
    FLAIR-first channel list label 1 is the darkest cluster.
    """
    chans = [_as_array(c) for c in channels]
    if not chans:
        raise ValueError("at least one channel is required")
    shape = chans[0].shape
    for c in chans[1:]:
        if c.shape != shape:
            raise ShapeError(f"channel shapes differ: {c.shape} vs {shape}")
    m = as_mask(mask, shape)
    x = np.stack([c[m] for c in chans], axis=1)
    assign, centers, _ = kmeans(x, k, seed)
    order = np.argsort(centers[:, 0], kind="stable")
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(1, k + 1)
    labels = np.zeros(shape, dtype=np.uint8)
    labels[m] = relabel[assign]
    return labels


def select_cluster_by_atlas(labels, atlas, rel_tol: float = 1e-12) -> np.ndarray:
    """Mask of the label whose voxels have the highest mean atlas probability.

    Means within ``rel_tol`` of the best count as ties; the lowest label wins.
    """
    lab = np.asarray(labels)
    a = _as_array(atlas)
    if lab.shape != a.shape:
        raise ShapeError(f"labels shape {lab.shape} does not match atlas shape {a.shape}")
    lab = lab.astype(np.int64)
    if lab.min() < 0:
        raise ValueError("labels must be non-negative")
    counts = np.bincount(lab.ravel(), minlength=1)
    sums = np.bincount(lab.ravel(), weights=a.ravel(), minlength=1)
    present = [i for i in range(1, len(counts)) if counts[i] > 0]
    if not present:
        raise DomainError("label volume has no nonzero labels")
    means = {i: sums[i] / counts[i] for i in present}
    best = max(means.values())
    tol = rel_tol * max(1.0, abs(best))
    chosen = min(i for i in present if means[i] >= best - tol)
    return lab == chosen


def estimate_wm(wm_initial, hi_map, wm_atlas, cfg: WmEstimationConfig | None = None,
                mask=None) -> np.ndarray:
    """Grow the initial WM mask with voxels that look like hyperintense white matter.

    Thresholds are fixed from the initial mask: mean + k_sigma * std of the
    hyperintensity map, and the mean atlas probability. A candidate voxel
    (inside ``mask``, outside the initial WM) is accepted when both its
    neighbourhood means exceed those thresholds strictly.
    """
    cfg = cfg or WmEstimationConfig()
    hi = _as_array(hi_map)
    atlas = _as_array(wm_atlas)
    if atlas.shape != hi.shape:
        raise ShapeError(f"atlas shape {atlas.shape} does not match map shape {hi.shape}")
    wm0 = as_mask(wm_initial, hi.shape)
    brain = np.ones(hi.shape, bool) if mask is None else as_mask(mask, hi.shape)
    if not wm0.any():
        raise DomainError("initial WM mask is empty")

    hi_stats = masked_stats(hi, wm0)
    t_prob = masked_stats(atlas, wm0).mean
    if math.isinf(cfg.k_sigma):
        t_hi = math.inf
    else:
        t_hi = hi_stats.mean + cfg.k_sigma * hi_stats.std

    r = cfg.neighborhood_radius
    hi_nbr, _ = box_mean(hi, r, brain)
    atlas_nbr, _ = box_mean(atlas, r, brain)
    qualifies = brain & (hi_nbr > t_hi) & (atlas_nbr > t_prob)

    out = wm0.copy()
    while True:
        added = qualifies & ~out
        out |= added
        if not cfg.iterate_to_fixpoint or not added.any():
            break
    return out


def merge_wm_ground_truth(wm_initial, lesion_gt) -> np.ndarray:
    a = as_mask(wm_initial)
    return a | as_mask(lesion_gt, a.shape)


def pure_cluster(cluster, lesion_gt) -> np.ndarray:
    """Cluster voxels that are not lesion voxels."""
    a = as_mask(cluster)
    return a & ~as_mask(lesion_gt, a.shape)
