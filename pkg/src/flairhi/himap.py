"""Hexagonal point nets and the hyperintensity probability map."""

from __future__ import annotations

import logging
import math
import time
import warnings
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .volume import ShapeError, _as_array, as_mask, box_mean, masked_stats

log = logging.getLogger(__name__)

SIGMA_TOLERANCE = 1e-9


class DegenerateContrastWarning(UserWarning):
    """The intermediate image has no contrast inside the mask."""


@dataclass(frozen=True, eq=False)
class PointNet:
    """Patch centres per axial slice: ``points[z]`` is a (k, 2) array of (x, y)."""

    points: dict[int, np.ndarray] = field(default_factory=dict)
    radius: int = 10
    theta_step: int = 60

    def size(self, z: int) -> int:
        pts = self.points.get(z)
        return 0 if pts is None else len(pts)

    @property
    def total(self) -> int:
        return sum(len(p) for p in self.points.values())


def _round_half_away(v: float) -> int:
    v = round(v, 9)  # cos(60 deg) * 10 is 5.000000000000001
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def lattice_offsets(r: int, theta_step: int) -> list[tuple[int, int]]:
    """Integer steps (round(r cos t), round(r sin t)) for t = 0, step, ..., 360 - step."""
    if r < 1:
        raise ValueError(f"net radius must be >= 1, got {r}")
    if theta_step <= 0 or 360 % theta_step:
        raise ValueError(f"theta_step must divide 360, got {theta_step}")
    steps = []
    for deg in range(0, 360, theta_step):
        t = math.radians(deg)
        step = (_round_half_away(r * math.cos(t)), _round_half_away(r * math.sin(t)))
        if step != (0, 0) and step not in steps:
            steps.append(step)
    return steps


def _seed(mask2d: np.ndarray) -> tuple[int, int] | None:
    xs, ys = np.nonzero(mask2d)
    if xs.size == 0:
        return None
    cx, cy = xs.mean(), ys.mean()
    i = int(np.argmin((xs - cx) ** 2 + (ys - cy) ** 2))
    return int(xs[i]), int(ys[i])


def build_point_net(mask, slice_z: int, r: int = 10, theta_step: int = 60) -> np.ndarray:
    """Grow a point net over one slice and keep the points inside the mask.

    Starting from the masked voxel nearest the slice's masked centroid, each
    new point spawns neighbours at distance ``r`` every ``theta_step``
    degrees, as long as they fall inside the slice. Growth stops when no new
    point appears; points outside the mask are then dropped. Returns a
    (k, 2) integer array of (x, y), sorted.
    """
    m = as_mask(mask)
    if m.ndim != 3:
        raise ShapeError(f"mask must be 3D, got shape {m.shape}")
    steps = lattice_offsets(r, theta_step)
    m2 = m[:, :, slice_z]
    seed = _seed(m2)
    if seed is None:
        return np.empty((0, 2), dtype=np.int64)
    nx, ny = m2.shape
    seen = {seed}
    frontier = deque([seed])
    while frontier:
        x, y = frontier.popleft()
        for dx, dy in steps:
            q = (x + dx, y + dy)
            if 0 <= q[0] < nx and 0 <= q[1] < ny and q not in seen:
                seen.add(q)
                frontier.append(q)
    kept = sorted(p for p in seen if m2[p])
    return np.array(kept, dtype=np.int64).reshape(-1, 2)


def build_point_nets(mask, r: int = 10, theta_step: int = 60) -> PointNet:
    m = as_mask(mask)
    points = {}
    for z in range(m.shape[2]):
        pts = build_point_net(m, z, r, theta_step)
        if len(pts):
            points[z] = pts
    return PointNet(points, r, theta_step)


def score_map(intermediate, mask, net: PointNet | None = None, neighborhood_radius: int = 1,
              *, net_radius: int = 10, theta_step: int = 60, threads: int = 1) -> np.ndarray:
    """Hyperintensity score of every masked voxel.

    A voxel's neighbourhood mean is compared against the patch mean at each
    net point of its own slice; a patch counts as a hit when the voxel's
    mean exceeds it by at least the masked standard deviation of the whole
    image. The score is hits / number of net points on the slice. Means are
    taken over the (2r+1)^3 cube clipped to the grid and the mask.
    """
    a = _as_array(intermediate)
    m = as_mask(mask, a.shape)
    out = np.zeros_like(a)
    sigma = masked_stats(a, m).std
    if sigma < SIGMA_TOLERANCE:
        warnings.warn(
            f"intermediate image has masked std {sigma:.3g}; returning an all-zero map",
            DegenerateContrastWarning, stacklevel=2,
        )
        return out
    if net is None:
        net = build_point_nets(m, net_radius, theta_step)
    means, _ = box_mean(a, neighborhood_radius, m)

    def score_slice(z: int) -> None:
        pts = net.points.get(z)
        if pts is None or len(pts) == 0:
            return
        sl = m[:, :, z]
        if not sl.any():
            return
        mu_p = means[pts[:, 0], pts[:, 1], z]
        mu_v = means[:, :, z][sl]
        hits = np.zeros(mu_v.shape, dtype=np.int64)
        for start in range(0, mu_v.size, 8192):
            chunk = mu_v[start:start + 8192]
            hits[start:start + 8192] = ((chunk[:, None] - mu_p[None, :]) >= sigma).sum(axis=1)
        out[:, :, z][sl] = hits / len(pts)

    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(score_slice, range(a.shape[2])))
    else:
        for z in range(a.shape[2]):
            score_slice(z)
    elapsed = time.perf_counter() - t0
    n = int(m.sum())
    log.info("hyperintensity scoring: %d voxels, %d net points in %.2f s (%.3g voxels/s)",
             n, net.total, elapsed, n / max(elapsed, 1e-9))
    return out
