"""Grid containers, masked statistics and cube-neighbourhood arithmetic.

Arrays are indexed ``[x, y, z]``. On disk the x index varies fastest, which
is numpy's Fortran order for that indexing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class ShapeError(ValueError):
    """Arrays that must share a grid do not."""


class DomainError(ValueError):
    """An operation received input outside its mathematical domain."""


class DegenerateRangeError(DomainError):
    """Masked values span no range (min == max)."""


@dataclass(frozen=True, eq=False)
class Volume3D:
    """A scalar 3D image plus the geometry needed to write it back out.

    ``header`` holds the parsed NIfTI-1 fields of the file the data came
    from, if any; writers copy orientation fields from it verbatim.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    header: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise ShapeError(f"volume must be 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeError(f"volume dims must be >= 1, got {data.shape}")
        if not np.isfinite(data).all():
            raise DomainError("volume contains NaN or Inf values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    def with_data(self, data) -> Volume3D:
        """Same geometry, new voxel values."""
        return Volume3D(data, self.spacing, self.header)


class MaskedStats(NamedTuple):
    mean: float
    std: float
    count: int


def as_mask(mask, shape=None) -> np.ndarray:
    """Coerce ``mask`` to a boolean array, checking its shape against ``shape``."""
    m = np.asarray(mask)
    if m.dtype != bool:
        m = m != 0
    if shape is not None and m.shape != tuple(shape):
        raise ShapeError(f"mask shape {m.shape} does not match volume shape {tuple(shape)}")
    return m


def _as_array(vol) -> np.ndarray:
    a = np.asarray(vol, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"expected a 3D array, got shape {a.shape}")
    return a


def masked_stats(vol, mask) -> MaskedStats:
    """Mean and population standard deviation over the set voxels of ``mask``."""
    a = _as_array(vol)
    m = as_mask(mask, a.shape)
    vals = a[m]
    if vals.size == 0:
        raise DomainError("statistics requested over an empty mask")
    mean = float(vals.mean())
    std = float(np.sqrt(np.mean((vals - mean) ** 2)))
    return MaskedStats(mean, std, int(vals.size))


def neighborhood_mean(vol, center, radius: int, mask=None) -> float:
    """Mean over the (2r+1)^3 cube at ``center``, clipped to the grid and the mask."""
    a = _as_array(vol)
    m = np.ones(a.shape, bool) if mask is None else as_mask(mask, a.shape)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    c = tuple(int(i) for i in center)
    if len(c) != 3 or any(not 0 <= ci < n for ci, n in zip(c, a.shape)):
        raise DomainError(f"center {center} outside volume of shape {a.shape}")
    sl = tuple(slice(max(ci - radius, 0), ci + radius + 1) for ci in c)
    sub_m = m[sl]
    n = int(sub_m.sum())
    if n == 0:
        raise DomainError(f"no masked voxels in the neighbourhood of {c}")
    return float(a[sl][sub_m].sum() / n)


def box_sum(a, radius: int) -> np.ndarray:
    """Sum over the (2r+1)^3 cube around every voxel, treating outside as zero.

    The cube is accumulated axis by axis from shifted slices, so each output
    voxel is computed by the same fixed sequence of additions no matter how
    the caller tiles the work.
    """
    out = np.asarray(a, dtype=np.float64)
    if radius == 0:
        return out.copy()
    for axis in range(3):
        n = out.shape[axis]
        pad = [(0, 0)] * 3
        pad[axis] = (radius, radius)
        p = np.pad(out, pad)
        idx = [slice(None)] * 3
        idx[axis] = slice(0, n)
        acc = p[tuple(idx)].copy()
        for k in range(1, 2 * radius + 1):
            idx[axis] = slice(k, k + n)
            acc += p[tuple(idx)]
        out = acc
    return out


def box_mean(vol, radius: int, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``neighborhood_mean`` for every voxel.

    Returns ``(means, counts)``; where ``counts`` is zero the mean is 0.
    """
    a = _as_array(vol)
    if mask is None:
        sums = box_sum(a, radius)
        counts = box_sum(np.ones(a.shape), radius)
    else:
        m = as_mask(mask, a.shape)
        sums = box_sum(np.where(m, a, 0.0), radius)
        counts = box_sum(m.astype(np.float64), radius)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return means, counts


def rescale_unit(vol, mask) -> np.ndarray:
    """Affinely map the masked min/max to 0/1; voxels outside the mask become 0."""
    a = _as_array(vol)
    m = as_mask(mask, a.shape)
    vals = a[m]
    if vals.size == 0:
        raise DomainError("rescale requested over an empty mask")
    lo, hi = float(vals.min()), float(vals.max())
    if not hi > lo:
        raise DegenerateRangeError(f"masked values are constant ({lo}); cannot rescale")
    out = np.zeros_like(a)
    out[m] = (vals - lo) / (hi - lo)
    return out
