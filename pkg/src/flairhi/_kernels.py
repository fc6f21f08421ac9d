"""Compiled per-voxel loops.

Every output voxel is produced by a fixed sequence of floating-point
operations that does not depend on how ``prange`` splits the work, so
results are bit-identical for any thread count.
"""

import logging
import math
import warnings

import numba
import numpy as np
from numba import njit, prange

log = logging.getLogger(__name__)

# Some installs ship an old TBB; numba then falls back to another layer and says so.
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)


def set_threads(n: int | None) -> int:
    """Set the compiled-kernel thread count, clamped to what numba was started with."""
    limit = numba.config.NUMBA_NUM_THREADS
    if n is None or n < 1:
        n = limit
    if n > limit:
        log.warning("requested %d threads, numba allows %d (set NUMBA_NUM_THREADS)", n, limit)
        n = limit
    numba.set_num_threads(n)
    return n


def half_window_offsets(radius: int) -> np.ndarray:
    """Offsets of a (2r+1)^3 window that are lexicographically positive in (z, y, x).

    Together with their negations and the zero offset they tile the window
    exactly once.
    """
    out = []
    for dz in range(-radius, radius + 1):
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                if (dz, dy, dx) > (0, 0, 0):
                    out.append((dx, dy, dz))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


@njit(parallel=True, cache=True)
def nlm_accumulate(u, up, mask, offsets, p, two_sig2, inv_h2, weights, acc):
    """Add the contributions of every offset pair (+t, -t) to ``weights``/``acc``.

    ``acc`` collects weighted differences from the centre value, so the
    denoised voxel is u + acc / weights and a flat region stays exactly flat.

    ``up`` is ``u`` edge-padded by the patch radius ``p``. A pair (x, x+t)
    contributes only when both voxels are masked; its weight is
    exp(-max(d2 - 2 sigma^2, 0) / h^2) with d2 the mean squared patch
    difference.
    """
    nx, ny, nz = u.shape
    nxp, nyp, nzp = up.shape
    patch_n = (2 * p + 1) ** 3
    d = np.empty(up.shape)
    s = np.empty(up.shape)
    w = np.empty(u.shape)
    for o in range(offsets.shape[0]):
        tx, ty, tz = offsets[o, 0], offsets[o, 1], offsets[o, 2]

        for k in prange(nzp):
            for j in range(nyp):
                for i in range(nxp):
                    i2, j2, k2 = i + tx, j + ty, k + tz
                    if 0 <= i2 < nxp and 0 <= j2 < nyp and 0 <= k2 < nzp:
                        diff = up[i, j, k] - up[i2, j2, k2]
                        d[i, j, k] = diff * diff
                    else:
                        d[i, j, k] = 0.0

        for k in prange(nzp):
            for j in range(nyp):
                for i in range(p, nxp - p):
                    acc_x = 0.0
                    for a in range(-p, p + 1):
                        acc_x += d[i + a, j, k]
                    s[i, j, k] = acc_x

        for k in prange(nzp):
            for j in range(p, nyp - p):
                for i in range(p, nxp - p):
                    acc_y = 0.0
                    for b in range(-p, p + 1):
                        acc_y += s[i, j + b, k]
                    d[i, j, k] = acc_y

        for z in prange(nz):
            for y in range(ny):
                for x in range(nx):
                    wt = 0.0
                    x2, y2, z2 = x + tx, y + ty, z + tz
                    if (mask[x, y, z] and 0 <= x2 < nx and 0 <= y2 < ny and 0 <= z2 < nz
                            and mask[x2, y2, z2]):
                        acc_z = 0.0
                        for c in range(-p, p + 1):
                            acc_z += d[x + p, y + p, z + p + c]
                        excess = acc_z / patch_n - two_sig2
                        if excess < 0.0:
                            excess = 0.0
                        wt = math.exp(-excess * inv_h2)
                    w[x, y, z] = wt

        for z in prange(nz):
            for y in range(ny):
                for x in range(nx):
                    wt = w[x, y, z]
                    if wt > 0.0:
                        weights[x, y, z] += wt
                        acc[x, y, z] += wt * (u[x + tx, y + ty, z + tz] - u[x, y, z])
                    xb, yb, zb = x - tx, y - ty, z - tz
                    if 0 <= xb < nx and 0 <= yb < ny and 0 <= zb < nz:
                        wb = w[xb, yb, zb]
                        if wb > 0.0:
                            weights[x, y, z] += wb
                            acc[x, y, z] += wb * (u[xb, yb, zb] - u[x, y, z])
