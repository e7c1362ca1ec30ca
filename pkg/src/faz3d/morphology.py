"""Binary morphology on 2D/3D grids with Euclidean disk/ball structuring elements.

Dilation by a ball of integer radius ``r`` is computed through the exact
squared Euclidean distance to the nearest set voxel (separable lower-envelope
transform), so its cost does not grow with ``r``. A voxel is in the dilation
iff some set voxel lies at squared distance ``<= r**2``, which is the same
set as sweeping the ball ``{d : |d|^2 <= r^2}``.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy import ndimage as ndi

_INF = 1.0e18


@njit(cache=True)
def _envelope_lines(buf, v, z, g):
    # in-place 1D squared-distance transform of every row of buf
    nlines, n = buf.shape
    for line in range(nlines):
        f = buf[line]
        k = -1
        for q in range(n):
            if f[q] >= _INF:
                continue
            fq = f[q] + q * q
            while k >= 0:
                p = v[k]
                s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            if k == 0:
                z[k] = -_INF
            else:
                p = v[k - 1]
                z[k] = (fq - (f[p] + p * p)) / (2.0 * (q - p))
            z[k + 1] = _INF
        if k < 0:
            continue
        j = 0
        for q in range(n):
            while z[j + 1] < q:
                j += 1
            p = v[j]
            g[q] = (q - p) * (q - p) + f[p]
        for q in range(n):
            f[q] = g[q]


@njit(cache=True)
def _linear_pass(buf):
    # first axis: plain two-sided scan for distance to nearest seed
    nlines, n = buf.shape
    for line in range(nlines):
        f = buf[line]
        last = -1
        for q in range(n):
            if f[q] == 0.0:
                last = q
            elif last >= 0:
                f[q] = (q - last) * (q - last)
        last = -1
        for q in range(n - 1, -1, -1):
            if f[q] == 0.0:
                last = q
            elif last >= 0:
                d = (last - q) * (last - q)
                if d < f[q]:
                    f[q] = d


def squared_distance_to(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance from every element to the nearest True one.

    Elements with no True element anywhere get a huge sentinel (>= 1e18).
    """
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, 0.0, _INF)
    if out.size == 0:
        return out
    for i, axis in enumerate(range(out.ndim - 1, -1, -1)):
        moved = np.moveaxis(out, axis, -1)
        n = moved.shape[-1]
        buf = np.ascontiguousarray(moved).reshape(-1, n)
        if i == 0:
            _linear_pass(buf)
        else:
            _envelope_lines(buf, np.zeros(n, np.int64), np.zeros(n + 1), np.zeros(n))
        out = np.moveaxis(buf.reshape(moved.shape), -1, axis)
    return np.ascontiguousarray(out)


def dilate_ball(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilate a 2D/3D mask with the Euclidean disk/ball of integer ``radius``."""
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0 or not mask.any():
        return mask.copy()
    return squared_distance_to(mask) <= radius * radius


def ball_offsets(radius: int, ndim: int = 3) -> np.ndarray:
    """Integer offsets ``d`` with ``|d|^2 <= radius^2``, shape (k, ndim)."""
    r = int(radius)
    axes = np.meshgrid(*([np.arange(-r, r + 1)] * ndim), indexing="ij")
    grid = np.stack([a.ravel() for a in axes], axis=1)
    return grid[(grid**2).sum(axis=1) <= r * r]


def ball(radius: int, ndim: int = 3) -> np.ndarray:
    """Dense boolean structuring element for the Euclidean ball."""
    r = int(radius)
    off = ball_offsets(r, ndim) + r
    se = np.zeros((2 * r + 1,) * ndim, dtype=bool)
    se[tuple(off.T)] = True
    return se


def full_connectivity(ndim: int) -> np.ndarray:
    """8-connectivity in 2D, 26-connectivity in 3D."""
    return np.ones((3,) * ndim, dtype=bool)


def label(mask: np.ndarray) -> tuple[np.ndarray, int]:
    return ndi.label(mask, structure=full_connectivity(mask.ndim))


def remove_small_components(mask: np.ndarray, min_size: int) -> np.ndarray:
    """Drop fully-connected components with fewer than ``min_size`` elements."""
    mask = np.asarray(mask, dtype=bool)
    if min_size <= 1 or not mask.any():
        return mask.copy()
    labels, n = label(mask)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]


def count_components(mask: np.ndarray) -> int:
    return label(np.asarray(mask, dtype=bool))[1]
