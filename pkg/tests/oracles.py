"""Independent reference implementations used as test oracles.

They are deliberately slow and written without sharing code with the
package, so that agreement is meaningful.
"""

from __future__ import annotations

import math

import numpy as np


def otsu_exhaustive(img: np.ndarray, nbins: int = 256):
    """Try every cut point of a ``nbins`` histogram over [min, max].

    Pixels are assigned to bins by direct comparison against the edges
    (``edge[i] < v <= edge[i+1]``, minimum into bin 0). Each class is
    summarized by its bin centres. Returns ``(k, threshold, mask, scores)``
    with the first maximizing cut ``k``.
    """
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    edges = np.linspace(lo, hi, nbins + 1)
    centers = [(edges[i] + edges[i + 1]) / 2 for i in range(nbins)]
    flat = img.ravel()
    counts = []
    for i in range(nbins):
        if i == 0:
            sel = flat <= edges[1]
        else:
            sel = (flat > edges[i]) & (flat <= edges[i + 1])
        counts.append(int(sel.sum()))
    assert sum(counts) == flat.size
    counts = np.array(counts, dtype=np.float64)
    centers = np.array(centers)
    scores = []
    for k in range(1, nbins):
        n0 = counts[:k].sum()
        n1 = counts[k:].sum()
        if n0 == 0 or n1 == 0:
            scores.append(-1.0)
            continue
        mu0 = (counts[:k] * centers[:k]).sum() / n0
        mu1 = (counts[k:] * centers[k:]).sum() / n1
        scores.append(n0 * n1 * (mu0 - mu1) ** 2)
    best = max(scores)
    # relative slack only to absorb summation-order rounding between formulas
    k = 1 + next(i for i, s in enumerate(scores) if s >= best * (1 - 1e-12))
    threshold = float(edges[k])
    return k, threshold, img > threshold, scores


def chamfer_bruteforce(mask: np.ndarray) -> np.ndarray:
    """All-pairs (1, sqrt 2) chamfer distance from each True pixel to the
    nearest False pixel; inf if there is none."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros(mask.shape)
    bg = np.argwhere(~mask)
    fg = np.argwhere(mask)
    if len(bg) == 0:
        out[mask] = np.inf
        return out
    for p in fg:
        d = np.abs(bg - p)
        lo = d.min(axis=1)
        hi = d.max(axis=1)
        # integer (straight, diagonal) step pairs; compare by value, build float once
        vals = (hi - lo) + lo * math.sqrt(2.0)
        j = int(np.argmin(vals))
        out[tuple(p)] = float(hi[j] - lo[j]) + float(lo[j]) * math.sqrt(2.0)
    return out


def ball_bruteforce(radius: int, ndim: int) -> int:
    """Number of integer offsets with squared length <= radius^2."""
    r = int(radius)
    count = 0
    rng = range(-r, r + 1)
    if ndim == 2:
        for a in rng:
            for b in rng:
                count += a * a + b * b <= r * r
    else:
        for a in rng:
            for b in rng:
                for c in rng:
                    count += a * a + b * b + c * c <= r * r
    return count


def dilate_bruteforce(mask: np.ndarray, radius: int) -> np.ndarray:
    """Union of Euclidean balls around every True voxel, by explicit distance."""
    mask = np.asarray(mask, dtype=bool)
    grid = np.indices(mask.shape).reshape(mask.ndim, -1).T
    pts = np.argwhere(mask)
    out = np.zeros(mask.size, dtype=bool)
    for p in pts:
        out |= ((grid - p) ** 2).sum(axis=1) <= radius * radius
    return out.reshape(mask.shape)


def gaussian_kernel_1d(sigma: float, truncate: float = 4.0) -> np.ndarray:
    r = int(truncate * sigma + 0.5)
    x = np.arange(-r, r + 1)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()
