"""En face capillary segmentation: vesselness, Otsu binarization,
skeleton and per-centerline radius estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage as ndi
from skimage.morphology import thin

from .config import FrangiParams, PipelineConfig
from .volume_io import EnFaceImage

SQRT2 = math.sqrt(2.0)


class DegenerateImageError(ValueError):
    """Raised when an image has no intensity spread to threshold."""


@dataclass
class Skeleton2D:
    """Centerline pixels ``points`` (N, 2) as (x, y) with integer ``radius`` (N,)."""

    points: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        self.radius = np.asarray(self.radius, dtype=np.int64).reshape(-1)
        if len(self.points) != len(self.radius):
            raise ValueError("points and radius lengths differ")
        if np.any(self.radius < 1):
            raise ValueError("radii must be >= 1")

    def __len__(self):
        return len(self.points)

    def to_mask(self, shape) -> np.ndarray:
        mask = np.zeros(shape, dtype=bool)
        mask[self.points[:, 0], self.points[:, 1]] = True
        return mask


# -------------------------------------------------------------- vesselness


def hessian_eigenvalues(img: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of the sigma^2-normalized Gaussian Hessian, sorted |l1| <= |l2|."""
    img = np.asarray(img, dtype=np.float64)
    s2 = sigma * sigma
    hxx = s2 * ndi.gaussian_filter(img, sigma, order=(2, 0), mode="nearest")
    hyy = s2 * ndi.gaussian_filter(img, sigma, order=(0, 2), mode="nearest")
    hxy = s2 * ndi.gaussian_filter(img, sigma, order=(1, 1), mode="nearest")
    half_trace = 0.5 * (hxx + hyy)
    root = np.sqrt(0.25 * (hxx - hyy) ** 2 + hxy**2)
    mu1 = half_trace + root
    mu2 = half_trace - root
    swap = np.abs(mu1) > np.abs(mu2)
    l1 = np.where(swap, mu2, mu1)
    l2 = np.where(swap, mu1, mu2)
    return l1, l2


def vesselness(img: np.ndarray, sigma: float, beta_one: float, beta_two: float) -> np.ndarray:
    """Single-scale bright-ridge vesselness in [0, 1]."""
    l1, l2 = hessian_eigenvalues(img, sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        rb2 = np.where(l2 != 0, (l1 / l2) ** 2, 0.0)
    s2 = l1**2 + l2**2
    v = np.exp(-rb2 / (2 * beta_one**2)) * (1.0 - np.exp(-s2 / (2 * beta_two**2)))
    # bright ridge needs a strongly negative cross-section curvature
    v[l2 >= 0] = 0.0
    return v


def frangi_enhance(img, cfg: PipelineConfig | None = None) -> np.ndarray:
    """Maximum of the vesselness over the configured scales.

    The image is first min-max scaled to ``[0, cfg.frangi_intensity_range]``
    so that ``beta_two`` acts on an 8-bit-like intensity scale.
    """
    cfg = cfg or PipelineConfig()
    params: FrangiParams = cfg.frangi
    data = img.data if isinstance(img, EnFaceImage) else np.asarray(img)
    data = np.asarray(data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi <= lo:
        return np.zeros(data.shape)
    data = (data - lo) * (cfg.frangi_intensity_range / (hi - lo))
    out = np.zeros(data.shape)
    for sigma in params.sigmas:
        np.maximum(out, vesselness(data, sigma, params.beta_one, params.beta_two), out=out)
    return out


# --------------------------------------------------------------------- Otsu


def histogram_bins(img: np.ndarray, nbins: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Right-closed bins over [min, max]: bin i holds ``edge[i] < v <= edge[i+1]``
    (the minimum itself goes to bin 0). Returns (bin index per pixel, edges)."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    edges = np.linspace(lo, hi, nbins + 1)
    idx = np.searchsorted(edges[1:-1], img, side="left")
    return idx, edges


def otsu_cut(counts: np.ndarray, centers: np.ndarray) -> int:
    """Cut ``k`` (lower class = bins < k) maximizing between-class variance;
    first maximum on ties."""
    counts = np.asarray(counts, dtype=np.float64)
    w0 = np.cumsum(counts)[:-1]
    total = counts.sum()
    w1 = total - w0
    m0 = np.cumsum(counts * centers)[:-1]
    m1 = (counts * centers).sum() - m0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (m0 / w0 - m1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    return int(np.argmax(between)) + 1


def otsu_threshold(img, nbins: int = 256, strict: bool = False) -> tuple[np.ndarray, float]:
    """Global Otsu binarization on a ``nbins`` histogram over [min, max].

    Returns ``(mask, threshold)`` with ``mask = img > threshold``. A constant
    image raises :class:`DegenerateImageError` when ``strict``, otherwise it
    yields an all-False mask and ``threshold = nan``.
    """
    data = img.data if isinstance(img, EnFaceImage) else np.asarray(img)
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise ValueError("image has non-finite values")
    if data.max() <= data.min():
        if strict:
            raise DegenerateImageError("constant image has no Otsu threshold")
        return np.zeros(data.shape, dtype=bool), float("nan")
    idx, edges = histogram_bins(data, nbins)
    counts = np.bincount(idx.ravel(), minlength=nbins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    k = otsu_cut(counts, centers)
    return idx >= k, float(edges[k])


# ---------------------------------------------------------------- skeleton


@njit(cache=True)
def _drop_interior_points(sk):
    # sequential removal keeps the 8-ring around each removed point intact
    nx, ny = sk.shape
    changed = True
    while changed:
        changed = False
        for x in range(1, nx - 1):
            for y in range(1, ny - 1):
                if not sk[x, y]:
                    continue
                full = True
                for dx in range(-1, 2):
                    for dy in range(-1, 2):
                        if not sk[x + dx, y + dy]:
                            full = False
                if full:
                    sk[x, y] = False
                    changed = True


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Unit-width, 8-connected skeleton that keeps the 8-component count.

    Topology-preserving two-subiteration thinning, followed by removal of any
    point whose full 3x3 neighbourhood survived (those only persist around
    small holes; removing them one at a time cannot disconnect anything).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    sk = thin(mask)
    _drop_interior_points(sk)
    return sk


# ------------------------------------------------------- distance transform


@njit(cache=True)
def _chamfer_two_pass(mask, axial, diag):
    # axial/diag count unit and diagonal steps of the best path found so far
    nx, ny = mask.shape
    big = 1 << 40
    for x in range(nx):
        for y in range(ny):
            if mask[x, y]:
                axial[x, y] = big
                diag[x, y] = 0
            else:
                axial[x, y] = 0
                diag[x, y] = 0
    r2 = math.sqrt(2.0)
    for x in range(nx):
        for y in range(ny):
            if not mask[x, y]:
                continue
            ba = axial[x, y]
            bd = diag[x, y]
            best = ba + bd * r2
            # forward neighbours: (x-1, y-1), (x-1, y), (x-1, y+1), (x, y-1)
            for k in range(4):
                if k == 0:
                    px, py, da, dd = x - 1, y - 1, 0, 1
                elif k == 1:
                    px, py, da, dd = x - 1, y, 1, 0
                elif k == 2:
                    px, py, da, dd = x - 1, y + 1, 0, 1
                else:
                    px, py, da, dd = x, y - 1, 1, 0
                if px < 0 or py < 0 or py >= ny:
                    continue
                ca = axial[px, py] + da
                cd = diag[px, py] + dd
                c = ca + cd * r2
                if c < best:
                    best = c
                    ba = ca
                    bd = cd
            axial[x, y] = ba
            diag[x, y] = bd
    for x in range(nx - 1, -1, -1):
        for y in range(ny - 1, -1, -1):
            if not mask[x, y]:
                continue
            ba = axial[x, y]
            bd = diag[x, y]
            best = ba + bd * r2
            for k in range(4):
                if k == 0:
                    px, py, da, dd = x + 1, y + 1, 0, 1
                elif k == 1:
                    px, py, da, dd = x + 1, y, 1, 0
                elif k == 2:
                    px, py, da, dd = x + 1, y - 1, 0, 1
                else:
                    px, py, da, dd = x, y + 1, 1, 0
                if px >= nx or py < 0 or py >= ny:
                    continue
                ca = axial[px, py] + da
                cd = diag[px, py] + dd
                c = ca + cd * r2
                if c < best:
                    best = c
                    ba = ca
                    bd = cd
            axial[x, y] = ba
            diag[x, y] = bd


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Chamfer (1, sqrt 2) distance from each True pixel to the nearest False one.

    Exactly one forward and one backward raster pass. Values are formed as
    ``a + b*sqrt(2)`` from integer step counts, so equal paths give equal
    floats. False pixels are 0; with no False pixel at all, True pixels are inf.
    """
    mask = np.ascontiguousarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("distance_transform expects a 2D mask")
    if mask.all():
        return np.full(mask.shape, np.inf)
    axial = np.empty(mask.shape, dtype=np.int64)
    diag = np.empty(mask.shape, dtype=np.int64)
    _chamfer_two_pass(mask, axial, diag)
    return axial + diag * SQRT2


# ----------------------------------------------------------------- radii


def skeleton_radii(skeleton: np.ndarray, dt: np.ndarray, sigma: float = 1.0) -> Skeleton2D:
    """Integer radius per skeleton pixel: ``max(1, round(G_sigma * dt))`` sampled
    on the skeleton, the Gaussian acting on the full distance field."""
    skeleton = np.asarray(skeleton, dtype=bool)
    if not skeleton.any():
        return Skeleton2D(np.zeros((0, 2), np.int64), np.zeros(0, np.int64))
    if not np.isfinite(dt).all():
        raise ValueError("distance field has no background pixel")
    smooth = ndi.gaussian_filter(np.asarray(dt, dtype=np.float64), sigma, mode="nearest", truncate=4.0)
    xs, ys = np.nonzero(skeleton)
    radius = np.maximum(1, np.floor(smooth[xs, ys] + 0.5)).astype(np.int64)
    return Skeleton2D(np.column_stack([xs, ys]), radius)


# -------------------------------------------------------------- composition


@dataclass
class PlexusSegmentation:
    plexus: str
    enhanced: np.ndarray
    mask: np.ndarray
    skeleton_mask: np.ndarray
    distance: np.ndarray
    skeleton: Skeleton2D
    threshold: float


def segment_plexus_2d(enface, cfg: PipelineConfig | None = None, strict: bool | None = None) -> PlexusSegmentation:
    """vesselness -> Otsu -> skeleton + chamfer distance -> radii."""
    cfg = cfg or PipelineConfig()
    strict = cfg.otsu_strict if strict is None else strict
    plexus = enface.plexus if isinstance(enface, EnFaceImage) else "superficial"
    enhanced = frangi_enhance(enface, cfg)
    try:
        mask, threshold = otsu_threshold(enhanced, cfg.otsu_bins, strict=strict)
    except DegenerateImageError as exc:
        raise DegenerateImageError(f"{plexus}: {exc}") from None
    if mask.all():
        raise DegenerateImageError(f"{plexus}: vessel mask covers the whole image")
    sk_mask = skeletonize(mask)
    dt = distance_transform(mask)
    skeleton = skeleton_radii(sk_mask, dt, cfg.sigma_radius)
    return PlexusSegmentation(plexus, enhanced, mask, sk_mask, dt, skeleton, threshold)
