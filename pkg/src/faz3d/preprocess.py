"""Scan pre-processing: isotropic resampling, surface regularization,
RPE flattening, 3D smoothing, and plexus slab boundaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage as ndi
from scipy.interpolate import CubicSpline

from .config import AXIAL_NATIVE_UM, PipelineConfig
from .volume_io import PLEXUSES, SURFACE_NAMES, OctaVolume, SurfaceSet


@dataclass
class PlexusBounds:
    """Axial slab ``upper(x, y) .. lower(x, y)`` of one plexus (upper <= lower)."""

    upper: np.ndarray
    lower: np.ndarray
    plexus: str

    def __post_init__(self):
        if self.plexus not in PLEXUSES:
            raise ValueError(f"unknown plexus {self.plexus!r}")
        if self.upper.shape != self.lower.shape:
            raise ValueError("upper/lower maps differ in shape")

    def thickness(self) -> np.ndarray:
        return self.lower - self.upper


# -------------------------------------------------------------- resampling


def axial_ratio(res_plane: float, axial_native: float = AXIAL_NATIVE_UM) -> float:
    if not res_plane > 0:
        raise ValueError(f"res_plane must be > 0, got {res_plane}")
    return axial_native / res_plane


def resampled_depth(nz: int, ratio: float) -> int:
    return max(1, int(math.floor(nz * ratio + 0.5)))


@njit(cache=True)
def _resample_columns(src, i0, i1, w, out):
    nx, ny, _ = src.shape
    nzo = out.shape[2]
    for x in range(nx):
        for y in range(ny):
            for k in range(nzo):
                out[x, y, k] = src[x, y, i0[k]] * (1.0 - w[k]) + src[x, y, i1[k]] * w[k]


def resample_axial(vol: OctaVolume, axial_native: float = AXIAL_NATIVE_UM) -> OctaVolume:
    """Linear resize along z so the axial pitch equals ``res_plane``.

    Output depth is ``round(nz * R)`` with ``R = axial_native / res_plane``;
    output sample ``k`` reads source position ``k / R`` (clamped to the last
    slice). Surfaces must be rescaled by the caller with the same ``R``
    (see :func:`rescale_surfaces`).
    """
    if not vol.res_plane > 0:
        raise ValueError(f"res_plane must be > 0, got {vol.res_plane}")
    if not math.isclose(vol.res_axial, axial_native, rel_tol=1e-6):
        raise ValueError(f"expected native axial pitch {axial_native} um, got {vol.res_axial}")
    ratio = axial_ratio(vol.res_plane, axial_native)
    nx, ny, nz = vol.dims
    nzo = resampled_depth(nz, ratio)
    if ratio == 1.0:
        data = vol.data.astype(np.float32, copy=True)
    else:
        zs = np.minimum(np.arange(nzo) / ratio, nz - 1.0)
        i0 = np.floor(zs).astype(np.int64)
        i1 = np.minimum(i0 + 1, nz - 1)
        data = np.empty((nx, ny, nzo), dtype=np.float32)
        _resample_columns(np.ascontiguousarray(vol.data, dtype=np.float32), i0, i1, zs - i0, data)
    return OctaVolume(data, res_plane=vol.res_plane, res_axial=vol.res_plane, isotropic=True)


def rescale_surfaces(surfaces: SurfaceSet, ratio: float, nz_new: int) -> SurfaceSet:
    scaled = {name: np.clip(arr.astype(np.float64) * ratio, 0, nz_new - 1) for name, arr in surfaces.base().items()}
    return SurfaceSet(**scaled)


# ---------------------------------------------------------- regularization


def outlier_mask(surface: np.ndarray, window: int = 15, mad_factor: float = 3.0, floor: float = 2.0) -> np.ndarray:
    """Points deviating from the windowed median by more than
    ``max(mad_factor * 1.4826 * windowed MAD, floor)``."""
    surface = np.asarray(surface, dtype=np.float64)
    med = ndi.median_filter(surface, size=window, mode="nearest")
    dev = np.abs(surface - med)
    mad = ndi.median_filter(dev, size=window, mode="nearest")
    thresh = np.maximum(mad_factor * 1.4826 * mad, floor)
    return dev > thresh


def _spline_fill_rows(values: np.ndarray, bad: np.ndarray) -> np.ndarray:
    out = values.copy()
    cols = np.arange(values.shape[1], dtype=np.float64)
    for i in np.flatnonzero(bad.any(axis=1)):
        good = ~bad[i]
        if good.sum() >= 4:
            spline = CubicSpline(cols[good], values[i, good])
            out[i, bad[i]] = spline(cols[bad[i]])
        elif good.any():
            out[i, bad[i]] = np.interp(cols[bad[i]], cols[good], values[i, good])
        else:
            out[i, bad[i]] = np.nan
    return out


def regularize_surface(surface: np.ndarray, window: int = 15, mad_factor: float = 3.0, floor: float = 2.0) -> np.ndarray:
    """Replace median-window outliers by cubic-spline interpolation.

    Each outlier gets the mean of a row-wise and a column-wise cubic spline
    through the non-outlier points of its row/column; if only one direction
    has data, that one is used. Non-outlier points are returned unchanged.
    """
    surface = np.asarray(surface, dtype=np.float64)
    if min(surface.shape) < window:
        raise ValueError(f"surface {surface.shape} smaller than the {window}x{window} window")
    bad = outlier_mask(surface, window, mad_factor, floor)
    if not bad.any():
        return surface.copy()
    if bad.all():
        raise ValueError("degenerate surface: every point flagged as an outlier")
    along_rows = _spline_fill_rows(surface, bad)
    along_cols = _spline_fill_rows(surface.T, bad.T).T
    filled = np.where(np.isnan(along_rows), along_cols, np.where(np.isnan(along_cols), along_rows, 0.5 * (along_rows + along_cols)))
    if np.isnan(filled[bad]).any():
        raise ValueError("degenerate surface: outliers with no valid row or column neighbour")
    out = surface.copy()
    out[bad] = filled[bad]
    return out


def regularize_surfaces(surfaces: SurfaceSet, nz: int, cfg: PipelineConfig | None = None) -> SurfaceSet:
    """Regularize every layer, then enforce ilm <= ipl <= opl <= rpe per column."""
    cfg = cfg or PipelineConfig()
    reg = [
        regularize_surface(surfaces.base()[name], cfg.median_window, cfg.outlier_mad_factor, cfg.outlier_floor_vox)
        for name in SURFACE_NAMES
    ]
    stack = np.maximum.accumulate(np.clip(np.stack(reg), 0, nz - 1), axis=0)
    return SurfaceSet(**dict(zip(SURFACE_NAMES, stack)))


# -------------------------------------------------------------- flattening


@njit(cache=True)
def _shift_columns(src, shifts, out):
    nx, ny, nz = src.shape
    for x in range(nx):
        for y in range(ny):
            s = shifts[x, y]
            for z in range(nz):
                t = z + s
                if 0 <= t < nz:
                    out[x, y, t] = src[x, y, z]


def rpe_shifts(rpe: np.ndarray, nz: int) -> np.ndarray:
    if np.any(rpe < 0) or np.any(rpe >= nz):
        raise ValueError("RPE surface outside [0, nz)")
    return (nz - 1 - np.floor(rpe + 0.5)).astype(np.int64)


def flatten_on_rpe(vol: OctaVolume, surfaces: SurfaceSet) -> tuple[OctaVolume, SurfaceSet, np.ndarray]:
    """Shift each axial column so the RPE lands on the last slice.

    Shifts are integers (voxels leaving the grid are dropped, vacated voxels
    are zero); surfaces move by the same per-column amount and keep their
    fractional part. Returns the shifted volume, surfaces and the shift map.
    """
    nz = vol.dims[2]
    shifts = rpe_shifts(surfaces.rpe, nz)
    out = np.zeros_like(vol.data, dtype=np.float32)
    _shift_columns(np.ascontiguousarray(vol.data, dtype=np.float32), shifts, out)
    moved = {name: np.asarray(arr, dtype=np.float64) + shifts for name, arr in surfaces.base().items()}
    extra = {}
    for name in ("ipl_minus", "ipl_plus"):
        arr = getattr(surfaces, name)
        if arr is not None:
            extra[name] = arr + shifts
    return OctaVolume(out, vol.res_plane, vol.res_axial, vol.isotropic), SurfaceSet(**moved, **extra), shifts


# -------------------------------------------------------------- smoothing


def gaussian3d(vol: OctaVolume, sigma: float = 3.0, z_range: tuple[int, int] | None = None) -> OctaVolume:
    """Separable Gaussian, kernel truncated at 4 sigma, replicated borders.

    With ``z_range=(z0, z1)`` only slices ``z0 <= z < z1`` are computed
    (identical to the full filter there); the rest of the output is zero.
    """
    data = vol.data
    nz = data.shape[2]
    if z_range is None:
        out = ndi.gaussian_filter(data, sigma, mode="nearest", truncate=4.0, output=np.float32)
        return OctaVolume(out, vol.res_plane, vol.res_axial, vol.isotropic)
    z0, z1 = max(0, int(z_range[0])), min(nz, int(z_range[1]))
    radius = int(4.0 * sigma + 0.5)
    lo, hi = max(0, z0 - radius), min(nz, z1 + radius)
    out = np.zeros_like(data, dtype=np.float32)
    if z1 > z0:
        part = ndi.gaussian_filter(data[:, :, lo:hi], sigma, mode="nearest", truncate=4.0, output=np.float32)
        out[:, :, z0:z1] = part[:, :, z0 - lo : z1 - lo]
    return OctaVolume(out, vol.res_plane, vol.res_axial, vol.isotropic)


# ------------------------------------------------------------ plexus slabs


def derive_plexus_bounds(surfaces: SurfaceSet, res_plane: float, cfg: PipelineConfig | None = None) -> list[PlexusBounds]:
    """IPL-/IPL+ offsets and the three slabs SVC=(ilm, ipl-), ICP=(ipl-, ipl+), DCP=(ipl+, opl).

    Offsets are converted to voxels with ``res_plane`` (isotropic grid) and
    clamped to ``[ilm, opl]``.
    """
    cfg = cfg or PipelineConfig()
    ilm = np.asarray(surfaces.ilm, dtype=np.float64)
    opl = np.asarray(surfaces.opl, dtype=np.float64)
    ipl = np.asarray(surfaces.ipl, dtype=np.float64)
    if np.any(ilm > opl):
        raise ValueError("surface ordering violated: ILM below OPL")
    ipl_minus = np.clip(ipl + cfg.offset_ipl_minus_um / res_plane, ilm, opl)
    ipl_plus = np.clip(ipl + cfg.offset_ipl_plus_um / res_plane, ilm, opl)
    if np.any(ipl_minus > ipl_plus):
        raise ValueError("surface ordering violated: IPL- below IPL+")
    return [
        PlexusBounds(ilm, ipl_minus, "superficial"),
        PlexusBounds(ipl_minus, ipl_plus, "intermediate"),
        PlexusBounds(ipl_plus, opl, "deep"),
    ]


@dataclass
class PreprocessedScan:
    volume: OctaVolume
    surfaces: SurfaceSet
    bounds: list[PlexusBounds]
    shifts: np.ndarray
    ratio: float
    stage_seconds: dict[str, float] = field(default_factory=dict)


def preprocess_scan(vol: OctaVolume, surfaces: SurfaceSet, cfg: PipelineConfig | None = None, timer=None) -> PreprocessedScan:
    """resample -> rescale + regularize surfaces -> flatten -> Gaussian -> slabs."""
    from .timing import StageTimer

    cfg = cfg or PipelineConfig()
    timer = timer or StageTimer()
    with timer("resample"):
        ratio = axial_ratio(vol.res_plane, cfg.axial_native_um)
        iso = resample_axial(vol, cfg.axial_native_um)
        nz = iso.dims[2]
        surf = rescale_surfaces(surfaces, ratio, nz)
    with timer("regularize"):
        surf = regularize_surfaces(surf, nz, cfg)
    with timer("flatten"):
        flat, surf, shifts = flatten_on_rpe(iso, surf)
        del iso
    with timer("gaussian"):
        bounds = derive_plexus_bounds(surf, flat.res_plane, cfg)
        # only the slabs are ever read downstream
        z0 = int(np.floor(max(0.0, float(surf.ilm.min()))))
        z1 = int(np.ceil(min(nz - 1.0, float(surf.opl.max())))) + 1
        smooth = gaussian3d(flat, cfg.sigma_volume, z_range=(z0, z1))
        del flat
    surf = surf.replace(ipl_minus=bounds[0].lower, ipl_plus=bounds[1].lower)
    return PreprocessedScan(smooth, surf, bounds, shifts, ratio, dict(timer.seconds))
