"""Foveal avascular zone extraction in 2D (per plexus) and 3D, and the
end-to-end per-scan measurement."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .morphology import dilate_ball, label, remove_small_components
from .preprocess import PreprocessedScan, preprocess_scan
from .reconstruct3d import Skeleton3D, inflate_network, locate_axial, merge_networks
from .timing import StageTimer
from .vessel2d import PlexusSegmentation, segment_plexus_2d
from .volume_io import PLEXUSES, FazMeasurement, OctaVolume, SurfaceSet

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A scan failed; ``stage`` names the step that raised."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.detail = message


@dataclass
class FazRegion2D:
    mask: np.ndarray
    area_mm2: float
    fallback: bool = False


@dataclass
class FazRegion3D:
    mask: np.ndarray
    volume_mm3: float
    fallback: bool = False


def _border_labels(labels: np.ndarray, lateral_axes=(0, 1)) -> np.ndarray:
    faces = []
    for axis in lateral_axes:
        faces.append(np.take(labels, 0, axis=axis).ravel())
        faces.append(np.take(labels, labels.shape[axis] - 1, axis=axis).ravel())
    return np.unique(np.concatenate(faces))


def select_component(free: np.ndarray, center_index) -> tuple[np.ndarray, bool]:
    """Largest fully-connected component of ``free`` not touching the lateral
    frame border; otherwise the largest one meeting ``center_index``
    (a point in 2D, a column ``(x, y)`` in 3D). Returns (mask, fallback_used)."""
    labels, n = label(free)
    if n == 0:
        return np.zeros_like(free), True
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    inner = sizes.copy()
    inner[_border_labels(labels)] = 0
    if inner.max() > 0:
        return labels == int(np.argmax(inner)), False
    at_center = np.unique(labels[center_index])
    at_center = at_center[at_center > 0]
    if at_center.size == 0:
        return np.zeros_like(free), True
    best = at_center[np.argmax(sizes[at_center])]
    return labels == best, True


def faz_2d(vessel_mask: np.ndarray, res_plane: float, cfg: PipelineConfig | None = None) -> FazRegion2D:
    """Filter small blobs, close the vessel map with disk(R), keep the
    avascular component, dilate it back by disk(R), measure in mm^2."""
    cfg = cfg or PipelineConfig()
    vessels = remove_small_components(vessel_mask, cfg.min_component_px)
    radius = cfg.faz_dilation_radius
    free = ~dilate_ball(vessels, radius)
    nx, ny = free.shape
    component, fallback = select_component(free, (nx // 2, ny // 2))
    if fallback:
        log.warning("2D FAZ: no interior avascular component, fell back to the frame-centre component")
    mask = dilate_ball(component, radius) if component.any() else component
    area = float(mask.sum()) * (res_plane / 1000.0) ** 2
    return FazRegion2D(mask, area, fallback)


def slab_mask(ilm: np.ndarray, opl: np.ndarray, nz: int, z0: int = 0, z1: int | None = None) -> np.ndarray:
    """``ilm(x, y) <= z <= opl(x, y)`` over slices ``z0 <= z < z1``."""
    z1 = nz if z1 is None else z1
    zz = np.arange(z0, z1)
    return (zz >= ilm[..., None]) & (zz <= opl[..., None])


def faz_3d(network: np.ndarray, ilm: np.ndarray, opl: np.ndarray, res_plane: float, cfg: PipelineConfig | None = None) -> FazRegion3D:
    """3D analogue of :func:`faz_2d` with ball(R) and 26-connectivity.

    The avascular component is chosen among voxels between ILM and OPL and
    the final dilated region is restricted to that slab again. Work is done
    on the z-range holding the slab and the network plus an R margin, which
    gives the same result as the full grid.
    """
    cfg = cfg or PipelineConfig()
    radius = cfg.faz_dilation_radius
    nx, ny, nz = network.shape
    ilm = np.asarray(ilm, dtype=np.float64)
    opl = np.asarray(opl, dtype=np.float64)
    out = np.zeros(network.shape, dtype=bool)

    z_net = np.flatnonzero(network.any(axis=(0, 1)))
    lo = int(np.floor(ilm.min())) - radius
    hi = int(np.ceil(opl.max())) + radius + 1
    if z_net.size:
        lo, hi = min(lo, int(z_net[0])), max(hi, int(z_net[-1]) + 1)
    lo, hi = max(0, lo), min(nz, hi)

    vessels = remove_small_components(network[:, :, lo:hi], cfg.min_component_px)
    slab = slab_mask(ilm, opl, nz, lo, hi)
    free = ~dilate_ball(vessels, radius) & slab
    del vessels
    component, fallback = select_component(free, (nx // 2, ny // 2, slice(None)))
    del free
    if fallback:
        log.warning("3D FAZ: no interior avascular component, fell back to the centre-column component")
    if component.any():
        out[:, :, lo:hi] = dilate_ball(component, radius) & slab
    volume = float(out.sum()) * (res_plane / 1000.0) ** 3
    return FazRegion3D(out, volume, fallback)


# ------------------------------------------------------------------ pipeline


@dataclass
class PipelineResult:
    measurement: FazMeasurement
    prep: PreprocessedScan
    segmentations: dict[str, PlexusSegmentation]
    skeletons3d: dict[str, Skeleton3D]
    network: np.ndarray
    faz2d: dict[str, FazRegion2D]
    faz3d: FazRegion3D
    stage_seconds: dict[str, float] = field(default_factory=dict)


def run_pipeline(
    volume: OctaVolume,
    surfaces: SurfaceSet,
    enfaces,
    cfg: PipelineConfig | None = None,
    scan_id: str = "scan",
    group_label: str | None = None,
    keep_network: bool = True,
) -> PipelineResult:
    """Full per-scan pipeline. Any failure is re-raised as :class:`PipelineError`
    tagged with the stage name. A plexus whose vesselness map is constant
    aborts the scan."""
    cfg = cfg or PipelineConfig()
    timer = StageTimer()
    start = time.perf_counter()
    enface_by_plexus = {img.plexus: img for img in enfaces}
    missing = set(PLEXUSES) - set(enface_by_plexus)
    if missing:
        raise PipelineError("input", f"missing en face images for {sorted(missing)}")

    try:
        prep = preprocess_scan(volume, surfaces, cfg, timer)
    except ValueError as exc:
        raise PipelineError("preprocess", str(exc)) from exc
    vol = prep.volume
    dims = vol.dims
    bounds = {b.plexus: b for b in prep.bounds}

    segs, sk3d, nets = {}, {}, []
    for plexus in PLEXUSES:
        img = enface_by_plexus[plexus]
        if img.data.shape != dims[:2]:
            raise PipelineError("vessel2d", f"{plexus} en face dims {img.data.shape} != volume {dims[:2]}")
        try:
            with timer("vessel2d"):
                segs[plexus] = segment_plexus_2d(img, cfg, strict=True)
        except ValueError as exc:
            raise PipelineError(f"vessel2d:{plexus}", str(exc)) from exc
        with timer("locate_axial"):
            sk3d[plexus] = locate_axial(segs[plexus].skeleton, vol, bounds[plexus])
        with timer("inflate"):
            nets.append(inflate_network(sk3d[plexus], dims))
    with timer("inflate"):
        network = merge_networks(*nets)
        del nets

    faz2 = {}
    with timer("faz2d"):
        for plexus in PLEXUSES:
            faz2[plexus] = faz_2d(segs[plexus].mask, vol.res_plane, cfg)
    with timer("faz3d"):
        faz3 = faz_3d(network, prep.surfaces.ilm, prep.surfaces.opl, vol.res_plane, cfg)

    elapsed = time.perf_counter() - start
    diagnostics = {
        "dropped_points": {p: sk3d[p].dropped for p in PLEXUSES},
        "fallback_2d": {p: faz2[p].fallback for p in PLEXUSES},
        "fallback_3d": faz3.fallback,
    }
    meas = FazMeasurement(
        scan_id=scan_id,
        group_label=group_label,
        res_plane_um=float(volume.res_plane),
        area_svc_mm2=faz2["superficial"].area_mm2,
        area_icp_mm2=faz2["intermediate"].area_mm2,
        area_dcp_mm2=faz2["deep"].area_mm2,
        volume_mm3=faz3.volume_mm3,
        elapsed_seconds=elapsed,
        stage_seconds=dict(timer.seconds),
        diagnostics=diagnostics,
    )
    return PipelineResult(meas, prep, segs, sk3d, network if keep_network else None, faz2, faz3, dict(timer.seconds))


def measure(volume: OctaVolume, surfaces: SurfaceSet, enfaces, cfg: PipelineConfig | None = None, scan_id: str = "scan", group_label: str | None = None) -> FazMeasurement:
    """Run the whole pipeline on one scan and return its measurement record."""
    return run_pipeline(volume, surfaces, enfaces, cfg, scan_id, group_label, keep_network=False).measurement


__all__ = [
    "PipelineError",
    "FazRegion2D",
    "FazRegion3D",
    "select_component",
    "faz_2d",
    "faz_3d",
    "slab_mask",
    "PipelineResult",
    "run_pipeline",
    "measure",
]
