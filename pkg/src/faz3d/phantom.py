"""Synthetic OCTA scans with analytically known capillary geometry.

Geometry is specified in micrometres. Surfaces are tilted planes with an
optional foveal pit that pulls the ILM and IPL toward the OPL around the
frame centre. Each plexus holds a set of tubes (polylines in the (x, y)
plane) running at a fixed fractional depth inside its slab; tubes are
rasterized with the same Euclidean balls used by
:func:`faz3d.reconstruct3d.inflate_network`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from numba import njit

from .config import AXIAL_NATIVE_UM, PipelineConfig
from .preprocess import PlexusBounds, derive_plexus_bounds, resample_axial, resampled_depth
from .reconstruct3d import Skeleton3D, inflate_network
from .volume_io import PLEXUSES, EnFaceImage, OctaVolume, SurfaceSet


@dataclass
class Tube:
    path_um: list  # [(x_um, y_um), ...] polyline vertices
    radius_um: float


@dataclass
class PlexusNetwork:
    tubes: list = field(default_factory=list)
    depth_fraction: float = 0.5
    faz_radius_um: float = 0.0


@dataclass
class LayerSpec:
    """Far-field depths (um from the top of the scan) and surface shape."""

    ilm_um: float = 60.0
    ipl_um: float = 160.0
    opl_um: float = 240.0
    rpe_um: float = 330.0
    slope_x: float = 0.0
    slope_y: float = 0.0
    pit_fraction: float = 0.0
    pit_width_um: float = 250.0


@dataclass
class PhantomSpec:
    dims: tuple = (128, 128, 96)  # nx, ny, nz with nz on the native axial grid
    res_plane: float = AXIAL_NATIVE_UM
    layers: LayerSpec = field(default_factory=LayerSpec)
    plexuses: dict = field(default_factory=dict)  # plexus name -> PlexusNetwork
    vessel_intensity: float = 1.0
    background_intensity: float = 0.1
    noise_sigma: float = 0.0
    speckle: float = 0.0
    surface_spike_fraction: float = 0.0
    surface_spike_um: float = 40.0
    seed: int = 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PhantomSpec":
        data = dict(data)
        if "layers" in data:
            data["layers"] = LayerSpec(**data["layers"])
        plex = {}
        for name, net in (data.get("plexuses") or {}).items():
            if isinstance(net, PlexusNetwork):
                plex[name] = net
                continue
            net = dict(net)
            net["tubes"] = [Tube([tuple(p) for p in t["path_um"]], float(t["radius_um"])) for t in net.get("tubes", [])]
            plex[name] = PlexusNetwork(**net)
        data["plexuses"] = plex
        if "dims" in data:
            data["dims"] = tuple(int(n) for n in data["dims"])
        return cls(**data)


def load_phantom_spec(path) -> PhantomSpec:
    """Read a phantom spec file (JSON or YAML).

    Besides explicit ``plexuses``, a ``generator`` key selects a builder:
    ``{"generator": "rings", ...kwargs}`` or ``{"generator": "clinical", ...}``
    or ``{"generator": "random_tubes", ...}``.
    """
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    data = dict(data or {})
    generator = data.pop("generator", None)
    if generator is None:
        return PhantomSpec.from_dict(data)
    builders = {"rings": ring_phantom_spec, "clinical": clinical_phantom_spec, "random_tubes": random_tube_phantom_spec}
    if generator not in builders:
        raise ValueError(f"unknown phantom generator {generator!r}; choose from {sorted(builders)}")
    return builders[generator](**data)


@dataclass
class GroundTruth:
    centerlines: dict  # plexus -> Skeleton3D in isotropic, un-flattened voxels
    faz_area_mm2: dict  # plexus -> planted disk area
    faz_volume_mm3: float
    surfaces_iso: SurfaceSet
    bounds_iso: list
    vessel_mask_iso: np.ndarray | None
    ratio: float


# ------------------------------------------------------------------ surfaces


def _grid_um(nx: int, ny: int, res: float):
    x = (np.arange(nx) - (nx - 1) / 2.0) * res
    y = (np.arange(ny) - (ny - 1) / 2.0) * res
    return np.meshgrid(x, y, indexing="ij")


def layer_maps_um(layers: LayerSpec, nx: int, ny: int, res: float) -> dict:
    """Per-(x, y) depth in um of ilm/ipl/opl/rpe."""
    gx, gy = _grid_um(nx, ny, res)
    tilt = layers.slope_x * gx + layers.slope_y * gy
    opl = layers.opl_um + tilt
    pit = layers.pit_fraction * np.exp(-(gx**2 + gy**2) / (2.0 * layers.pit_width_um**2)) if layers.pit_fraction else 0.0
    ilm = layers.ilm_um + tilt
    ipl = layers.ipl_um + tilt
    return {
        "ilm": ilm + (opl - ilm) * pit,
        "ipl": ipl + (opl - ipl) * pit,
        "opl": opl,
        "rpe": layers.rpe_um + tilt,
    }


# ------------------------------------------------------------------ drawing


def rasterize_path(path_px: np.ndarray, step: float = 0.25) -> np.ndarray:
    """Integer pixels visited by a polyline sampled every ``step`` pixels, in order, de-duplicated."""
    path_px = np.asarray(path_px, dtype=np.float64)
    pieces = []
    for a, b in zip(path_px[:-1], path_px[1:]):
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / step)) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        pieces.append(a + t * (b - a))
    if not pieces:
        pieces.append(path_px[:1])
    pts = np.floor(np.concatenate(pieces) + 0.5).astype(np.int64)
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    pts = pts[keep]
    _, first = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(first)]


@njit(cache=True)
def _column_max(vol, lo, hi, out):
    nx, ny, _ = vol.shape
    for x in range(nx):
        for y in range(ny):
            best = 0.0
            found = False
            for z in range(lo[x, y], hi[x, y] + 1):
                v = vol[x, y, z]
                if not found or v > best:
                    best = v
                    found = True
            out[x, y] = best if found else 0.0


def max_projection(vol: OctaVolume, bounds: PlexusBounds) -> EnFaceImage:
    """Per-column maximum over integer ``z`` with ``upper <= z <= lower``; empty slab -> 0."""
    nz = vol.dims[2]
    lo = np.maximum(np.ceil(bounds.upper), 0).astype(np.int64)
    hi = np.minimum(np.floor(bounds.lower), nz - 1).astype(np.int64)
    out = np.zeros(vol.dims[:2], dtype=np.float32)
    _column_max(np.ascontiguousarray(vol.data, dtype=np.float32), lo, hi, out)
    return EnFaceImage(out, bounds.plexus)


def _resample_to_native(iso: np.ndarray, nz_native: int, ratio: float) -> np.ndarray:
    # native slice k sits at isotropic position k * ratio
    nzi = iso.shape[2]
    zs = np.minimum(np.arange(nz_native) * ratio, nzi - 1.0)
    i0 = np.floor(zs).astype(np.int64)
    i1 = np.minimum(i0 + 1, nzi - 1)
    w = (zs - i0).astype(np.float32)
    out = np.empty(iso.shape[:2] + (nz_native,), dtype=np.float32)
    for k in range(nz_native):
        out[:, :, k] = iso[:, :, i0[k]] * (1 - w[k]) + iso[:, :, i1[k]] * w[k]
    return out


# ---------------------------------------------------------------- generation


def _plexus_centerline(net: PlexusNetwork, bounds: PlexusBounds, res: float, dims_iso, plexus: str) -> Skeleton3D:
    nx, ny, _ = dims_iso
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    pts, radii = [], []
    for tube in net.tubes:
        path_px = np.asarray(tube.path_um, dtype=np.float64) / res + np.array([cx, cy])
        xy = rasterize_path(path_px)
        xy = xy[(xy[:, 0] >= 0) & (xy[:, 0] < nx) & (xy[:, 1] >= 0) & (xy[:, 1] < ny)]
        if len(xy) == 0:
            continue
        up = bounds.upper[xy[:, 0], xy[:, 1]]
        lo = bounds.lower[xy[:, 0], xy[:, 1]]
        z = np.floor(up + net.depth_fraction * (lo - up) + 0.5).astype(np.int64)
        if np.any(z <= up) or np.any(z >= lo):
            raise ValueError(f"{plexus} tube leaves its slab; adjust depth_fraction or geometry")
        if net.faz_radius_um > 0:
            rho = np.hypot(xy[:, 0] - cx, xy[:, 1] - cy) * res
            if np.any(rho <= net.faz_radius_um):
                raise ValueError(f"{plexus} tube enters the avascular zone")
        r_vox = max(1, int(math.floor(tube.radius_um / res + 0.5)))
        pts.append(np.column_stack([xy, z]))
        radii.append(np.full(len(xy), r_vox, dtype=np.int64))
    if not pts:
        return Skeleton3D(np.zeros((0, 3), np.int64), np.zeros(0, np.int64), plexus)
    return Skeleton3D(np.concatenate(pts), np.concatenate(radii), plexus)


def _faz_volume_mm3(spec: PhantomSpec, surf_iso: SurfaceSet, res: float) -> float:
    """Avascular column of the narrowest planted radius, clipped to [ilm, opl].

    When the plexuses share one radius this is exactly the union of the
    per-plexus disks stacked through their slabs.
    """
    radii = [net.faz_radius_um for net in spec.plexuses.values() if net.faz_radius_um > 0]
    if not radii:
        return 0.0
    nx, ny = surf_iso.ilm.shape
    gx, gy = _grid_um(nx, ny, res)
    inside = np.hypot(gx, gy) <= min(radii)
    total_vox = float((surf_iso.opl - surf_iso.ilm)[inside].sum())
    return total_vox * (res / 1000.0) ** 3


def validate_spec(spec: PhantomSpec):
    nx, ny, nz = spec.dims
    if min(nx, ny, nz) <= 0:
        raise ValueError("dims must be positive")
    if not spec.res_plane > 0:
        raise ValueError("res_plane must be > 0")
    L = spec.layers
    if not (0 <= L.ilm_um < L.ipl_um < L.opl_um < L.rpe_um):
        raise ValueError("layer depths must satisfy 0 <= ilm < ipl < opl < rpe")
    if L.rpe_um >= nz * AXIAL_NATIVE_UM:
        raise ValueError("RPE below the bottom of the scan")
    if not 0 <= L.pit_fraction < 1:
        raise ValueError("pit_fraction must be in [0, 1)")
    unknown = set(spec.plexuses) - set(PLEXUSES)
    if unknown:
        raise ValueError(f"unknown plexus names {sorted(unknown)}")
    for name, net in spec.plexuses.items():
        if not 0 < net.depth_fraction < 1:
            raise ValueError(f"{name}: depth_fraction must lie strictly inside (0, 1)")


def generate_phantom(spec: PhantomSpec, seed: int | None = None, keep_mask: bool = False):
    """Render a phantom scan.

    Returns ``(volume, surfaces, enfaces, truth)``: the native-grid volume
    (axial pitch 3.87 um) with noise, native-grid surfaces (possibly with
    planted spikes), max-projection en face images per plexus, and the
    :class:`GroundTruth` in isotropic voxels.
    """
    validate_spec(spec)
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    nx, ny, nz = spec.dims
    res = float(spec.res_plane)
    ratio = AXIAL_NATIVE_UM / res
    nzi = resampled_depth(nz, ratio)
    cfg = PipelineConfig()

    maps = layer_maps_um(spec.layers, nx, ny, res)
    surf_iso = SurfaceSet(**{k: np.clip(v / res, 0, nzi - 1) for k, v in maps.items()})
    bounds_iso = derive_plexus_bounds(surf_iso, res, cfg)

    centerlines = {}
    for b in bounds_iso:
        net = spec.plexuses.get(b.plexus, PlexusNetwork())
        centerlines[b.plexus] = _plexus_centerline(net, b, res, (nx, ny, nzi), b.plexus)
    vessels = np.zeros((nx, ny, nzi), dtype=bool)
    for sk in centerlines.values():
        vessels |= inflate_network(sk, (nx, ny, nzi))

    clean = np.full((nx, ny, nzi), spec.background_intensity, dtype=np.float32)
    clean[vessels] = spec.vessel_intensity
    native = clean if nzi == nz and ratio == 1.0 else _resample_to_native(clean, nz, ratio)
    del clean
    if spec.speckle > 0:
        native *= rng.uniform(1.0 - spec.speckle, 1.0 + spec.speckle, size=native.shape).astype(np.float32)
    if spec.noise_sigma > 0:
        native += rng.standard_normal(native.shape, dtype=np.float32) * np.float32(spec.noise_sigma)
    np.maximum(native, 0.0, out=native)
    volume = OctaVolume(native, res_plane=res, res_axial=AXIAL_NATIVE_UM)

    # en face images: max projection of the scan resampled to isotropic voxels
    iso_noisy = resample_axial(volume) if ratio != 1.0 else OctaVolume(native, res, res, True)
    enfaces = [max_projection(iso_noisy, b) for b in bounds_iso]
    del iso_noisy

    native_maps = {k: np.clip(v / AXIAL_NATIVE_UM, 0, nz - 1) for k, v in maps.items()}
    if spec.surface_spike_fraction > 0:
        for k in native_maps:
            hit = rng.random((nx, ny)) < spec.surface_spike_fraction
            sign = rng.choice([-1.0, 1.0], size=(nx, ny))
            native_maps[k] = np.clip(native_maps[k] + hit * sign * spec.surface_spike_um / AXIAL_NATIVE_UM, 0, nz - 1)
    surfaces = SurfaceSet(**{k: v.astype(np.float32) for k, v in native_maps.items()})

    truth = GroundTruth(
        centerlines=centerlines,
        faz_area_mm2={
            p: math.pi * (spec.plexuses[p].faz_radius_um / 1000.0) ** 2 if p in spec.plexuses else 0.0 for p in PLEXUSES
        },
        faz_volume_mm3=_faz_volume_mm3(spec, surf_iso, res),
        surfaces_iso=surf_iso,
        bounds_iso=bounds_iso,
        vessel_mask_iso=vessels if keep_mask else None,
        ratio=ratio,
    )
    return volume, surfaces, enfaces, truth


# ------------------------------------------------------------ network builders


def circle_path(radius_um: float, n: int | None = None, center=(0.0, 0.0), phase: float = 0.0) -> list:
    n = n or max(16, int(math.ceil(2 * math.pi * radius_um / 2.0)))
    t = phase + np.linspace(0.0, 2 * math.pi, n + 1)
    return [(center[0] + radius_um * math.cos(a), center[1] + radius_um * math.sin(a)) for a in t]


def ring_network(
    faz_radius_um: float,
    extent_um: float,
    ring_spacing_um: float,
    n_spokes: int,
    vessel_radius_um: float,
    phase: float = 0.0,
    ring_offset_um: float = 0.0,
    depth_fraction: float = 0.5,
) -> PlexusNetwork:
    """Concentric rings plus radial spokes around an avascular disk.

    The innermost ring's inner wall sits on ``faz_radius_um``; further rings
    follow every ``ring_spacing_um`` (shifted by ``ring_offset_um``) out to
    ``extent_um``; spokes run from the first ring outward.
    """
    first = faz_radius_um + vessel_radius_um
    tubes = [Tube(circle_path(first, phase=phase), vessel_radius_um)]
    r = first + ring_spacing_um + ring_offset_um
    while r <= extent_um:
        tubes.append(Tube(circle_path(r, phase=phase), vessel_radius_um))
        r += ring_spacing_um
    for k in range(n_spokes):
        a = phase + 2 * math.pi * k / n_spokes
        tubes.append(Tube([(first * math.cos(a), first * math.sin(a)), (extent_um * math.cos(a), extent_um * math.sin(a))], vessel_radius_um))
    return PlexusNetwork(tubes, depth_fraction, faz_radius_um)


def random_tubes(n: int, field_um: float, vessel_radius_um: float, rng: np.random.Generator, depth_fraction: float = 0.5) -> PlexusNetwork:
    """``n`` straight tubes crossing a square field of side ``field_um`` (centred)."""
    half = field_um / 2.0
    tubes = []
    for _ in range(n):
        angle = rng.uniform(0, math.pi)
        offset = rng.uniform(-0.7, 0.7) * half
        d = np.array([math.cos(angle), math.sin(angle)])
        nrm = np.array([-d[1], d[0]])
        a = offset * nrm - 1.5 * half * d
        b = offset * nrm + 1.5 * half * d
        tubes.append(Tube([tuple(a), tuple(b)], vessel_radius_um))
    return PlexusNetwork(tubes, depth_fraction, 0.0)


DEFAULT_DEPTHS = {"superficial": 0.5, "intermediate": 0.5, "deep": 0.4}


def ring_phantom_spec(
    nx: int = 256,
    ny: int = 256,
    nz: int = 128,
    res_plane: float = AXIAL_NATIVE_UM,
    faz_radius_um: float = 200.0,
    ring_spacing_um: float = 62.0,
    n_spokes: int = 16,
    vessel_radius_um: float = 7.74,
    noise_sigma: float = 0.2,
    speckle: float = 0.2,
    seed: int = 0,
    layers: dict | None = None,
) -> PhantomSpec:
    """Three ring-and-spoke plexuses sharing one avascular disk; the seed
    also rotates the spoke pattern."""
    extent = math.hypot(nx, ny) * res_plane / 2.0 + ring_spacing_um
    rotation = float(np.random.default_rng(seed).uniform(0.0, 2 * math.pi / n_spokes))
    plexuses = {}
    for i, plexus in enumerate(PLEXUSES):
        plexuses[plexus] = ring_network(
            faz_radius_um,
            extent,
            ring_spacing_um,
            n_spokes,
            vessel_radius_um,
            phase=rotation + i * math.pi / n_spokes / 1.5,
            ring_offset_um=i * ring_spacing_um / 3.0,
            depth_fraction=DEFAULT_DEPTHS[plexus],
        )
    return PhantomSpec(
        dims=(nx, ny, nz),
        res_plane=res_plane,
        layers=LayerSpec(**(layers or {})),
        plexuses=plexuses,
        noise_sigma=noise_sigma,
        speckle=speckle,
        seed=seed,
    )


def random_tube_phantom_spec(
    nx: int = 256,
    ny: int = 256,
    nz: int = 128,
    res_plane: float = AXIAL_NATIVE_UM,
    tubes_per_plexus: int = 10,
    vessel_radius_um: float = 7.74,
    noise_sigma: float = 0.0,
    speckle: float = 0.0,
    seed: int = 0,
    layers: dict | None = None,
) -> PhantomSpec:
    """Straight random tubes in every plexus, no avascular zone."""
    rng = np.random.default_rng(seed)
    field_um = min(nx, ny) * res_plane
    plexuses = {p: random_tubes(tubes_per_plexus, field_um, vessel_radius_um, rng, DEFAULT_DEPTHS[p]) for p in PLEXUSES}
    return PhantomSpec(
        dims=(nx, ny, nz),
        res_plane=res_plane,
        layers=LayerSpec(**(layers or {})),
        plexuses=plexuses,
        noise_sigma=noise_sigma,
        speckle=speckle,
        seed=seed,
    )


CLINICAL_FAZ_RADII_UM = {"superficial": 410.0, "intermediate": 262.0, "deep": 385.0}


def clinical_phantom_spec(seed: int = 0, nx: int = 512, ny: int = 512, nz: int = 496, res_plane: float = 5.7, noise_sigma: float = 0.2, speckle: float = 0.2, surface_spike_fraction: float = 0.002) -> PhantomSpec:
    """Scanner-sized phantom with a foveal pit and per-plexus FAZ radii whose
    disk areas sit near typical healthy values (about 0.53 / 0.22 / 0.47 mm^2)."""
    layers = LayerSpec(
        ilm_um=700.0,
        ipl_um=825.0,
        opl_um=928.0,
        rpe_um=1150.0,
        slope_x=0.02,
        slope_y=-0.01,
        pit_fraction=0.93,
        pit_width_um=250.0,
    )
    extent = math.hypot(nx, ny) * res_plane / 2.0 + 100.0
    plexuses = {}
    for i, plexus in enumerate(PLEXUSES):
        plexuses[plexus] = ring_network(
            CLINICAL_FAZ_RADII_UM[plexus],
            extent,
            ring_spacing_um=100.0,
            n_spokes=24,
            vessel_radius_um=11.4 if plexus == "superficial" else 5.7,
            phase=0.07 * i,
            ring_offset_um=30.0 * i,
            depth_fraction=DEFAULT_DEPTHS[plexus],
        )
    return PhantomSpec(
        dims=(nx, ny, nz),
        res_plane=res_plane,
        layers=layers,
        plexuses=plexuses,
        noise_sigma=noise_sigma,
        speckle=speckle,
        surface_spike_fraction=surface_spike_fraction,
        seed=seed,
    )
