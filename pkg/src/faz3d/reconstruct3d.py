"""Lift en face skeletons into the volume and inflate them into 3D networks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .morphology import ball_offsets
from .preprocess import PlexusBounds
from .vessel2d import Skeleton2D
from .volume_io import OctaVolume


@dataclass
class Skeleton3D:
    """Centerline voxels ``points`` (N, 3) as (x, y, z) with integer ``radius``."""

    points: np.ndarray
    radius: np.ndarray
    plexus: str = ""
    dropped: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        self.radius = np.asarray(self.radius, dtype=np.int64).reshape(-1)
        if len(self.points) != len(self.radius):
            raise ValueError("points and radius lengths differ")
        if np.any(self.radius < 1):
            raise ValueError("radii must be >= 1")

    def __len__(self):
        return len(self.points)


def slab_index_range(upper: np.ndarray, lower: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integer z strictly inside ``(upper, lower)``: ``z_lo <= z <= z_hi``."""
    z_lo = np.floor(upper).astype(np.int64) + 1
    z_hi = np.ceil(lower).astype(np.int64) - 1
    return z_lo, z_hi


def locate_axial(sk: Skeleton2D, vol: OctaVolume, bounds: PlexusBounds, chunk: int = 8192) -> Skeleton3D:
    """Depth of each skeleton point = argmax of its intensity column over the
    open slab interval; ties go to the smallest z.

    Points whose slab holds no integer z are dropped and counted.
    """
    nz = vol.dims[2]
    xs, ys = sk.points[:, 0], sk.points[:, 1]
    z_lo, z_hi = slab_index_range(bounds.upper[xs, ys], bounds.lower[xs, ys])
    z_lo = np.maximum(z_lo, 0)
    z_hi = np.minimum(z_hi, nz - 1)
    keep = z_lo <= z_hi
    depth = np.zeros(len(xs), dtype=np.int64)
    zz = np.arange(nz)
    idx = np.flatnonzero(keep)
    for start in range(0, len(idx), chunk):
        sel = idx[start : start + chunk]
        cols = vol.data[xs[sel], ys[sel], :]
        inside = (zz >= z_lo[sel, None]) & (zz <= z_hi[sel, None])
        cols = np.where(inside, cols, -np.inf)
        depth[sel] = np.argmax(cols, axis=1)
    points = np.column_stack([xs[keep], ys[keep], depth[keep]])
    dropped = int((~keep).sum())
    return Skeleton3D(points, sk.radius[keep], bounds.plexus, dropped, {"dropped_empty_slab": dropped})


def inflate_network(sk: Skeleton3D, dims) -> np.ndarray:
    """Union over radius bins ``n`` of the points with radius ``n`` dilated by ball(n).

    Balls are clipped at the volume faces.
    """
    dims = tuple(int(n) for n in dims)
    out = np.zeros(dims, dtype=bool)
    if len(sk) == 0:
        return out
    upper = np.array(dims) - 1
    for r in np.unique(sk.radius):
        pts = sk.points[sk.radius == r]
        off = ball_offsets(int(r), 3)
        # bounded memory per batch of points
        step = max(1, 4_000_000 // len(off))
        for start in range(0, len(pts), step):
            vox = (pts[start : start + step, None, :] + off[None, :, :]).reshape(-1, 3)
            ok = np.all((vox >= 0) & (vox <= upper), axis=1)
            vox = vox[ok]
            out[vox[:, 0], vox[:, 1], vox[:, 2]] = True
    return out


def merge_networks(*networks: np.ndarray) -> np.ndarray:
    """Voxelwise OR of equally-shaped networks."""
    if not networks:
        raise ValueError("nothing to merge")
    shape = networks[0].shape
    for net in networks[1:]:
        if net.shape != shape:
            raise ValueError(f"network dims differ: {net.shape} vs {shape}")
    out = np.zeros(shape, dtype=bool)
    for net in networks:
        out |= net
    return out
