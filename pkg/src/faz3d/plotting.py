"""PNG renders for batch reports: FAZ overlays, 3D FAZ point cloud, timing bars."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .volume_io import PLEXUSES  # noqa: E402

_LABELS = {"superficial": "SVC", "intermediate": "ICP", "deep": "DCP"}


def plot_faz_overlays(result, path) -> Path:
    """Vesselness image of each plexus with its 2D FAZ contour."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 3, figsize=(12, 4.2))
    for ax, plexus in zip(axes, PLEXUSES):
        seg = result.segmentations[plexus]
        faz = result.faz2d[plexus]
        # arrays are [x, y]; show y down, x across
        ax.imshow(seg.enhanced.T, cmap="gray", origin="upper")
        if faz.mask.any():
            ax.contour(faz.mask.T.astype(float), levels=[0.5], colors="tab:red", linewidths=1.2)
        ax.set_title(f"{_LABELS[plexus]}  {faz.area_mm2:.3f} mm$^2$")
        ax.set_axis_off()
    fig.suptitle(result.measurement.scan_id)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_faz_cloud(result, path, max_points: int = 20000) -> Path:
    """3D FAZ boundary voxels as a point cloud, depth axis pointing down."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mask = result.faz3d.mask
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    if mask.any():
        inner = mask.copy()
        inner[1:-1, 1:-1, 1:-1] &= (
            mask[:-2, 1:-1, 1:-1] & mask[2:, 1:-1, 1:-1] & mask[1:-1, :-2, 1:-1]
            & mask[1:-1, 2:, 1:-1] & mask[1:-1, 1:-1, :-2] & mask[1:-1, 1:-1, 2:]
        )
        pts = np.argwhere(mask & ~inner)
        if len(pts) > max_points:
            pts = pts[:: int(np.ceil(len(pts) / max_points))]
        ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], c=pts[:, 2], s=1, cmap="viridis")
        ax.invert_zaxis()
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_zlabel("z")
    ax.set_title(f"{result.measurement.scan_id}  {result.faz3d.volume_mm3:.4f} mm$^3$")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_scan_figures(result, out_dir) -> list:
    out_dir = Path(out_dir)
    return [plot_faz_overlays(result, out_dir / "faz_overlay.png"), plot_faz_cloud(result, out_dir / "faz3d_cloud.png")]


def plot_stage_timing(report, path) -> Path:
    """Horizontal bars of mean seconds per stage."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(report.stages)
    fig, ax = plt.subplots(figsize=(6, 0.4 * max(len(names), 1) + 1.2))
    ax.barh(names, [report.stages[n] for n in names], color="tab:blue")
    ax.invert_yaxis()
    ax.set_xlabel("mean seconds per scan")
    ax.set_title(f"mean total {report.mean:.1f} s over {report.n} scan(s)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
