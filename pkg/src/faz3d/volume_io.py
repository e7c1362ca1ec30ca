"""Scan container format and measurement CSV.

A scan container is a directory (or a ``.zip`` of one) holding

* ``meta``: JSON text with dims, voxel pitch, dtype, axis order and the
  SHA-256 of every grid file plus a digest of the header itself;
* ``volume.raw``: float32 little-endian, x fastest, then y (B-scan), then z;
* ``surface_<ilm|ipl|opl|rpe>.raw``: float32 nx*ny maps, x fastest;
* ``enface_<superficial|intermediate|deep>.raw``: float32 nx*ny images.

In memory every grid is indexed ``[x, y]`` or ``[x, y, z]`` in C order, so
axial columns are contiguous.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PLEXUSES = ("superficial", "intermediate", "deep")
SURFACE_NAMES = ("ilm", "ipl", "opl", "rpe")
AXIS_ORDER = "x-fast, y-bscan, z-axial"
FORMAT_NAME = "faz3d-scan"
FORMAT_VERSION = 1

MEASUREMENT_COLUMNS = (
    "scan_id",
    "group_label",
    "res_plane_um",
    "area_svc_mm2",
    "area_icp_mm2",
    "area_dcp_mm2",
    "volume_mm3",
    "elapsed_seconds",
)


class ScanFormatError(ValueError):
    """Raised for malformed, inconsistent or corrupt scan containers."""


@dataclass
class OctaVolume:
    data: np.ndarray
    res_plane: float
    res_axial: float
    isotropic: bool = False

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) <= 0:
            raise ValueError(f"volume must be a non-empty 3D grid, got shape {self.data.shape}")
        if self.isotropic and self.res_axial != self.res_plane:
            raise ValueError("isotropic volume must have res_axial == res_plane")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def check_values(self):
        if not np.isfinite(self.data).all():
            raise ValueError("volume contains non-finite values")
        if self.data.min() < 0:
            raise ValueError("volume contains negative intensities")


@dataclass
class SurfaceSet:
    """Axial height maps in fractional voxel units, z increasing toward the RPE."""

    ilm: np.ndarray
    ipl: np.ndarray
    opl: np.ndarray
    rpe: np.ndarray
    ipl_minus: np.ndarray | None = None
    ipl_plus: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.ilm.shape

    def base(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in SURFACE_NAMES}

    def replace(self, **maps) -> "SurfaceSet":
        current = self.base()
        current.update(ipl_minus=self.ipl_minus, ipl_plus=self.ipl_plus)
        current.update(maps)
        return SurfaceSet(**current)

    def check_order(self, tol: float = 1e-6) -> bool:
        chain = [self.ilm]
        if self.ipl_minus is not None:
            chain.append(self.ipl_minus)
        chain.append(self.ipl)
        if self.ipl_plus is not None:
            chain.append(self.ipl_plus)
        chain += [self.opl, self.rpe]
        return all(bool(np.all(a <= b + tol)) for a, b in zip(chain, chain[1:]))


@dataclass
class EnFaceImage:
    data: np.ndarray
    plexus: str

    def __post_init__(self):
        if self.plexus not in PLEXUSES:
            raise ValueError(f"unknown plexus {self.plexus!r}")
        if self.data.ndim != 2:
            raise ValueError("en face image must be 2D")


@dataclass
class FazMeasurement:
    scan_id: str
    area_svc_mm2: float
    area_icp_mm2: float
    area_dcp_mm2: float
    volume_mm3: float
    res_plane_um: float
    elapsed_seconds: float
    group_label: str | None = None
    stage_seconds: dict[str, float] = field(default_factory=dict)
    diagnostics: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("area_svc_mm2", "area_icp_mm2", "area_dcp_mm2", "volume_mm3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


# ---------------------------------------------------------------- raw grids


def _to_bytes(arr: np.ndarray) -> bytes:
    # C-ordered [x, y, ...] -> x fastest on disk == Fortran order
    return np.asarray(arr, dtype="<f4").tobytes(order="F")


def _from_bytes(buf: bytes, shape: tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    if len(buf) != expected:
        raise ScanFormatError(f"grid has {len(buf)} bytes, expected {expected} for shape {shape}")
    flat = np.frombuffer(buf, dtype="<f4")
    return np.ascontiguousarray(flat.reshape(shape, order="F"), dtype=np.float32)


def _header_digest(meta: dict) -> str:
    body = {k: v for k, v in meta.items() if k != "header_sha256"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()


def _grid_files(volume, surfaces, enfaces) -> dict[str, np.ndarray]:
    files = {"volume.raw": volume.data}
    for name, arr in surfaces.base().items():
        files[f"surface_{name}.raw"] = arr
    for img in enfaces:
        files[f"enface_{img.plexus}.raw"] = img.data
    return files


def save_scan(volume: OctaVolume, surfaces: SurfaceSet, enfaces, path) -> None:
    """Write a scan container; a ``.zip`` suffix writes an archive instead of a directory."""
    nx, ny, nz = volume.dims
    if surfaces.shape != (nx, ny):
        raise ScanFormatError(f"dim mismatch: surface dims {surfaces.shape} vs volume {(nx, ny)}")
    plexuses = [img.plexus for img in enfaces]
    if sorted(plexuses) != sorted(PLEXUSES):
        raise ValueError(f"need one en face image per plexus, got {plexuses}")
    for img in enfaces:
        if img.data.shape != (nx, ny):
            raise ScanFormatError(f"dim mismatch: en face {img.plexus} dims {img.data.shape} vs volume {(nx, ny)}")

    blobs = {name: _to_bytes(arr) for name, arr in _grid_files(volume, surfaces, enfaces).items()}
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dims": [nx, ny, nz],
        "res_plane_um": float(volume.res_plane),
        "res_axial_um": float(volume.res_axial),
        "isotropic": bool(volume.isotropic),
        "dtype": "float32-le",
        "axis_order": AXIS_ORDER,
        "files": {name: hashlib.sha256(buf).hexdigest() for name, buf in blobs.items()},
    }
    meta["header_sha256"] = _header_digest(meta)
    meta_text = json.dumps(meta, indent=2, sort_keys=True) + "\n"

    path = Path(path)
    if path.suffix == ".zip":
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            zf.writestr("meta", meta_text)
            for name, buf in blobs.items():
                zf.writestr(name, buf)
        return
    path.mkdir(parents=True, exist_ok=True)
    for name, buf in blobs.items():
        (path / name).write_bytes(buf)
    # meta last: a partially written container has no valid header
    (path / "meta").write_text(meta_text, encoding="utf-8")


class _DirReader:
    def __init__(self, root: Path):
        self.root = root

    def read(self, name: str) -> bytes:
        p = self.root / name
        if not p.is_file():
            raise FileNotFoundError(f"missing {p}")
        return p.read_bytes()

    def close(self):
        pass


class _ZipReader:
    def __init__(self, path: Path):
        self.zf = zipfile.ZipFile(path)

    def read(self, name: str) -> bytes:
        try:
            return self.zf.read(name)
        except KeyError:
            raise FileNotFoundError(f"missing {name} in archive") from None

    def close(self):
        self.zf.close()


def _parse_meta(raw: bytes) -> dict:
    try:
        meta = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ScanFormatError(f"corrupt header: {exc}") from None
    if not isinstance(meta, dict) or meta.get("header_sha256") != _header_digest(meta):
        raise ScanFormatError("corrupt header: digest mismatch")
    if meta.get("format") != FORMAT_NAME or meta.get("version") != FORMAT_VERSION:
        raise ScanFormatError("corrupt header: unknown format/version")
    if meta.get("axis_order") != AXIS_ORDER or meta.get("dtype") != "float32-le":
        raise ScanFormatError("corrupt header: unsupported layout")
    dims = meta.get("dims")
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(n, int) and n > 0 for n in dims)):
        raise ScanFormatError(f"corrupt header: bad dims {dims!r}")
    if not meta.get("res_plane_um", 0) > 0 or not meta.get("res_axial_um", 0) > 0:
        raise ScanFormatError("corrupt header: voxel pitch must be > 0")
    return meta


def load_scan(path, verify: bool = True):
    """Read a scan container.

    Returns ``(volume, surfaces, enfaces)`` with the en face images ordered
    superficial, intermediate, deep. Surfaces are clamped to ``[0, nz - 1]``.
    With ``verify`` each grid's SHA-256 is checked against the header.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no scan container at {path}")
    reader = _ZipReader(path) if path.is_file() else _DirReader(path)
    try:
        meta = _parse_meta(reader.read("meta"))
        nx, ny, nz = meta["dims"]
        grids = {}
        for name, digest in meta["files"].items():
            buf = reader.read(name)
            if verify and hashlib.sha256(buf).hexdigest() != digest:
                raise ScanFormatError(f"checksum mismatch in {name}")
            if name == "volume.raw":
                grids[name] = _from_bytes(buf, (nx, ny, nz))
            else:
                if len(buf) != nx * ny * 4:
                    raise ScanFormatError(f"dim mismatch: {name} is not {nx}x{ny}")
                grids[name] = _from_bytes(buf, (nx, ny))
    finally:
        reader.close()

    required = ["volume.raw"] + [f"surface_{s}.raw" for s in SURFACE_NAMES] + [f"enface_{p}.raw" for p in PLEXUSES]
    missing = [name for name in required if name not in grids]
    if missing:
        raise ScanFormatError(f"container lacks {missing}")

    for name, arr in grids.items():
        if not np.isfinite(arr).all():
            raise ScanFormatError(f"non-finite values in {name}")
    volume = OctaVolume(
        grids["volume.raw"],
        res_plane=meta["res_plane_um"],
        res_axial=meta["res_axial_um"],
        isotropic=meta.get("isotropic", False),
    )
    if volume.data.min() < 0:
        raise ScanFormatError("negative intensities in volume.raw")
    surfaces = SurfaceSet(**{s: np.clip(grids[f"surface_{s}.raw"], 0, nz - 1) for s in SURFACE_NAMES})
    enfaces = [EnFaceImage(grids[f"enface_{p}.raw"], p) for p in PLEXUSES]
    return volume, surfaces, enfaces


# ------------------------------------------------------------- measurements


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{value:.6f}"
    return str(value)


def measurement_row(rec: FazMeasurement, with_timing: bool = True) -> list[str]:
    return [
        rec.scan_id,
        rec.group_label or "",
        _fmt(rec.res_plane_um),
        _fmt(rec.area_svc_mm2),
        _fmt(rec.area_icp_mm2),
        _fmt(rec.area_dcp_mm2),
        _fmt(rec.volume_mm3),
        _fmt(float(rec.elapsed_seconds)) if with_timing else "",
    ]


def write_measurements(records, path, with_timing: bool = True) -> None:
    """One CSV row per record in input order.

    ``with_timing=False`` leaves ``elapsed_seconds`` blank so that reruns
    produce byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MEASUREMENT_COLUMNS)
    for rec in records:
        writer.writerow(measurement_row(rec, with_timing))
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_measurements(path) -> list[FazMeasurement]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames[: len(MEASUREMENT_COLUMNS)]) != MEASUREMENT_COLUMNS:
            raise ValueError(f"{path} does not have the measurement columns {MEASUREMENT_COLUMNS}")
        out = []
        for row in reader:
            elapsed = row["elapsed_seconds"]
            out.append(
                FazMeasurement(
                    scan_id=row["scan_id"],
                    group_label=row["group_label"] or None,
                    res_plane_um=float(row["res_plane_um"]),
                    area_svc_mm2=float(row["area_svc_mm2"]),
                    area_icp_mm2=float(row["area_icp_mm2"]),
                    area_dcp_mm2=float(row["area_dcp_mm2"]),
                    volume_mm3=float(row["volume_mm3"]),
                    elapsed_seconds=float(elapsed) if elapsed else float("nan"),
                )
            )
    return out


def write_points_csv(points: np.ndarray, radius: np.ndarray, path, columns=("x", "y", "z", "radius")) -> None:
    """Point list export for external 3D viewers."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([np.asarray(points, dtype=np.int64), np.asarray(radius, dtype=np.int64)])
    np.savetxt(path, table, fmt="%d", delimiter=",", header=",".join(columns), comments="")


def write_raw(arr: np.ndarray, path) -> None:
    """Dump a grid as raw bytes, x fastest (uint8 for masks, float32 otherwise)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(arr)
    dtype = np.uint8 if arr.dtype == bool else "<f4"
    with open(path, "wb") as fh:
        fh.write(np.asarray(arr, dtype=dtype).tobytes(order="F"))
    shape_note = "x".join(str(n) for n in arr.shape)
    (path.parent / (path.name + ".txt")).write_text(
        f"shape {shape_note}\ndtype {np.dtype(dtype).name}\norder x-fast\n", encoding="utf-8"
    )


__all__ = [
    "PLEXUSES",
    "SURFACE_NAMES",
    "MEASUREMENT_COLUMNS",
    "ScanFormatError",
    "OctaVolume",
    "SurfaceSet",
    "EnFaceImage",
    "FazMeasurement",
    "save_scan",
    "load_scan",
    "write_measurements",
    "read_measurements",
    "write_points_csv",
    "write_raw",
]
