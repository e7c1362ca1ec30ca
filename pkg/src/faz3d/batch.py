"""Batch runs over scan manifests, group summaries and timing reports."""

from __future__ import annotations

import csv
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .faz import PipelineError, run_pipeline
from .volume_io import PLEXUSES, FazMeasurement, load_scan, write_measurements, write_points_csv, write_raw

log = logging.getLogger(__name__)

GROUP_ORDER = ("healthy", "diabetes_no_dr", "diabetes_dr")
UNLABELED = "unlabeled"
METRICS = ("area_svc_mm2", "area_icp_mm2", "area_dcp_mm2", "volume_mm3")
# published per-volume runtime, printed next to ours for scale
REFERENCE_TIMING = "paper: 38.7 (2.6) s"


@dataclass(frozen=True)
class ManifestEntry:
    scan_path: Path
    scan_id: str
    group_label: str | None = None


@dataclass
class RunManifest:
    entries: list
    config: PipelineConfig = field(default_factory=PipelineConfig)
    out_dir: Path = Path("out")
    dump_stages: bool = False
    overlays: bool = False
    threads: int = 1
    deterministic: bool = False

    def __post_init__(self):
        ids = [e.scan_id for e in self.entries]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValueError(f"duplicate scan_id(s) in manifest: {dup}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        self.out_dir = Path(self.out_dir)


def read_manifest(path) -> list[ManifestEntry]:
    """CSV with columns ``scan_path, scan_id[, group_label]``; relative paths
    resolve against the manifest's folder."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"scan_path", "scan_id"} <= set(reader.fieldnames):
                raise ValueError("manifest needs 'scan_path' and 'scan_id' columns")
            rows = list(reader)
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ValueError(f"unreadable manifest {path}: {exc}") from exc
    entries = []
    for row in rows:
        scan = Path(row["scan_path"].strip())
        if not scan.is_absolute():
            scan = path.parent / scan
        label = (row.get("group_label") or "").strip() or None
        entries.append(ManifestEntry(scan, row["scan_id"].strip(), label))
    return entries


def write_manifest(entries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scan_path", "scan_id", "group_label"])
        for e in entries:
            w.writerow([str(e.scan_path), e.scan_id, e.group_label or ""])


@dataclass
class ScanFailure:
    scan_id: str
    stage: str
    message: str


@dataclass
class BatchResult:
    measurements: list
    failures: list

    @property
    def exit_code(self) -> int:
        return 0 if not self.failures else 1


def _dump_stages(result, scan_dir: Path):
    prep = result.prep
    write_raw(prep.volume.data, scan_dir / "volume_flat_smoothed.raw")
    for plexus in PLEXUSES:
        seg = result.segmentations[plexus]
        write_raw(seg.enhanced, scan_dir / f"{plexus}_vesselness.raw")
        write_raw(seg.mask, scan_dir / f"{plexus}_mask.raw")
        write_raw(seg.skeleton_mask, scan_dir / f"{plexus}_skeleton.raw")
        write_raw(seg.distance.astype(np.float32), scan_dir / f"{plexus}_distance.raw")
        sk = result.skeletons3d[plexus]
        write_points_csv(sk.points, sk.radius, scan_dir / f"{plexus}_skeleton3d.csv")
        write_raw(result.faz2d[plexus].mask, scan_dir / f"{plexus}_faz2d.raw")
    if result.network is not None:
        write_raw(result.network, scan_dir / "network.raw")
    write_raw(result.faz3d.mask, scan_dir / "faz3d.raw")


def process_scan(entry: ManifestEntry, cfg: PipelineConfig, out_dir: Path, dump_stages: bool = False, overlays: bool = False):
    """Measure one scan; returns a FazMeasurement or a ScanFailure, never raises."""
    try:
        try:
            volume, surfaces, enfaces = load_scan(entry.scan_path)
        except (OSError, ValueError) as exc:
            raise PipelineError("load", str(exc)) from exc
        keep = dump_stages or overlays
        result = run_pipeline(volume, surfaces, enfaces, cfg, entry.scan_id, entry.group_label, keep_network=keep)
        scan_dir = Path(out_dir) / "scans" / entry.scan_id
        if dump_stages:
            _dump_stages(result, scan_dir)
        if overlays:
            from .plotting import render_scan_figures

            render_scan_figures(result, scan_dir)
        return result.measurement
    except PipelineError as exc:
        log.error("scan %s failed: %s", entry.scan_id, exc)
        return ScanFailure(entry.scan_id, exc.stage, exc.detail)
    except Exception as exc:  # a single bad scan must not abort the batch
        log.exception("scan %s failed unexpectedly", entry.scan_id)
        return ScanFailure(entry.scan_id, "unexpected", f"{type(exc).__name__}: {exc}")


def _worker(args):
    return process_scan(*args)


def run_batch(manifest: RunManifest) -> BatchResult:
    """Measure every scan of ``manifest`` and write ``measurements.csv`` (plus
    ``failures.csv`` and ``timing.csv`` when relevant) into its output folder.

    Scans run in a process pool when ``threads > 1``; results are gathered in
    manifest order so the output does not depend on the pool size.
    """
    out = manifest.out_dir
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(e, manifest.config, out, manifest.dump_stages, manifest.overlays) for e in manifest.entries]
    if manifest.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(manifest.threads, len(jobs))) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]

    measurements = [r for r in results if isinstance(r, FazMeasurement)]
    failures = [r for r in results if isinstance(r, ScanFailure)]
    write_measurements(measurements, out / "measurements.csv", with_timing=not manifest.deterministic)
    failure_path = out / "failures.csv"
    if failures:
        with open(failure_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scan_id", "stage", "message"])
            for f in failures:
                w.writerow([f.scan_id, f.stage, f.message])
    elif failure_path.exists():
        failure_path.unlink()
    if not manifest.deterministic and measurements:
        write_stage_timing(measurements, out / "timing.csv")
    if manifest.entries and not measurements:
        raise RuntimeError(f"all {len(failures)} scans failed")
    return BatchResult(measurements, failures)


def write_stage_timing(measurements, path) -> None:
    stages = sorted({s for m in measurements for s in m.stage_seconds})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scan_id", "elapsed_seconds", *stages])
        for m in measurements:
            w.writerow([m.scan_id, f"{m.elapsed_seconds:.6f}", *(f"{m.stage_seconds.get(s, 0.0):.6f}" for s in stages)])


# ------------------------------------------------------------------ summaries


def _describe(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "n": n,
        "mean": float(v.mean()),
        "sd": float(v.std(ddof=1)) if n > 1 else float("nan"),
        "median": float(med),
        "iqr": float(q3 - q1),
    }


def summarize_groups(measurements) -> list[dict]:
    """Descriptive statistics per group label and metric.

    Known groups come first in their canonical order, then any other labels
    alphabetically, then records without a label under ``"unlabeled"``.
    """
    measurements = list(measurements)
    if not measurements:
        raise ValueError("no measurements to summarize")
    groups: dict[str, list] = {}
    for m in measurements:
        groups.setdefault(m.group_label or UNLABELED, []).append(m)
    others = sorted(g for g in groups if g not in GROUP_ORDER and g != UNLABELED)
    order = [g for g in GROUP_ORDER if g in groups] + others + ([UNLABELED] if UNLABELED in groups else [])
    rows = []
    for g in order:
        row = {"group": g, "n": len(groups[g])}
        for metric in METRICS:
            stats = _describe([getattr(m, metric) for m in groups[g]])
            for key in ("mean", "sd", "median", "iqr"):
                row[f"{metric}_{key}"] = stats[key]
        rows.append(row)
    return rows


def summary_columns() -> list[str]:
    return ["group", "n"] + [f"{m}_{k}" for m in METRICS for k in ("mean", "sd", "median", "iqr")]


def write_summary(rows, path) -> None:
    cols = summary_columns()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if c in ("group", "n") else f"{r[c]:.6f}" for c in cols])


def format_summary(rows) -> str:
    lines = []
    for r in rows:
        lines.append(f"{r['group']} (N={r['n']})")
        for metric in METRICS:
            lines.append(
                f"  {metric:<14} mean {r[metric + '_mean']:.4f}  SD {r[metric + '_sd']:.4f}  "
                f"median {r[metric + '_median']:.4f}  IQR {r[metric + '_iqr']:.4f}"
            )
    return "\n".join(lines)


# --------------------------------------------------------------------- timing


@dataclass
class TimingReport:
    n: int = 0
    mean: float = float("nan")
    sd: float = float("nan")
    min: float = float("nan")
    max: float = float("nan")
    stages: dict = field(default_factory=dict)  # stage -> mean seconds
    reference: str = REFERENCE_TIMING

    def format(self) -> str:
        if self.n == 0:
            return f"no timed scans ({self.reference})"
        sd = "n/a" if math.isnan(self.sd) else f"{self.sd:.1f}"
        lines = [
            f"scans: {self.n}",
            f"elapsed: mean {self.mean:.1f} ({sd}) s, min {self.min:.1f} s, max {self.max:.1f} s",
            self.reference,
        ]
        if self.stages:
            lines.append("per-stage mean seconds:")
            lines.extend(f"  {name:<14} {sec:8.3f}" for name, sec in self.stages.items())
        return "\n".join(lines)


def report_timing(measurements) -> TimingReport:
    times = [m.elapsed_seconds for m in measurements if m.elapsed_seconds is not None and not math.isnan(m.elapsed_seconds)]
    if not times:
        return TimingReport()
    stages: dict[str, list] = {}
    for m in measurements:
        for name, sec in (m.stage_seconds or {}).items():
            stages.setdefault(name, []).append(sec)
    return TimingReport(
        n=len(times),
        mean=statistics.fmean(times),
        sd=statistics.stdev(times) if len(times) > 1 else float("nan"),
        min=min(times),
        max=max(times),
        stages={k: statistics.fmean(v) for k, v in stages.items()},
    )
