"""Command-line front end: ``faz3d {measure,phantom,summarize,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import CONFIG_ENV_VAR, load_config

log = logging.getLogger("faz3d")

PRESETS = ("rings", "clinical", "random_tubes")


def _phantom_spec(spec_path, preset):
    from . import phantom

    if spec_path:
        return phantom.load_phantom_spec(spec_path)
    builders = {
        "rings": phantom.ring_phantom_spec,
        "clinical": phantom.clinical_phantom_spec,
        "random_tubes": phantom.random_tube_phantom_spec,
    }
    return builders[preset or "rings"]()


def cmd_measure(args) -> int:
    from .batch import RunManifest, read_manifest, report_timing, run_batch

    cfg = load_config(args.config)
    entries = read_manifest(args.manifest)
    manifest = RunManifest(
        entries,
        cfg,
        Path(args.out),
        dump_stages=args.dump_stages,
        overlays=args.overlays,
        threads=args.threads,
        deterministic=args.deterministic,
    )
    try:
        result = run_batch(manifest)
    except RuntimeError as exc:
        log.error("%s", exc)
        return 2
    print(f"{len(result.measurements)} measured, {len(result.failures)} failed -> {manifest.out_dir / 'measurements.csv'}")
    for f in result.failures:
        print(f"FAILED {f.scan_id} [{f.stage}] {f.message}")
    if not args.deterministic:
        report = report_timing(result.measurements)
        print(report.format())
        if args.overlays and report.n:
            from .plotting import plot_stage_timing

            plot_stage_timing(report, manifest.out_dir / "timing.png")
    return result.exit_code


def cmd_phantom(args) -> int:
    from .phantom import generate_phantom
    from .volume_io import save_scan

    spec = _phantom_spec(args.spec, args.preset)
    volume, surfaces, enfaces, truth = generate_phantom(spec, seed=args.seed)
    save_scan(volume, surfaces, enfaces, args.out)
    truth_path = Path(str(args.out).removesuffix(".zip") + ".truth.json") if str(args.out).endswith(".zip") else Path(args.out) / "truth.json"
    truth_path.write_text(
        json.dumps(
            {
                "seed": args.seed if args.seed is not None else spec.seed,
                "faz_area_mm2": truth.faz_area_mm2,
                "faz_volume_mm3": truth.faz_volume_mm3,
                "centerline_points": {p: len(sk) for p, sk in truth.centerlines.items()},
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"wrote {args.out} dims {volume.dims}")
    return 0


def cmd_summarize(args) -> int:
    from .batch import format_summary, summarize_groups, write_summary
    from .volume_io import read_measurements

    rows = summarize_groups(read_measurements(args.csv))
    print(format_summary(rows))
    if args.out:
        write_summary(rows, args.out)
    return 0


def cmd_bench(args) -> int:
    from .batch import report_timing
    from .faz import measure
    from .phantom import generate_phantom

    cfg = load_config(args.config)
    spec = _phantom_spec(args.spec, args.preset)
    volume, surfaces, enfaces, _ = generate_phantom(spec)
    print(f"phantom dims {volume.dims}, res_plane {volume.res_plane} um")
    runs = [measure(volume, surfaces, enfaces, cfg, scan_id=f"bench{i}") for i in range(args.repeat)]
    report = report_timing(runs)
    print(report.format())
    if args.plot:
        from .plotting import plot_stage_timing

        plot_stage_timing(report, args.plot)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="faz3d", description="3D foveal avascular zone measurement for OCTA volumes.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("measure", help="run the pipeline over a manifest of scans")
    m.add_argument("--manifest", required=True, help="CSV with scan_path, scan_id, group_label")
    m.add_argument("--config", help=f"pipeline config (JSON/YAML); default from ${CONFIG_ENV_VAR}")
    m.add_argument("--out", required=True, help="output folder")
    m.add_argument("--dump-stages", action="store_true", help="write intermediate grids and skeleton point lists")
    m.add_argument("--overlays", action="store_true", help="render FAZ overlay, 3D cloud and timing PNGs")
    m.add_argument("--threads", type=int, default=1, help="scans processed in parallel")
    m.add_argument("--deterministic", action="store_true", help="leave elapsed_seconds blank so reruns are byte-identical")
    m.set_defaults(func=cmd_measure)

    ph = sub.add_parser("phantom", help="write a synthetic scan container")
    ph.add_argument("--spec", help="phantom spec file (JSON/YAML)")
    ph.add_argument("--preset", choices=PRESETS, help="built-in spec used when --spec is absent (default rings)")
    ph.add_argument("--seed", type=int, default=None)
    ph.add_argument("--out", required=True, help="container folder or .zip path")
    ph.set_defaults(func=cmd_phantom)

    s = sub.add_parser("summarize", help="group statistics of a measurement CSV")
    s.add_argument("--csv", required=True)
    s.add_argument("--out", help="optional summary CSV")
    s.set_defaults(func=cmd_summarize)

    b = sub.add_parser("bench", help="time the pipeline on a phantom")
    b.add_argument("--spec", help="phantom spec file (JSON/YAML)")
    b.add_argument("--preset", choices=PRESETS, help="built-in spec used when --spec is absent (default rings)")
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--config", help="pipeline config (JSON/YAML)")
    b.add_argument("--plot", help="optional PNG of per-stage timings")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
