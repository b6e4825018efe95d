import argparse
import csv
import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

import numpy as np

from risk_terrain.config import LoggingConfig, ScenarioFile, load_scenario
from risk_terrain.errors import ConfigError, RiskTerrainError
from risk_terrain.grid import GroundClass
from risk_terrain.hazard import REGULATORY_CEILING_M
from risk_terrain.impact import ImpactKernel, build_kernel
from risk_terrain.oracle import compare_kernel
from risk_terrain.terrain import (
    ClearanceField,
    NoFlyTerrain,
    RiskVolume,
    ScenarioConfig,
    clearance_status_label,
    clearance_summary,
    cumulative_risk_volume,
    export_terrain_mesh,
    fuse_terrains,
    load_acoustic_terrain,
    min_clearance,
    threshold_terrain,
)

logger = logging.getLogger("risk_terrain.main")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_IO = 3

_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def _setup_logging() -> None:
    root = logging.getLogger("risk_terrain")
    root.setLevel(logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    ch = logging.StreamHandler()
    ch.setFormatter(logging.Formatter(_FORMAT))
    root.addHandler(ch)


def _add_file_log(log: LoggingConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    fh = RotatingFileHandler(out_dir / log.file, maxBytes=log.max_bytes, backupCount=log.backup_count)
    fh.setFormatter(logging.Formatter(_FORMAT))
    logging.getLogger("risk_terrain").addHandler(fh)


def _threads(args) -> int:
    if args.threads is not None:
        threads = args.threads
    else:
        raw = os.environ.get("RISK_TERRAIN_THREADS", "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f"RISK_TERRAIN_THREADS: expected an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigError(f"threads: must be >= 1, got {threads}")
    return threads


def _tag(value: float) -> str:
    return f"{value:g}"


# --- clearance CSV -----------------------------------------------------------


def write_clearance_csv(path: Path, clearance: ClearanceField, classes: np.ndarray, scenario_hash: str, threshold) -> None:
    xs = clearance.spec.centers(0)
    ys = clearance.spec.centers(1)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        f.write(f"# scenario_sha256 {scenario_hash}\n")
        f.write(f"# threshold {threshold}\n")
        f.write(f"# airspace_ceiling_m {clearance.ceiling_m:g}\n")
        f.write(f"# regulatory_ceiling_m {REGULATORY_CEILING_M:g}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x_m", "y_m", "ground_class", "clearance_m", "status"])
        for iy, y in enumerate(ys):
            for ix, x in enumerate(xs):
                value = clearance.values[iy, ix]
                status = int(clearance.status[iy, ix])
                writer.writerow([
                    f"{x:.1f}",
                    f"{y:.1f}",
                    GroundClass(int(classes[iy, ix])).name.lower(),
                    "" if np.isnan(value) else f"{value:.1f}",
                    clearance_status_label(value, status),
                ])
    logger.info("Wrote clearance report %s", path)


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    logger.info("Wrote %s", path)


# --- kernel ------------------------------------------------------------------


def _load_or_build_kernel(sf: ScenarioFile, args, threads: int) -> ImpactKernel:
    if getattr(args, "kernel", None):
        return ImpactKernel.load(args.kernel)
    cache = sf.output.kernel_cache
    if cache is not None and cache.exists():
        kernel = ImpactKernel.load(cache)
        if kernel.header() == sf.base.kernel_header():
            logger.info("Using cached kernel %s", cache)
            return kernel
        logger.warning("Cached kernel %s does not match the scenario; rebuilding", cache)
    kernel = sf.base.build_kernel(threads)
    if cache is not None:
        kernel.save(cache, meta={"scenario_sha256": sf.scenario_hash})
    return kernel


def cmd_kernel_build(args) -> int:
    sf = load_scenario(args.scenario)
    out = Path(args.out) if args.out else (sf.output.kernel_cache or sf.output.dir / "kernel.vrtg")
    _add_file_log(sf.logging, out.parent)
    kernel = sf.base.build_kernel(_threads(args))
    sha = kernel.save(out, meta={"scenario_sha256": sf.scenario_hash})
    print(sha)
    return EXIT_OK


# --- terrain -----------------------------------------------------------------


def _nested(terrains: list[NoFlyTerrain]) -> bool:
    """Terrains at decreasing thresholds must exclude ever larger voxel sets."""
    return all(np.all(a.excluded <= b.excluded) for a, b in zip(terrains, terrains[1:]))


def _run_variant(cfg: ScenarioConfig, kernel: ImpactKernel, out_dir: Path, threads: int, mesh: bool) -> list[dict] | None:
    volume = cumulative_risk_volume(cfg, kernel, threads)
    terrains = [threshold_terrain(volume, t) for t in cfg.thresholds]
    if not _nested(terrains):
        logger.error("Terrains of %s are not nested across thresholds %s", cfg.label, list(cfg.thresholds))
        return None

    volume.save(out_dir / f"volume_{cfg.label}.vrtg")
    runs = []
    for terrain in terrains:
        stem = f"{cfg.label}_{_tag(terrain.threshold)}"
        terrain.save(out_dir / f"terrain_{stem}.vrtg")
        clearance = min_clearance(terrain)
        write_clearance_csv(out_dir / f"clearance_{stem}.csv", clearance, volume.classes, cfg.scenario_hash, terrain.threshold)
        if mesh:
            (out_dir / f"terrain_{stem}.obj").write_text(export_terrain_mesh(terrain))
        summary = clearance_summary(clearance, volume.classes)
        logger.info(
            "%s threshold %g: %d voxels excluded, pedestrian median %s m, vehicle median %s m",
            cfg.label, terrain.threshold, terrain.count,
            summary["pedestrian"].get("median_m"), summary["vehicle"].get("median_m"),
        )
        runs.append({
            "label": cfg.label,
            "time_label": cfg.time_label,
            "lambda_per_hour": cfg.hazard.failure.lambda_per_hour,
            "threshold": terrain.threshold,
            "excluded_voxels": terrain.count,
            "max_risk": volume.free_max,
            "clearance": summary,
        })
    return runs


def comparison_report(results: list[tuple[str, str, list[dict]]]) -> dict:
    """Per-class clearance summaries of every scenario, with signed differences against the first one."""
    base_label, _, base_runs = results[0]

    def key(run: dict) -> tuple:
        return run["time_label"], run["lambda_per_hour"], run["threshold"]

    base_index = {key(run): run for run in base_runs}
    report = {"reference": base_label, "scenarios": []}
    for label, digest, runs in results:
        entries = []
        for run in runs:
            entry = {k: run[k] for k in ("time_label", "lambda_per_hour", "threshold", "clearance")}
            base = base_index.get(key(run))
            if base is not None:
                diff = {}
                for cls, stats in run["clearance"].items():
                    ref = base["clearance"].get(cls, {})
                    diff[cls] = {
                        stat: stats[stat] - ref[stat]
                        for stat in ("min_m", "median_m", "max_m")
                        if stat in stats and stat in ref
                    }
                entry["difference_m"] = diff
            entries.append(entry)
        report["scenarios"].append({"label": label, "scenario_sha256": digest, "runs": entries})
    return report


def cmd_terrain_build(args) -> int:
    threads = _threads(args)
    scenarios = [load_scenario(path) for path in args.scenario]
    labels = [sf.label for sf in scenarios]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"label: scenarios must have distinct labels, got {', '.join(labels)}")

    results = []
    for sf in scenarios:
        if args.out:
            out_dir = Path(args.out) / sf.label if len(scenarios) > 1 else Path(args.out)
        else:
            out_dir = sf.output.dir
        _add_file_log(sf.logging, out_dir)
        kernel = _load_or_build_kernel(sf, args, threads)
        runs = []
        for cfg in sf.variants():
            variant_runs = _run_variant(cfg, kernel, out_dir, threads, args.mesh or sf.output.mesh)
            if variant_runs is None:
                return EXIT_FAIL
            runs.extend(variant_runs)
        _write_json(out_dir / "summary.json", {"label": sf.label, "scenario_sha256": sf.scenario_hash, "runs": runs})
        results.append((sf.label, sf.scenario_hash, runs))

    if len(results) > 1:
        report_dir = Path(args.out) if args.out else scenarios[0].output.dir
        _write_json(report_dir / "comparison.json", comparison_report(results))
    return EXIT_OK


# --- clearance / fuse / export ----------------------------------------------


def cmd_clearance(args) -> int:
    thresholds = sorted(set(args.threshold), reverse=True)
    for path in args.volume:
        volume = RiskVolume.load(path)
        digest = volume.meta.get("scenario_sha256", "")
        out_dir = Path(args.out) if args.out else Path(path).parent
        stem = Path(path).stem
        summaries = {}
        for threshold in thresholds:
            terrain = threshold_terrain(volume, threshold)
            clearance = min_clearance(terrain)
            write_clearance_csv(out_dir / f"clearance_{stem}_{_tag(threshold)}.csv", clearance, volume.classes, digest, threshold)
            if args.group_by_class:
                summaries[_tag(threshold)] = clearance_summary(clearance, volume.classes)
        if args.group_by_class:
            report = {"volume": str(path), "scenario_sha256": digest, "thresholds": summaries}
            _write_json(out_dir / f"clearance_{stem}_summary.json", report)
            print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_fuse(args) -> int:
    terrains = [NoFlyTerrain.load(path) for path in args.terrain]
    terrains += [load_acoustic_terrain(path) for path in args.acoustic]
    fused = fuse_terrains(terrains)
    sha = fused.save(args.out)
    logger.info("Fused %d terrains: %d voxels excluded", len(terrains), fused.count)
    print(sha)
    return EXIT_OK


def cmd_export(args) -> int:
    terrain = NoFlyTerrain.load(args.terrain)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(export_terrain_mesh(terrain))
    logger.info("Wrote mesh %s (%d excluded voxels)", out, terrain.count)
    return EXIT_OK


# --- oracle ------------------------------------------------------------------


def cmd_oracle(args) -> int:
    sf = load_scenario(args.scenario)
    threads = _threads(args)
    samples = args.samples if args.samples is not None else sf.oracle.samples
    seed = args.seed if args.seed is not None else sf.oracle.seed
    out = Path(args.out) if args.out else sf.output.dir / "oracle_report.json"
    _add_file_log(sf.logging, out.parent)

    if args.kernel:
        kernel = ImpactKernel.load(args.kernel)
    else:
        base = sf.base
        kernel = build_kernel(
            base.impact,
            half_extent_m=base.kernel_half_extent_m,
            altitudes=sorted(sf.oracle.altitudes),
            delta_m=base.kernel_delta_m,
            spacing_m=base.grid.spacing[0],
            threads=threads,
        )
    report = compare_kernel(
        kernel, samples, seed, altitudes=sf.oracle.altitudes, threads=threads, scenario_hash=sf.scenario_hash
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    result = "PASS" if report.passed else "FAIL"
    print(result)
    logger.info("Oracle %s for %s (%d samples, seed %d)", result, sf.label, samples, seed)
    return EXIT_OK if report.passed else EXIT_FAIL


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risk_terrain", description="Virtual UAS risk terrains over an urban model")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True, many=False):
        if scenario:
            p.add_argument("--scenario", required=True, action="append" if many else "store", help="scenario YAML/JSON file")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--threads", type=int, help="worker threads (default: $RISK_TERRAIN_THREADS or 1)")

    p = sub.add_parser("kernel", help="precompute the impact kernel")
    common(p)
    p.set_defaults(func=cmd_kernel_build)

    p = sub.add_parser("terrain", help="risk volume, terrains and clearance for one or more scenarios")
    common(p, many=True)
    p.add_argument("--kernel", help="use this kernel file instead of building one")
    p.add_argument("--mesh", action="store_true", help="also write OBJ meshes")
    p.set_defaults(func=cmd_terrain_build)

    p = sub.add_parser("clearance", help="clearance reports from saved risk volumes")
    common(p, scenario=False)
    p.add_argument("--volume", required=True, action="append")
    p.add_argument("--threshold", required=True, action="append", type=float)
    p.add_argument("--group-by-class", action="store_true")
    p.set_defaults(func=cmd_clearance)

    p = sub.add_parser("fuse", help="union of terrain files")
    p.add_argument("--terrain", action="append", default=[])
    p.add_argument("--acoustic", action="append", default=[], help="externally computed acoustic terrain (grid file or JSON zones)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse, threads=None)

    p = sub.add_parser("oracle", help="Monte Carlo check of kernel cell probabilities")
    common(p)
    p.add_argument("--kernel", help="check this kernel file instead of building one")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("export", help="OBJ boundary mesh of a terrain file")
    p.add_argument("--terrain", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export, threads=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        return args.func(args)
    except RiskTerrainError as exc:
        print(f"FATAL: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"FATAL: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
