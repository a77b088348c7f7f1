"""Command-line entry point: ``ctp-planner <subcommand>``.

Exit codes: 0 success / goal, 1 configuration or input error, 2 collision,
3 timeout, 4 episode failure (belief collapse), 5 CTP validation failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .config import ConfigError, ScenarioConfig, dump_default_config, load_config
from .geometry import (IntersectionSpec, baseline_path, compute_ctps, extract_critical_zone,
                       generate_candidate_paths, oncoming_route, sample_path)
from .metrics import MetricsError, compare_commute, read_jsonl, write_jsonl
from .simulator import EpisodeResult, aggregate, run_batch, run_episode

EXIT_OK, EXIT_CONFIG, EXIT_COLLISION, EXIT_TIMEOUT, EXIT_FAILED, EXIT_INVALID = 0, 1, 2, 3, 4, 5
OUTCOME_EXIT = {"goal": EXIT_OK, "collision": EXIT_COLLISION, "timeout": EXIT_TIMEOUT, "failed": EXIT_FAILED}
SUMMARY_HEADER = ("episode", "variant", "seed", "outcome", "steps", "ctp", "clear_time_s", "min_dist_m", "mean_latency_ms")

log = logging.getLogger("ctp_planner")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as "collision"
    def error(self, message):
        raise UsageError(message)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _write_manifest(out: Path, cfg_hash: str | None, seeds: Sequence[int], files: Sequence[Path],
                    started: str, command: str) -> Path:
    out = out.resolve()
    entries = sorted(
        ({"path": str(f.resolve().relative_to(out)), "sha256": _sha256(f)} for f in files),
        key=lambda e: e["path"],
    )
    manifest = {
        "schema": "manifest.v1",
        "command": command,
        "tool_version": __version__,
        "config_hash": cfg_hash,
        "seeds": list(seeds),
        "output_dir": str(out),
        "started": started,
        "finished": _now(),
        "files": entries,
    }
    return _write_json(out / "manifest.json", manifest)


def _episode_record(res: EpisodeResult, cfg: ScenarioConfig) -> dict[str, Any]:
    rec = res.summary()
    rec.update({
        "schema": "episode.v1",
        "seed": cfg.seed,
        "min_dist_m": res.min_distance,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
    })
    return rec


def _save_episode(res: EpisodeResult, cfg: ScenarioConfig, out: Path) -> list[Path]:
    """Write the deterministic logs (returned) plus an unlisted timing.json."""
    out.mkdir(parents=True, exist_ok=True)
    steps = out / "steps.jsonl"
    write_jsonl(res.logs, steps)
    _write_json(out / "timing.json", {
        "schema": "timing.v1",
        "steps": [{"step": l.step, "latency_ms": l.latency_ms, "sims": l.sims}
                  for l in res.logs if l.action is not None],
    })
    return [steps, _write_json(out / "episode.json", _episode_record(res, cfg))]


def _timing(rows) -> dict[str, Any]:
    lat = [l.latency_ms for r in rows if r.result for l in r.result.logs if l.action is not None]
    return {
        "schema": "timing.v1",
        "steps": len(lat),
        "mean_latency_ms": sum(lat) / len(lat) if lat else None,
        "max_latency_ms": max(lat) if lat else None,
        "episodes": [{"variant": r.variant, "seed": r.seed, "mean_latency_ms": r.mean_latency_ms} for r in rows],
    }


def _summary_csv(rows, path: Path) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for i, r in enumerate(rows):
        w.writerow([i, r.variant, r.seed, r.outcome, r.steps, r.ctp,
                    "" if r.clear_time is None else repr(r.clear_time),
                    "" if r.min_dist is None else repr(r.min_dist),
                    ""])  # wall-clock values live in timing.json
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _seed_list(args) -> list[int]:
    if getattr(args, "seed_list", None):
        try:
            seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --seed-list: {exc}") from None
    else:
        seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def cmd_run(args) -> int:
    started = _now()
    cfg = load_config(args.scenario)
    if args.seed is not None:
        cfg = cfg.with_overrides({"seed": args.seed})
    res = run_episode(cfg, baseline=args.baseline)
    out = Path(args.out)
    files = _save_episode(res, cfg, out)
    _write_manifest(out, cfg.config_hash(), [cfg.seed], files, started, "run")
    _report(args, {"outcome": res.outcome, "steps": res.steps, "ctp": res.ctp,
                   "clear_time_s": res.clear_time, "error": res.error})
    return OUTCOME_EXIT[res.outcome]


def cmd_compare(args) -> int:
    started = _now()
    cfg = load_config(args.scenario)
    seeds = _seed_list(args)
    out = Path(args.out)
    files, reports, rows = [], [], []
    ctp_rows = run_batch(cfg, seeds)
    base_rows = run_batch(cfg, seeds, baseline=True)
    for c, b in zip(ctp_rows, base_rows):
        seed_dir = out / f"seed_{c.seed}"
        scfg = cfg.with_overrides({"seed": c.seed})
        for row, sub in ((c, "ctp"), (b, "baseline")):
            if row.result is not None:
                files += _save_episode(row.result, scfg, seed_dir / sub)
        entry: dict[str, Any] = {"seed": c.seed, "ctp_outcome": c.outcome, "baseline_outcome": b.outcome}
        try:
            entry.update(compare_commute(c.result, b.result).as_dict())
            reports.append(entry)
        except (MetricsError, AttributeError) as exc:
            entry["error"] = str(exc)
        rows.append(entry)
    adv = [r["advantage"] for r in reports]
    agg = {
        "seeds": seeds,
        "compared": len(reports),
        "mean_advantage_s": sum(adv) / len(adv) if adv else None,
        "mean_ctp_clear_time_s": (sum(r["ctp_clear_time"] for r in reports) / len(reports)) if reports else None,
        "mean_baseline_clear_time_s": (sum(r["baseline_clear_time"] for r in reports) / len(reports)) if reports else None,
        "baseline_full_stop_rate": (sum(r["baseline_full_stop"] for r in reports) / len(reports)) if reports else None,
        "ctp_positive_min_speed_rate": (sum(r["ctp_min_speed"] > 0 for r in reports) / len(reports)) if reports else None,
    }
    files.append(_write_json(out / "comparison.json", {"schema": "comparison.v1", "per_seed": rows, "aggregate": agg}))
    for r in ctp_rows:
        r.variant = "ctp"
    for r in base_rows:
        r.variant = "baseline"
    files.append(_summary_csv(ctp_rows + base_rows, out / "summary.csv"))
    _write_json(out / "timing.json", _timing(ctp_rows + base_rows))
    _write_manifest(out, cfg.config_hash(), seeds, files, started, "compare")
    _report(args, agg)
    terminated = all(r.outcome in ("goal", "collision", "timeout") for r in ctp_rows + base_rows)
    return EXIT_OK if terminated else EXIT_FAILED


def cmd_batch(args) -> int:
    started = _now()
    seeds = _seed_list(args)
    cfgs = [load_config(p) for p in args.scenarios]
    out = Path(args.out)
    rows = []
    for cfg in cfgs:
        rows += run_batch(cfg, seeds, variants=[(cfg.name, {})], baseline=args.baseline, workers=args.workers)
    files = []
    for r in rows:
        if r.result is not None and args.save_logs:
            cfg = next(c for c in cfgs if c.name == r.variant).with_overrides({"seed": r.seed})
            files += _save_episode(r.result, cfg, out / r.variant / f"seed_{r.seed}")
    agg = aggregate(rows)
    timing = _timing(rows)
    files.append(_write_json(out / "aggregate.json", {"schema": "aggregate.v1", "variants": agg}))
    _write_json(out / "timing.json", timing)
    files.append(_summary_csv(rows, out / "summary.csv"))
    hashes = "".join(c.config_hash() for c in cfgs)
    _write_manifest(out, hashlib.sha256(hashes.encode()).hexdigest(), seeds, files, started, "batch")
    _report(args, {"variants": agg, "timing": {k: v for k, v in timing.items() if k != "episodes"}})
    if args.max_latency_ms is not None and timing["mean_latency_ms"] is not None \
            and timing["mean_latency_ms"] > args.max_latency_ms:
        print(f"mean planning latency {timing['mean_latency_ms']:.1f} ms exceeds {args.max_latency_ms} ms",
              file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK if all(r.outcome in ("goal", "collision", "timeout") for r in rows) else EXIT_FAILED


def _load_run(run_dir: Path) -> tuple[list, dict]:
    steps = run_dir / "steps.jsonl"
    meta = run_dir / "episode.json"
    if not steps.exists() or not meta.exists():
        raise UsageError(f"{run_dir} does not hold steps.jsonl and episode.json")
    try:
        logs = read_jsonl(steps)
    except (TypeError, KeyError) as exc:
        raise UsageError(f"{steps}: missing fields in log ({exc})") from None
    return logs, json.loads(meta.read_text(encoding="utf-8"))


def cmd_plot(args) -> int:
    from . import plots

    target = Path(args.log)
    figures = plots.FIGURES if args.figure == "all" else (args.figure,)
    for f in figures:
        if f not in plots.FIGURES:
            raise UsageError(f"unknown figure {f!r}; choose from {', '.join(plots.FIGURES)}")
    runs = []
    if (target / "ctp").is_dir() or (target / "baseline").is_dir():
        for sub in ("ctp", "baseline"):
            if (target / sub).is_dir():
                runs.append((sub, *_load_run(target / sub)))
    elif target.is_dir():
        runs.append(("ctp", *_load_run(target)))
    else:
        raise UsageError(f"log path {target} not found")
    out = Path(args.out) if args.out else target / "plots"
    written = []
    label0, logs0, meta0 = runs[0]
    cfg = ScenarioConfig.from_dict(meta0["config"])
    for f in figures:
        path = out / f"{f}.svg"
        if f == "trajectory":
            zone = extract_critical_zone(IntersectionSpec.square(cfg.zone_length))
            ego = (generate_candidate_paths(zone, compute_ctps(zone, cfg.ctp_ratios))
                   if meta0["planner"] == "ctp" else [baseline_path(zone)])
            routes = sorted({o.intention for o in cfg.oncoming})
            written.append(plots.plot_trajectory(logs0, ego, [oncoming_route(zone, i, cfg.layout) for i in routes],
                                                 cfg.zone_length, path))
        elif f == "belief":
            written.append(plots.plot_belief(logs0, path))
        elif f == "marching":
            written.append(plots.plot_marching([(lab, lg, m["path_length_m"]) for lab, lg, m in runs], path))
        elif f == "safety":
            written.append(plots.plot_safety(logs0, cfg.model.dist_safe, path))
        else:
            written.append(plots.plot_speed([(lab, lg) for lab, lg, _ in runs], path))
    _report(args, {"figures": [str(p) for p in written]})
    return EXIT_OK


def cmd_validate(args) -> int:
    from . import plots
    from .validation import cluster_turn_points, detect_turn_points, ingest_trajectories, synthetic_corpus, \
        validate_isometry, write_trajectories

    started = _now()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if args.input:
        records = ingest_trajectories(args.input)
    else:
        records = synthetic_corpus(n=args.generate, sigma=args.sigma, seed=args.seed)
        files.append(out / "corpus.csv")
        write_trajectories(records, files[-1])
    points = [p for p in (detect_turn_points(r, args.threshold, args.window) for r in records) if p is not None]
    report = cluster_turn_points(points, args.k, args.seed)
    verdict = validate_isometry(report, args.tolerance) if args.k >= 3 else None
    data = {"schema": "cluster_report.v1", "trajectories": len(records), "turn_points": len(points),
            "report": report.as_dict(), "tolerance": args.tolerance, "isometric": verdict}
    files.append(_write_json(out / "report.json", data))
    files.append(plots.plot_turn_points(points, report, out / "plots" / "turn_points.svg"))
    _write_manifest(out, None, [args.seed], files, started, "validate-ctp")
    _report(args, data)
    return EXIT_OK if verdict in (True, None) else EXIT_INVALID


def cmd_dump_paths(args) -> int:
    cfg = load_config(args.scenario) if args.scenario else ScenarioConfig.from_dict({})
    zone = extract_critical_zone(IntersectionSpec.square(cfg.zone_length))
    paths = [(p.index, p) for p in generate_candidate_paths(zone, compute_ctps(zone, cfg.ctp_ratios))]
    if args.baseline:
        paths.insert(0, (0, baseline_path(zone)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("path_index", "s", "x", "y", "heading"))
    for idx, p in paths:
        for s, x, y, h in sample_path(p, args.ds):
            w.writerow([idx, repr(s), repr(x), repr(y), repr(h)])
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _report(args, data: dict) -> None:
    if args.json:
        print(json.dumps(data, sort_keys=True, default=str))
    else:
        for k, v in data.items():
            print(f"{k}: {v}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctp-planner", description="Left-turn planning over critical turning points.",
                epilog="exit codes: 0 ok, 1 config error, 2 collision, 3 timeout, 4 failure, 5 validation failed")
    p.add_argument("--json", action="store_true", help="machine-readable output and errors")
    p.add_argument("--print-default-config", action="store_true", help="print the default scenario file and exit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def seeds(sp):
        sp.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")
        sp.add_argument("--seed-start", type=int, default=0)
        sp.add_argument("--seed-list", help="comma-separated seeds (overrides --seeds)")

    sp = sub.add_parser("run", help="run one episode")
    sp.add_argument("scenario")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", default="runs/run")
    sp.add_argument("--baseline", action="store_true", help="use the geometry-only single path")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="CTP planner vs geometry-only baseline")
    sp.add_argument("scenario")
    seeds(sp)
    sp.add_argument("--out", default="runs/compare")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("batch", help="seeded batch over one or more scenario files")
    sp.add_argument("scenarios", nargs="+")
    seeds(sp)
    sp.add_argument("--out", default="runs/batch")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--baseline", action="store_true")
    sp.add_argument("--save-logs", action="store_true")
    sp.add_argument("--max-latency-ms", type=float, default=None,
                    help="fail (exit 5) if the mean per-step planning latency exceeds this")
    sp.set_defaults(func=cmd_batch)

    sp = sub.add_parser("plot", help="render figures from a run or compare-seed directory")
    sp.add_argument("log")
    sp.add_argument("--figure", default="all")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("validate-ctp", help="turn-point clustering and isometry test")
    sp.add_argument("--input", help="CSV with header id,t,x,y,speed,heading (default: synthetic corpus)")
    sp.add_argument("--generate", type=int, default=200)
    sp.add_argument("--sigma", type=float, default=0.3)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threshold", type=float, default=0.05)
    sp.add_argument("--window", type=int, default=5)
    sp.add_argument("--tolerance", type=float, default=0.2)
    sp.add_argument("--out", default="runs/validate")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("dump-paths", help="sample the candidate paths to CSV")
    sp.add_argument("scenario", nargs="?")
    sp.add_argument("--ds", type=float, default=0.5)
    sp.add_argument("--baseline", action="store_true", help="also emit the quarter-circle baseline as index 0")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_dump_paths)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("CTP_PLANNER_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    parser = build_parser()
    as_json = "--json" in (argv if argv is not None else sys.argv[1:])
    try:
        args = parser.parse_args(argv)
        if args.print_default_config:
            sys.stdout.write(dump_default_config())
            return EXIT_OK
        if args.command is None:
            raise UsageError("a subcommand is required")
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        msg = str(exc)
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.strerror}: {exc.filename}"
        if as_json:
            print(json.dumps({"error": type(exc).__name__, "message": msg, "exit_code": EXIT_CONFIG}), file=sys.stderr)
        else:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
