"""Command-line interface: benchmarks, stress sweeps, map generation,
inspection, and trajectory replay."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, mapgen, perception
from .harness import (BenchConfig, ConfigError, SweepSpec, load_config,
                      run_benchmark, run_sweep, write_episodes_jsonl,
                      write_plot_data, write_summary_csv, CSV_COLUMNS,
                      MetricsRow)
from .world import MapFormatError, load_map, save_map


def _progress(done: int, total: int) -> None:
    if done == total or done % 25 == 0:
        print(f"\r  {done}/{total} episodes", end="", file=sys.stderr, flush=True)
    if done == total:
        print(file=sys.stderr)


def _common_bench_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--map", dest="map", help="map file or 'canonical'")
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--seeds", help="comma-separated base seeds")
    p.add_argument("--episodes", type=int, help="episodes per method per seed")
    p.add_argument("--sigma", type=float, help="observation noise sigma")
    p.add_argument("--delay", type=int, help="action delay in steps (0..3)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--log-trajectories", action="store_true",
                   help="write per-step logs under OUT/traj/")
    p.add_argument("--quiet", action="store_true")


def _config_from_args(args) -> BenchConfig:
    overrides = {
        "map": args.map,
        "episodes": args.episodes,
        "sigma": args.sigma,
        "delay": args.delay,
        "out": args.out,
        "log_trajectories": True if args.log_trajectories else None,
    }
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    if args.seeds:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    return load_config(args.config, **overrides)


def _emit(rows: list[MetricsRow], results: list[tuple], out: str | None,
          default_dir: str) -> None:
    out_dir = Path(out) if out else Path(default_dir)
    write_summary_csv(rows, out_dir / "summary.csv")
    write_episodes_jsonl(results, out_dir / "episodes.jsonl")
    print(f"wrote {out_dir / 'summary.csv'} and episodes.jsonl")
    print(f"{'method':<10} {'axis':<10} {'setting':<9} "
          f"{'success':>14} {'clean':>14} {'collision':>14} {'avg steps':>16}")
    for r in rows:
        print(f"{r.method:<10} {r.axis:<10} {r.setting:<9} "
              f"{r.success_mean:6.3f}±{r.success_std:<6.3f} "
              f"{r.clean_mean:6.3f}±{r.clean_std:<6.3f} "
              f"{r.collision_mean:6.3f}±{r.collision_std:<6.3f} "
              f"{r.avg_steps_mean:8.1f}±{r.avg_steps_std:<7.1f}")


def cmd_bench_run(args) -> int:
    cfg = _config_from_args(args)
    rows, results = run_benchmark(cfg, None if args.quiet else _progress)
    _emit(rows, results, cfg.out, "runs/bench")
    return 0


def cmd_bench_sweep(args) -> int:
    cfg = _config_from_args(args)
    spec = SweepSpec(axis=args.axis,
                     episodes=args.episodes if args.episodes else SweepSpec(args.axis).episodes,
                     seeds=tuple(int(s) for s in args.seeds.split(",")) if args.seeds else ())
    rows, results = run_sweep(spec, cfg, None if args.quiet else _progress)
    _emit(rows, results, cfg.out, f"runs/sweep_{args.axis}")
    return 0


def cmd_mapgen(args) -> int:
    spec = mapgen.MapSpec(
        dims=tuple(int(d) for d in args.dims.split("x")),
        voxel_size=args.voxel_size,
        target_density=args.density,
        seed=args.seed)
    grid = mapgen.generate(spec)
    report = mapgen.validate(grid)
    save_map(grid, args.out, seed=args.seed, generator_params=grid.meta)
    print(json.dumps({
        "out": args.out,
        "density": round(report.density, 5),
        "component_ratio": round(report.component_ratio, 5),
        "band_occupancy": [round(b, 5) for b in report.band_occupancy],
        "passed": report.passed,
    }, indent=2))
    return 0


def cmd_inspect(args) -> int:
    if args.channels:
        doc = perception.channel_map()
        text = json.dumps(doc, indent=2)
        if args.out:
            Path(args.out).write_text(text + "\n")
            print(f"wrote {args.out}")
        else:
            print(text)
        return 0
    if args.map:
        try:
            grid = load_map(args.map)
        except MapFormatError as exc:
            print(f"INVALID map file: {exc}", file=sys.stderr)
            return 1
        report = mapgen.validate(grid)
        print(json.dumps({
            "dims": list(grid.dims),
            "voxel_size": grid.voxel_size,
            "extent_m": [round(e, 3) for e in grid.extent],
            "density": round(report.density, 5),
            "component_ratio": round(report.component_ratio, 5),
            "band_occupancy": [round(b, 5) for b in report.band_occupancy],
            "passed": report.passed,
        }, indent=2))
        return 0
    print("inspect needs --map FILE or --channels", file=sys.stderr)
    return 2


def cmd_replay(args) -> int:
    path = Path(args.traj)
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    if not records:
        print("empty trajectory", file=sys.stderr)
        return 1
    last = 0
    tallies: dict[str, int] = {}
    for rec in records:
        if rec["step"] != last + 1:
            print(f"BROKEN: step {rec['step']} after {last}", file=sys.stderr)
            return 1
        last = rec["step"]
        for _, kind, _agent in rec.get("events", []):
            tallies[kind] = tallies.get(kind, 0) + 1
    for rec in records[::args.stride]:
        alive = sum(1 for a in rec["alive"][:4] if a)
        print(f"step {rec['step']:>5}  alive {alive}  gate {'open' if rec['gate_open'] else 'closed'}  "
              f"explored {rec['exploration']:.3f}  "
              f"reward {sum(r['total'] for r in rec['rewards']):+.3f}")
    print(f"steps: {last}, events: {json.dumps(tallies, sort_keys=True)}")
    return 0


def cmd_plot_data(args) -> int:
    import csv as _csv
    rows = []
    with open(args.summary) as fh:
        for rec in _csv.DictReader(fh):
            rows.append(MetricsRow(
                method=rec["method"], axis=rec["axis"], setting=rec["setting"],
                seeds=tuple(int(s) for s in rec["seeds"].split("|")),
                episodes=int(rec["episodes"]),
                **{k: float(rec[k]) for k in CSV_COLUMNS
                   if k.endswith(("_mean", "_std"))},
                map_hash=rec["map_hash"], config_hash=rec["config_hash"],
                engine_version=rec["engine_version"]))
    written = write_plot_data(rows, args.out)
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="voxpursuit",
        description="4-vs-1 voxel pursuit-evasion benchmark harness")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="benchmarks and stress sweeps")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    run_p = bsub.add_parser("run", help="main benchmark")
    _common_bench_args(run_p)
    run_p.set_defaults(func=cmd_bench_run)
    sweep_p = bsub.add_parser("sweep", help="stress sweep along one axis")
    sweep_p.add_argument("--axis", required=True,
                         choices=["speed", "yaw", "noise", "delay", "density"])
    _common_bench_args(sweep_p)
    sweep_p.set_defaults(func=cmd_bench_sweep)

    map_p = sub.add_parser("mapgen", help="generate an urban-canyon map")
    map_p.add_argument("--density", type=float, required=True)
    map_p.add_argument("--seed", type=int, default=0)
    map_p.add_argument("--out", required=True)
    map_p.add_argument("--dims", default="52x52x18")
    map_p.add_argument("--voxel-size", type=float, default=6.0)
    map_p.set_defaults(func=cmd_mapgen)

    ins_p = sub.add_parser("inspect", help="validate a map or dump the channel map")
    ins_p.add_argument("--map", help="map file to validate")
    ins_p.add_argument("--channels", action="store_true",
                       help="emit the observation channel map")
    ins_p.add_argument("--out", help="write output to a file")
    ins_p.set_defaults(func=cmd_inspect)

    rep_p = sub.add_parser("replay", help="summarize a trajectory log")
    rep_p.add_argument("--traj", required=True)
    rep_p.add_argument("--stride", type=int, default=100)
    rep_p.set_defaults(func=cmd_replay)

    plot_p = sub.add_parser("plot-data", help="reshape a summary for plotting")
    plot_p.add_argument("--summary", required=True)
    plot_p.add_argument("--out", required=True)
    plot_p.set_defaults(func=cmd_plot_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MapFormatError, mapgen.MapGenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
