"""Command-line entry point: run scenarios, compare reports, export scenes."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline, scene


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elevsim")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a seeded scenario end to end")
    run.add_argument("--config", type=Path, required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", type=Path, default=None)
    run.add_argument("--no-rear-camera", action="store_true")
    run.add_argument("--odometry", choices=pipeline.ODOMETRY_MODES, default=None)
    run.add_argument("--snapshot-every", type=float, default=None)

    cmp_ = sub.add_parser("compare", help="compare metric reports")
    cmp_.add_argument("reports", nargs="+", type=Path)

    exp = sub.add_parser("export-scene", help="write the scene heightfield as CSV")
    exp.add_argument("--config", type=Path, required=True)
    exp.add_argument("--out", type=Path, required=True)

    return parser


def cmd_run(args) -> int:
    try:
        cfg = pipeline.ScenarioConfig.from_yaml(args.config)
    except Exception as e:  # config errors get a diagnostic, nonzero exit
        print(f"config error in {args.config}: {e}", file=sys.stderr)
        return 2
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.no_rear_camera:
        overrides["use_rear_camera"] = False
        overrides["tag"] = (cfg.tag + "+no-rear") if cfg.tag else "no-rear"
    if args.odometry is not None:
        overrides["odometry"] = args.odometry
    if args.snapshot_every is not None:
        overrides["snapshot_every"] = args.snapshot_every
    cfg = replace(cfg, **overrides)
    if cfg.out_dir is None:
        cfg = replace(cfg, out_dir=Path("elevsim_out"))
    if cfg.sweep_step_heights:
        rows = pipeline.run_step_sweep(cfg)
        for row in rows:
            print(
                f"step {row['step_height_m']:.3f} m: success={int(row.get('success', 0))}"
                f" chamfer={row.get('window_chamfer_mean_cm', float('nan')):.3f} cm"
            )
    else:
        result = pipeline.run_scenario(cfg)
        for k, v in result.metrics.items():
            print(f"{k} = {v:.6g}")
        if result.truncated:
            print("warning: trajectory left the terrain and was truncated", file=sys.stderr)
    print(f"reports written to {cfg.out_dir}")
    return 0


def cmd_compare(args) -> int:
    table = pipeline.compare_runs(args.reports)
    width = max(len(name) for name, _, _ in table)
    header = " | ".join(p.parent.name or str(p) for p in args.reports)
    print(f"{'metric':<{width}} | {header} | delta%")
    for name, vals, delta in table:
        cells = " | ".join("-" if v is None else f"{v:.6g}" for v in vals)
        d = "-" if delta is None else f"{delta:+.2f}%"
        print(f"{name:<{width}} | {cells} | {d}")
    return 0


def cmd_export_scene(args) -> int:
    try:
        cfg = pipeline.ScenarioConfig.from_yaml(args.config)
    except Exception as e:
        print(f"config error in {args.config}: {e}", file=sys.stderr)
        return 2
    hf = scene.build_scene(cfg.scene_spec, cfg.scene_resolution)
    hf.to_csv(args.out)
    print(f"heightfield {hf.extent[0]}x{hf.extent[1]} written to {args.out}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = _build_parser().parse_args(argv)
    if args.verb == "run":
        return cmd_run(args)
    if args.verb == "compare":
        return cmd_compare(args)
    return cmd_export_scene(args)


if __name__ == "__main__":
    sys.exit(main())
