"""Command-line interface.

Commands: run, batch, sweep-p1, sweep-ns, validate-config. Flags override
config-file fields, which override built-in defaults. Exit codes: 0 success,
1 usage error, 2 runtime error. Progress is written to stderr as JSON lines.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

from .baselines import PLANNER_NAMES
from .harness import (
    run_batch,
    run_episode,
    sweep_ns,
    sweep_p1,
    write_metrics_csv,
    write_sweep_ns_csv,
    write_sweep_p1_csv,
    write_trace_json,
    write_tube_dump_csv,
)
from .scenario import (
    ScenarioConfig,
    ScenarioValidationError,
    config_to_dict,
    load_config,
    validate,
)

CONFIG_DIR_ENV = "SPECPLAN_CONFIG_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _progress(stream):
    def cb(done: int, total: int):
        if done == total or done % 50 == 0:
            stream.write(json.dumps({"progress": done, "total": total}) + "\n")
            stream.flush()

    return cb


def _resolve_config(path: Optional[str]) -> ScenarioConfig:
    if path is None:
        return validate(ScenarioConfig())
    if not os.path.exists(path):
        base = os.environ.get(CONFIG_DIR_ENV)
        if base and os.path.exists(os.path.join(base, path)):
            path = os.path.join(base, path)
        else:
            raise FileNotFoundError(f"config file not found: {path}")
    return load_config(path)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "n_samples", None) is not None:
        updates["n_samples"] = args.n_samples
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return validate(cfg)


def _parse_grid(spec: str) -> list[float]:
    """'start:stop:step' inclusive grid with rounding-stable points."""
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"grid must be start:stop:step, got {spec!r}")
    if step <= 0:
        raise ValueError(f"grid step must be positive, got {step}")
    out = []
    i = 0
    while True:
        v = round(start + i * step, 12)
        if v > stop + 1e-9:
            break
        out.append(v)
        i += 1
    return out


def build_parser() -> _Parser:
    p = _Parser(prog="specplan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, planner=True):
        sp.add_argument("--config", help="scenario config YAML (or name under $%s)" % CONFIG_DIR_ENV)
        sp.add_argument("--seed", type=int, help="base seed (overrides config)")
        sp.add_argument("--n-samples", type=int, dest="n_samples", help="reward samples per route")
        sp.add_argument("--jobs", type=int, default=1, help="parallel episode workers")
        if planner:
            sp.add_argument("--planner", default="spap", choices=PLANNER_NAMES)

    sp = sub.add_parser("run", help="run one episode and print its summary")
    common(sp)
    sp.add_argument("--trace", help="write the full episode trace JSON here")
    sp.add_argument("--episode-seed", type=int, default=None, help="episode seed (defaults to base seed)")
    sp.add_argument("--dump-tubes", help="write the per-replan occupancy tubes CSV here")

    sp = sub.add_parser("batch", help="run a seeded batch and write metrics.csv")
    common(sp)
    sp.add_argument("--n", type=int, required=True, help="episode count")
    sp.add_argument("--out", default="metrics.csv")
    sp.add_argument("--timings-out", default=None, help="also write wall-time metrics here")

    sp = sub.add_parser("sweep-p1", help="route-probability sweep (p1, 0.8-p1, 0.2)")
    common(sp, planner=False)
    sp.add_argument("--planners", default="idm1,idm2,idm3,mpc,spap")
    sp.add_argument("--grid", default="0:0.8:0.2", help="p1 grid start:stop:step")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out", default="sweep_p1.csv")

    sp = sub.add_parser("sweep-ns", help="sample-count sweep for the spap planner")
    common(sp, planner=False)
    sp.add_argument("--ns", default="10,25,50,100,200", help="comma-separated sample counts")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out", default="sweep_ns.csv")
    sp.add_argument("--timings-out", default=None)

    sp = sub.add_parser("validate-config", help="check a config file and echo it")
    sp.add_argument("--config", required=True)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate-config":
            cfg = _resolve_config(args.config)
            json.dump(config_to_dict(cfg), sys.stdout, indent=1, sort_keys=True)
            sys.stdout.write("\n")
            return 0

        cfg = _apply_overrides(_resolve_config(args.config), args)
        progress = _progress(sys.stderr)

        if args.command == "run":
            seed = args.episode_seed if args.episode_seed is not None else cfg.seed
            ep = run_episode(cfg, args.planner, seed, record_trace=args.trace is not None)
            if args.trace:
                write_trace_json(args.trace, ep)
            if args.dump_tubes:
                write_tube_dump_csv(args.dump_tubes, cfg, seed)
            summary = {
                "planner": ep.planner,
                "seed": ep.seed,
                "collided": ep.collided,
                "min_realized_gap": ep.min_realized_gap,
                "avg_speed": ep.avg_speed,
                "final_speed": ep.final_speed,
                "ground_truth_route": ep.ground_truth_route,
            }
            json.dump(summary, sys.stdout, sort_keys=True)
            sys.stdout.write("\n")
            return 0

        if args.command == "batch":
            metrics, _ = run_batch(
                cfg, args.planner, args.n, cfg.seed, jobs=args.jobs, progress=progress
            )
            write_metrics_csv(
                args.out, [(args.planner, metrics)], cfg.seed, timings_path=args.timings_out
            )
            return 0

        if args.command == "sweep-p1":
            planners = [x.strip() for x in args.planners.split(",") if x.strip()]
            for name in planners:
                if name not in PLANNER_NAMES:
                    parser.error(
                        f"unknown planner {name!r}; valid names: {', '.join(PLANNER_NAMES)}"
                    )
            grid = _parse_grid(args.grid)
            rows = sweep_p1(cfg, planners, grid, args.n, cfg.seed, jobs=args.jobs, progress=progress)
            write_sweep_p1_csv(args.out, rows, args.n, cfg.seed)
            return 0

        if args.command == "sweep-ns":
            ns_grid = [int(x) for x in args.ns.split(",") if x.strip()]
            rows = sweep_ns(cfg, ns_grid, args.n, cfg.seed, jobs=args.jobs, progress=progress)
            write_sweep_ns_csv(args.out, rows, args.n, cfg.seed, timings_path=args.timings_out)
            return 0

        parser.error(f"unknown command {args.command!r}")
    except (ScenarioValidationError, FileNotFoundError, ValueError, KeyError) as exc:
        sys.stderr.write(f"specplan: error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
