"""Command-line entry point: scenario runs, baseline comparisons and self-checks."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks, experiments


def _memory(value: str):
    if value.lower() in ("inf", "infinite"):
        return "inf"
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("--tm must be a positive integer or 'inf'")
    return n


def _apply_overrides(config: experiments.ScenarioConfig, args) -> experiments.ScenarioConfig:
    changes = {}
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.out is not None:
        changes["out"] = args.out
    if args.tm is not None:
        changes["memory"] = args.tm
    if args.noise is not None:
        changes["noise"] = args.noise
    if args.sigma is not None:
        changes["sigma"] = args.sigma
    config = replace(config, **changes)
    if config.out is None:
        config = replace(config, out=str(Path("results") / config.name))
    return config


def _print_checks(results) -> int:
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_run(args) -> int:
    config = _apply_overrides(experiments.load_config(args.config), args)
    records = experiments.run_scenario(config)
    summary = experiments.batch_summary(config, records)
    for s in summary["seeds"]:
        if s.get("error"):
            print(f"seed {s['seed']}: FAILED {s['error']}")
        else:
            print(f"seed {s['seed']}: final loss {s['final_loss']:.4g}, "
                  f"last-20 mean {s['final20_mean']:.4g}, skipped updates {s['skipped_updates']}")
    walls = [r.wall_ms.mean() for r in records if r.rows]
    if walls:
        print(f"mean step time {np.mean(walls):.1f} ms")
    print(f"outputs in {config.out} (config hash {config.config_hash()})")
    bad = summary["failed"] or [s["seed"] for s in summary["seeds"] if not s.get("finite", True)]
    return 1 if bad else 0


def cmd_compare(args) -> int:
    config = _apply_overrides(experiments.load_config(args.config), args)
    if config.memory == "inf":
        config = replace(config, memory=10)
    try:
        summary = experiments.compare_baseline(config)
    except AssertionError as exc:
        print(f"FAIL {exc}")
        return 1
    for p in summary["per_seed"]:
        print(f"seed {p['seed']}: memory {summary['memory']} {p['finite']:.4g} vs full history "
              f"{p['baseline']:.4g} ({'win' if p['finite_wins'] else 'loss'})")
    print(f"post-switch windows {summary['windows']}")
    print(f"win fraction {summary['win_fraction']:.2f}, mean {summary['finite_mean']:.4g} vs "
          f"{summary['baseline_mean']:.4g} (ratio {summary['ratio']:.2f})")
    print(f"summary in {Path(config.out) / 'compare.json'}")
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seeds if args.seeds is not None else 5)
    return _print_checks(checks.gradcheck_suite(seeds, horizon=args.horizon))


def cmd_oracle(args) -> int:
    return _print_checks(checks.lq_oracle_suite())


def cmd_list(args) -> int:
    for name, cfg in sorted(experiments.SCENARIOS.items()):
        print(f"{name:22s} {cfg.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tm", type=_memory, help="memory time in steps, or 'inf'")
    common.add_argument("--sigma", type=float, help="observation noise level")
    common.add_argument("--noise", choices=("gaussian", "uniform", "none"))
    common.add_argument("-v", "--verbose", action="store_true", help="log skipped updates")

    parser = argparse.ArgumentParser(prog="intentpred", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run a scenario (JSON path or library name)")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", parents=[common], help="finite memory against full history")
    p.add_argument("config")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("gradcheck", parents=[common], help="sensitivities against finite differences")
    p.add_argument("--horizon", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)
    p = sub.add_parser("oracle", parents=[common], help="solver and sensitivities against LQ references")
    p.set_defaults(func=cmd_oracle)
    p = sub.add_parser("list-scenarios", parents=[common], help="show the scenario library")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
