"""Command-line entry point: ``girli {run,demo,check}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .runner import PRESETS, ExperimentConfig, check_experiment, load_config, run_experiment


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["noise"] = dict(raw.get("noise") or {}, seed=args.seed)
    if args.max_iter is not None:
        for s in raw["schemes"]:
            s["max_iterations"] = args.max_iter
    if args.out is not None:
        raw["output"] = args.out
    return ExperimentConfig.from_dict(raw)


def _print_records(records):
    header = f"{'method':<24}{'delta':>10}{'tau':>6}{'iters':>7}{'time[s]':>9}{'rel_err':>9}  stop"
    print(header)
    for r in records:
        iters = "-" if r.iterations is None else str(r.iterations)
        print(f"{r.method:<24}{r.delta:>10.4f}{r.tau:>6.2g}{iters:>7}{r.wall_time_s:>9.3f}"
              f"{r.rel_error_l2:>9.4f}  {r.stop_reason}" + (f"  ({r.error})" if r.error else ""))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="girli", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the noise seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--max-iter", type=int, default=None, help="override every iteration cap")

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    common(p_run)

    p_demo = sub.add_parser("demo", help="run a built-in test preset")
    p_demo.add_argument("--test", type=int, required=True, choices=sorted(PRESETS))
    p_demo.add_argument("--dump-config", action="store_true",
                        help="print the preset config as JSON and exit")
    common(p_demo)

    p_check = sub.add_parser("check", help="print assumption reports only")
    p_check.add_argument("--config", required=True)
    common(p_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "demo":
        if args.dump_config:
            json.dump(PRESETS[args.test], sys.stdout, indent=2)
            sys.stdout.write("\n")
            return 0
        cfg = ExperimentConfig.from_dict(PRESETS[args.test])
    else:
        cfg = load_config(args.config)
    cfg = _apply_overrides(cfg, args)

    if args.command == "check":
        json.dump(check_experiment(cfg), sys.stdout, indent=2, default=str)
        sys.stdout.write("\n")
        return 0
    records = run_experiment(cfg)
    _print_records(records)
    if cfg.output:
        print(f"outputs written to {cfg.output}")
    return 1 if any(r.stop_reason == "ERROR" for r in records) else 0


if __name__ == "__main__":
    sys.exit(main())
