"""Command-line entry point: ``nmqnet <experiment> --preset NAME [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import EXPERIMENTS, MODES, PRESET_NAMES, ConfigError, RunConfig, load_config, preset
from .report import _jsonable, emit_results, run_experiment

_OVERRIDES = {
    "seed": "seed",
    "trajectories": "trajectories",
    "dt": "dt",
    "t_end": "t_end",
    "workers": "workers",
    "mode": "mode",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESET_NAMES, help="compiled-in scenario")
    src.add_argument("--config", help="YAML or JSON config file (or a run summary)")
    common.add_argument("--out-dir", help="write CSV and JSON summary here")
    common.add_argument("--seed", type=int)
    common.add_argument("--trajectories", type=int, help="ensemble size M")
    common.add_argument("--dt", type=float, help="time step in us")
    common.add_argument("--t-end", type=float, help="final time in us")
    common.add_argument("--workers", type=int, help="worker processes for ensembles")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--strict-positivity", action="store_true", default=None)
    common.add_argument("--per-trajectory", action="store_true", help="also write per-trajectory CSV")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nmqnet", description="Waveguide-QED atom network simulator")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args) -> RunConfig:
    cfg = preset(args.preset) if args.preset else load_config(args.config)
    data = cfg.to_dict()
    data["experiment"] = args.experiment
    for attr, key in _OVERRIDES.items():
        value = getattr(args, attr)
        if value is not None:
            data[key] = value
    if args.strict_positivity:
        data["strict_positivity"] = True
    if args.out_dir:
        data["out_dir"] = args.out_dir
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        result = run_experiment(cfg, keep_trajectories=args.per_trajectory)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    shown = {k: v for k, v in result.summary.items() if k != "config"}
    print(json.dumps(_jsonable(shown), indent=2))
    if cfg.out_dir:
        for kind, path in emit_results(result, cfg.out_dir).items():
            print(f"wrote {kind}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
