"""Command-line entry point.

    chartlab <generate|train|eval|sweep|run> --config cfg.json
             [--jobs N] [--seed S] [--set key=value ...]
    chartlab init-config [--output cfg.json] [--seed S]

``--set`` overrides individual config fields with dotted paths, e.g.
``--set train.epochs=10 --set methods='["csi2vec-aug"]'`` (values are
parsed as JSON when possible).  Exit codes: 0 success, 2 config error,
3 data error, 4 numeric failure.
"""

import argparse
import json
import sys
from pathlib import Path

from .experiment import (ConfigError, DataError, Experiment, NumericError,
                         default_config_doc, load_config)

_STAGES = ("generate", "train", "eval", "sweep", "run")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chartlab",
        description="CSI vector-embedding experiments: positioning and channel charting",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in _STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage"
                           if stage != "run" else "run all stages in order")
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker pool size for scenario-level parallelism")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (dotted path, JSON value)")
    init = sub.add_parser("init-config", help="write the default config")
    init.add_argument("--output", default="chartlab-config.json")
    init.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "init-config":
        doc = default_config_doc(seed=args.seed)
        Path(args.output).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"wrote {args.output}")
        return 0
    try:
        config = load_config(args.config, overrides=args.set,
                             seed=args.seed, jobs=args.jobs)
        exp = Experiment(config)
        if args.command == "generate":
            written = exp.run_generate()
            print(f"generate: {len(written)} scenario file(s) written "
                  f"under {exp.root}")
        elif args.command == "train":
            exp.run_train()
            print(f"train: checkpoints under {exp.root}")
        elif args.command == "eval":
            results = exp.run_eval()
            print(f"eval: {len(results)} metric rows under {exp.root}")
        elif args.command == "sweep":
            results = exp.run_sweep()
            print(f"sweep: {len(results)} (method, dim, scenario) points "
                  f"under {exp.root}")
        else:
            exp.run_all()
            print(f"run: all stages complete under {exp.root}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
