"""``deltron <experiment-id> --config <file> --out <dir> [--seeds k] [--override key=value]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import EXPERIMENTS, ConfigError, load_config, run_experiment

log = logging.getLogger("deltron")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deltron",
        description="Run a seeded delay-learning experiment and write its plot data (CSV/JSON).",
    )
    parser.add_argument("experiment", help="one of: " + ", ".join(EXPERIMENTS))
    parser.add_argument("--config", help="YAML config file; missing keys take the default setup")
    parser.add_argument("--out", help="output directory (overrides the config's 'out')")
    parser.add_argument("--seeds", type=int, help="number of repetitions")
    parser.add_argument("--workers", type=int, help="parallel worker processes")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config key, dotted for sections (learn.eta0=3); repeatable")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    json.dump({"status": "error", "error": kind, "message": message}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.experiment not in EXPERIMENTS:
        return _fail("unknown_experiment", f"unknown experiment id {args.experiment!r}", 2)
    try:
        cfg = load_config(args.config, args.experiment, args.override,
                          seeds=args.seeds, out=args.out, workers=args.workers)
    except ConfigError as exc:
        return _fail("config", str(exc), 2)
    if cfg.out is None:
        return _fail("config", "no output directory: pass --out or set 'out' in the config", 2)
    log.info("running %s (config %s) into %s", cfg.experiment, cfg.digest(), cfg.out)
    try:
        run_experiment(cfg)
    except OSError as exc:
        return _fail("io", str(exc), 3)
    except (ValueError, RuntimeError) as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}", 1)
    print(json.dumps({"status": "ok", "experiment": cfg.experiment, "out": cfg.out,
                      "config_hash": cfg.digest()}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
