"""``chest <command> [--config PATH] [--set key=value ...] [--out DIR] [--seed N]``

Commands: train, eval, ablate, check-geometry, check-grad.
Exit codes: 0 success, 1 invalid configuration, 2 runtime or I/O error,
3 verification suite failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checks
from .config import load_config
from .errors import ChestError, ConfigError
from .experiment import run_ablation, run_eval, run_training

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3

COMMANDS = ("train", "eval", "ablate", "check-geometry", "check-grad")

log = logging.getLogger("chest")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chest", description="Train and evaluate two-space proxy embeddings.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML config file (defaults apply to anything it omits)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. loss.delta_H=20 (repeatable)")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.add_argument("--seed", type=int, help="training seed, same as --set train.seed=N")
    p.add_argument("--checkpoint", help="checkpoint to evaluate (eval only)")
    p.add_argument("--jobs", type=int, help="parallel processes for ablate")
    p.add_argument("--configs", type=int, default=100, help="random configurations per gradient check")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _report(results, out, name):
    lines = [r.line() for r in results]
    for line in lines:
        print(line)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text("\n".join(lines) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def run(args) -> int:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    cfg = load_config(args.config, overrides)
    out = args.out or cfg.output_dir

    if args.command == "check-geometry":
        results, secs = checks.run_timed(checks.geometry_suite)
        print(f"geometry suite: {secs:.2f} s")
        return _report(results, args.out, "check-geometry.txt")
    if args.command == "check-grad":
        results, secs = checks.run_timed(checks.gradient_suite, configs=args.configs, cfg=cfg.ball)
        print(f"gradient suite: {secs:.2f} s")
        return _report(results, args.out, "check-grad.txt")
    if args.command == "train":
        res = run_training(cfg, out)
        print(json.dumps({"out": str(res.out_dir), "eval": res.eval}))
        return EXIT_OK
    if args.command == "eval":
        if not args.checkpoint:
            raise ConfigError(["eval needs --checkpoint"])
        rec = run_eval(cfg, args.checkpoint, args.out)
        print(json.dumps(rec.to_dict()["eval"]))
        return EXIT_OK
    rows = run_ablation(cfg, out, jobs=args.jobs)
    for row in rows:
        print(json.dumps(row))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChestError, OSError, ValueError, ArithmeticError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
