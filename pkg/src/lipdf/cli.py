"""Command-line entry point: ``lipdf {bench1d,mcl,fit-demo} [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from lipdf.errors import ConfigError
from lipdf.harness import FILTERS, ExperimentConfig, emit_all, run_experiment


def parse_sweep(text: str) -> tuple[str, list[int]]:
    """``"particles=10:500:10"`` -> ``("particles", [10, 20, ..., 500])`` (stop inclusive)."""
    try:
        name, spec = text.split("=", 1)
        parts = [int(p) for p in spec.split(":")]
    except ValueError:
        raise ConfigError("sweep", f"expected name=start:stop[:step], got {text!r}") from None
    if name != "particles":
        raise ConfigError("sweep", f"only 'particles' can be swept, got {name!r}")
    if len(parts) == 1:
        return name, parts
    start, stop = parts[0], parts[1]
    step = parts[2] if len(parts) > 2 else 1
    if step < 1 or stop < start:
        raise ConfigError("sweep", "need start <= stop and step >= 1")
    return name, list(range(start, stop + 1, step))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipdf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in ("bench1d", "mcl", "fit-demo"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--filter", choices=FILTERS)
        p.add_argument("--particles", type=int)
        p.add_argument("--fulcrums", type=int, help="fulcrums per partitioned dimension")
        p.add_argument("--trials", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--scan-lines", type=int, dest="scan_lines")
        p.add_argument("--world", help="world YAML (mcl only)")
        p.add_argument("--vectorized", action="store_true", default=None,
                       help="score particles in one batched call")
        p.add_argument("--sweep", help="e.g. particles=10:500:10")
        p.add_argument("--out", help="records CSV; summary/timing tables go alongside")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        "experiment": args.experiment,
        "filter": args.filter,
        "particles": args.particles,
        "fulcrums": args.fulcrums,
        "trials": args.trials,
        "steps": args.steps,
        "seed": args.seed,
        "scan_lines": args.scan_lines,
        "world": args.world,
        "vectorized": args.vectorized,
    }
    if args.sweep:
        _, overrides["particles"] = parse_sweep(args.sweep)
    if args.config:
        return ExperimentConfig.load(args.config, **overrides)
    return ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def _fail(kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        report = run_experiment(cfg)
        written = emit_all(report, args.out) if args.out else []
    except ConfigError as exc:
        return _fail("config", str(exc), field=exc.field)
    except OSError as exc:
        return _fail("io", str(exc))
    except ValueError as exc:
        return _fail(type(exc).__name__, str(exc))
    with np.printoptions(precision=4):
        for row in report.summary:
            print(json.dumps({k: (float(v) if isinstance(v, (float, np.floating)) else v)
                              for k, v in row.items()}))
    for path in written:
        logging.getLogger("lipdf").info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
