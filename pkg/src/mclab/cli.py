"""Command line entry point: ``mclab <experiment> --config FILE [options]``."""
from __future__ import annotations

import argparse
import sys

from . import config as cfgmod
from .experiments import EXPERIMENTS, emit_report, run_experiment


def build_parser():
    parser = argparse.ArgumentParser(prog="mclab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="scenario file ([section] / key = value)")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, help="seed (overrides [simulation] seed)")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        if name == "hierarchy":
            for flag in ("A", "B", "R", "nmax", "tend", "dt"):
                p.add_argument(f"--{flag}", dest=f"h_{flag}")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {"experiment": {"type": args.command},
                 "simulation": {"seed": args.seed, "threads": args.threads},
                 "output": {"dir": args.out}}
    if args.command == "hierarchy":
        overrides["hierarchy"] = {k[2:]: v for k, v in vars(args).items() if k.startswith("h_")}
    try:
        cfg = cfgmod.load(args.config, overrides=overrides)
    except (cfgmod.ConfigError, OSError) as exc:
        print(f"mclab: configuration error: {exc}", file=sys.stderr)
        return 2
    report = run_experiment(cfg)
    code = emit_report(report, cfg, cfg["output"]["dir"])
    for v in report.verdicts:
        print(f"{v.name}: {v.verdict}")
    print(f"wrote {cfg['output']['dir']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
