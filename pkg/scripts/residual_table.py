"""Residual table end to end through the CLI.

Simulates force-free excitation logs, trains the compensator on all but the
last one and prints the residual report for the held-out log.  Writes the
dead-band config that `kinesthetic_demo.py` consumes.

    python3 scripts/residual_table.py --out runs/table [--logs 6] [--duration 120]
"""
import argparse
import sys
from pathlib import Path

from skinfusion.harness.cli import main


def run(*argv):
    code = main([str(a) for a in argv])
    if code != 0:
        sys.exit(code)


def cli():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/table")
    ap.add_argument("--logs", type=int, default=6, help="excitation logs; the last is held out (default 6)")
    ap.add_argument("--duration", type=float, default=120.0, help="seconds per log (default 120)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    args = ap.parse_args()
    out = Path(args.out)
    sets = [a for item in args.set for a in ("--set", item)]
    # build-dataset assigns the last round(0.15 * N) logs to validation
    run("build-dataset", "--generate", args.logs, "--duration", args.duration, "--seed", args.seed,
        "--set", f"train.val_fraction={1.0 / args.logs}", *sets, "--out", out / "dataset")
    run("train", out / "dataset" / "manifest.txt", *sets, "--out", out / "model.tcn")
    run("evaluate", "--manifest", out / "dataset" / "manifest.txt", "--model", out / "model.tcn", *sets,
        "--out", out / "eval")


if __name__ == "__main__":
    cli()
