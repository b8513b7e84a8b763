"""Push-release demo, nominal vs compensated, on identical seeds.

Uses a model and dead-band config produced by `residual_table.py`:

    python3 scripts/kinesthetic_demo.py --run runs/table [--seeds 0 1 2]
"""
import argparse
import sys
from pathlib import Path

from skinfusion.harness.cli import main


def cli():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", default="runs/table", help="directory written by residual_table.py")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    run = Path(args.run)
    for seed in args.seeds:
        argv = ["demo", "--config", "ref", "--config", str(run / "eval" / "deadband.cfg"),
                "--model", str(run / "model.tcn"), "--seed", str(seed), "--out", str(run / f"demo_s{seed}")]
        for item in args.set:
            argv += ["--set", item]
        code = main(argv)
        if code != 0:
            sys.exit(code)


if __name__ == "__main__":
    cli()
