"""Command-line entry point.

Every subcommand reads the reference configuration (or the ``--config``
files, later files overriding earlier ones) plus ``--set key=value``
overrides.  Exit codes: 0 success, 2 contract violation (bad input, config
or scenario), 3 I/O error, 1 any other failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from ..compensator.io import load_model, read_manifest, save_model, write_manifest
from ..config import Config, load_config, parse_override
from ..errors import ContractViolation
from . import logs as logio
from . import pipeline as pl
from .report import report_from_table

log = logging.getLogger("skinfusion")

EXIT_OK, EXIT_FAILURE, EXIT_CONTRACT, EXIT_IO = 0, 1, 2, 3


def _config(args) -> Config:
    paths = args.config or ["ref"]
    cfg = load_config(paths[0])
    for extra in paths[1:]:
        cfg = Config({**cfg.values, **load_config(extra).values})
    return cfg.with_overrides(args.set or ())


def _setup(args) -> pl.Setup:
    return pl.setup_from_config(_config(args), getattr(args, "friction", None))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_logs(setup, paths):
    channels = []
    for p in paths:
        cols, _meta = logio.read_log(p)
        channels.append(pl.log_channels(setup, cols, str(p)))
    return channels


def _meta(args, setup, **kw):
    return {"seed": args.seed, "dt": setup.dt, **kw}


# --- subcommands ----------------------------------------------------------

def cmd_simulate(args) -> int:
    setup = _setup(args)
    script = pl.resolve_scenario(setup, args.scenario)
    model = load_model(args.model) if args.model else None
    out = _out_dir(args)
    if args.motion == "excitation":
        q_cmd, qd_cmd = pl.excitation_trajectory(args.seed, args.duration, setup.dt, setup.model.joint_limits,
                                                 setup.model.n_joints)
        commands = (q_cmd, qd_cmd)
    else:
        commands = None
    if script.empty and model is None and commands is not None:
        rec = pl.simulate(setup.plant(args.seed), commands)
        cols = pl.record_columns(setup, rec)
    else:
        cols = pl.run_scenario(setup, script, args.duration, args.seed, model=model, commands=commands).columns
    path = out / f"log_s{args.seed}.csv"
    logio.write_log(path, cols, _meta(args, setup, scenario=args.scenario, motion=args.motion))
    print(path)
    return EXIT_OK


def cmd_identify(args) -> int:
    setup = _setup(args)
    logs = [logio.read_log(p)[0] for p in args.logs]
    for p, cols in zip(args.logs, logs):
        if np.any(cols.get("F", np.zeros(1)) != 0.0):
            raise ContractViolation(f"{p}: identification needs force-free logs")
    params, rmse = pl.identify(setup, logs)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pl.write_friction_file(args.out, params, rmse)
    print("fit rmse per joint:", " ".join(f"{v:.2f}" for v in rmse))
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    setup = _setup(args)
    out = _out_dir(args)
    entries = []
    if args.generate:
        n_val = max(1, int(round(args.generate * setup.cfg.float("train.val_fraction", 0.15))))
        for i in range(args.generate):
            seed = args.seed + i
            rec = pl.excitation_record(setup, seed, args.duration)
            path = out / f"excitation_s{seed}.csv"
            logio.write_log(path, pl.record_columns(setup, rec), {"seed": seed, "dt": setup.dt, "scenario": "none"})
            entries.append((path.name, "val" if i >= args.generate - n_val else "train"))
    entries += [(str(Path(p).resolve()), "train") for p in args.logs]
    entries += [(str(Path(p).resolve()), "val") for p in args.val or ()]
    if not entries:
        raise ContractViolation("no logs: give log files or --generate N")
    # refuse logs with scripted forces before anything trains on them
    for p, _split in entries:
        cols, _ = logio.read_log(out / p if not Path(p).is_absolute() else p)
        if np.any(cols.get("F", np.zeros(1)) != 0.0):
            raise ContractViolation(f"{p}: contains scripted external forces")
    manifest = out / "manifest.txt"
    write_manifest(manifest, entries, args.seed, {"window": setup.cfg.int("tcn.window", 30)})
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    setup = _setup(args)
    entries, _settings = read_manifest(args.manifest)
    train_logs = _load_logs(setup, [p for p, s in entries if s == "train"])
    val_logs = _load_logs(setup, [p for p, s in entries if s == "val"])
    if not train_logs:
        raise ContractViolation("manifest has no training logs")
    model, history = pl.train_compensator(setup, train_logs, val_logs, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, model)
    with open(out.with_suffix(".loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for h in history:
            w.writerow([h["epoch"], f"{h['train_loss']:.8g}", f"{h.get('val_loss', float('nan')):.8g}",
                        f"{h['lr']:.8g}"])
    print(out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    setup = _setup(args)
    paths = list(args.logs)
    if args.manifest:
        entries, _ = read_manifest(args.manifest)
        paths += [p for p, s in entries if s in ("val", "test")]
    if not paths:
        raise ContractViolation("no logs to evaluate")
    model = load_model(args.model) if args.model else None
    report = pl.evaluate(setup, model, _load_logs(setup, paths))
    out = _out_dir(args)
    (out / "report.txt").write_text(report.to_text())
    with open(out / "report.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(report.to_csv_rows())
    (out / "deadband.cfg").write_text(pl.deadband_config(report))
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_demo(args) -> int:
    setup = _setup(args)
    c = setup.cfg
    script = pl.resolve_scenario(setup, args.scenario)
    t_end = max((e.t_end for e in script.events), default=0.0)
    duration = args.duration or t_end + c.float("demo.tail", 2.0)
    engage = c.str("control.engage", "contact")
    runs = [("nominal", None)]
    if args.model:
        runs.append(("compensated", load_model(args.model)))
    out = _out_dir(args)
    lines = []
    for name, model in runs:
        sigma = setup.deadband_sigma(name)
        res = pl.run_scenario(setup, script, duration, args.seed, model=model, control=True, sigma=sigma,
                              engage=engage)
        logio.write_log(out / f"demo_{name}.csv", res.columns, _meta(args, setup, scenario=args.scenario, run=name))
        m = pl.push_release_metrics(setup, res, script, sigma)
        lines.append(f"{name}: " + " ".join(f"{k}={v:.6g}" for k, v in vars(m).items()))
    (out / "demo.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_report(args) -> int:
    rmse, std = {}, {}
    with open(args.table, newline="") as fh:
        for row in csv.DictReader(fh):
            if row.get("joint") in (None, "", "mean") or row["metric"] not in ("rmse", "std"):
                continue
            tgt = rmse if row["metric"] == "rmse" else std
            tgt.setdefault(row["model"], {}).setdefault(row["phase"], []).append(float(row["value"]))
    if not rmse:
        raise ContractViolation(f"{args.table}: no per-joint rmse rows")
    text = report_from_table(rmse, std or None).to_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", help="key=value config file ('ref' = packaged reference; "
                        "repeat to layer files)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", type=_override, help="override a config key")
    common.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    common.add_argument("--friction", help="identified nominal friction file (default: configured friction)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="skinfusion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the plant and estimator, write a CSV log")
    s.add_argument("--scenario", default="none", help="none, push_release or a force schedule file (default none)")
    s.add_argument("--motion", choices=("excitation", "hold"), default="excitation",
                   help="joint command: seeded excitation or hold the start pose (default excitation)")
    s.add_argument("--duration", type=float, default=10.0, help="seconds (default 10)")
    s.add_argument("--model", help="TCN weights for the compensated estimate")
    s.add_argument("--out", default="out", help="output directory (default out)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("identify", parents=[common], help="fit nominal friction to force-free logs")
    s.add_argument("logs", nargs="+")
    s.add_argument("--out", default="friction.cfg", help="friction file to write (default friction.cfg)")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("build-dataset", parents=[common], help="collect force-free logs into a manifest")
    s.add_argument("logs", nargs="*", help="existing training logs")
    s.add_argument("--val", nargs="*", help="existing validation logs")
    s.add_argument("--generate", type=int, default=0, help="simulate N excitation logs (seeds seed..seed+N-1)")
    s.add_argument("--duration", type=float, default=120.0, help="seconds per generated log (default 120)")
    s.add_argument("--out", default="dataset", help="output directory (default dataset)")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", parents=[common], help="train the TCN compensator")
    s.add_argument("manifest")
    s.add_argument("--out", default="model.tcn", help="weights file (default model.tcn)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="residual statistics on force-free logs")
    s.add_argument("logs", nargs="*")
    s.add_argument("--manifest", help="also evaluate the manifest's val/test logs")
    s.add_argument("--model", help="TCN weights; without it only the nominal model is reported")
    s.add_argument("--out", default="eval", help="output directory (default eval)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("demo", parents=[common], help="closed-loop admittance scenario, nominal vs compensated")
    s.add_argument("--scenario", default="push_release")
    s.add_argument("--model", help="TCN weights for the compensated run")
    s.add_argument("--duration", type=float, default=None, help="seconds (default: last release + demo.tail)")
    s.add_argument("--out", default="demo", help="output directory (default demo)")
    s.set_defaults(func=cmd_demo)

    s = sub.add_parser("report", parents=[common], help="recompute aggregates from a per-joint report table")
    s.add_argument("table", help="CSV with columns model,phase,metric,joint,value")
    s.add_argument("--out", help="write the text report here")
    s.set_defaults(func=cmd_report)
    return p


def _override(text: str):
    try:
        return parse_override(text)
    except ContractViolation as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONTRACT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - last-resort exit status
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
