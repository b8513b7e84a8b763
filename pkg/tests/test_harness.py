import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skinfusion.errors import ContractViolation
from skinfusion.harness import logs as logio
from skinfusion.harness import pipeline as pl
from skinfusion.harness.cli import main
from skinfusion.harness.report import (Phase, mean_rounded, phase_segmentation, reduction_percent,
                                       report_from_table, residual_report)

TABLE_RMSE = {
    "nominal": {"static": [92.56, 387.10, 329.22, 311.81], "transition": [125.07, 333.60, 349.84, 275.28]},
    "compensated": {"static": [18.32, 37.73, 43.89, 27.88], "transition": [85.43, 119.36, 175.63, 118.80]},
}


# --- segmentation ------------------------------------------------------

def test_segmentation_examples():
    assert np.all(phase_segmentation(np.zeros(50)) == Phase.STATIC)
    qd = np.zeros(100)
    qd[40:] = 0.01
    lab = phase_segmentation(qd)
    assert np.all(lab[:40] == Phase.STATIC)
    assert np.all(lab[40:70] == Phase.TRANSITION)
    assert np.all(lab[70:] == Phase.KINETIC)
    qd[50:53] = 0.0
    lab = phase_segmentation(qd)
    assert np.all(lab[50:53] == Phase.STATIC)
    # a new crossing at 53 opens its own window
    assert np.all(lab[53:83] == Phase.TRANSITION) and lab[83] == Phase.KINETIC
    with pytest.raises(ContractViolation):
        phase_segmentation(qd, 0.0)


def hand_labels(qd, omega=1e-4, window=30):
    out = []
    since = None
    for k, v in enumerate(qd):
        if abs(v) < omega:
            out.append(Phase.STATIC)
            continue
        if k > 0 and abs(qd[k - 1]) < omega:
            since = k
        out.append(Phase.TRANSITION if since is not None and k - since < window else Phase.KINETIC)
    return np.array(out)


@given(st.lists(st.sampled_from([0.0, 5e-5, -5e-5, 1e-4, 0.02, -0.3]), max_size=200),
       st.integers(1, 40))
def test_segmentation_matches_sequential_labelling(values, window):
    qd = np.array(values, dtype=float)
    lab = phase_segmentation(qd, 1e-4, window) if qd.size else np.zeros(0)
    assert np.array_equal(lab, hand_labels(qd, 1e-4, window))
    assert set(np.unique(lab)) <= {0, 1, 2}


# --- report arithmetic ---------------------------------------------------

def test_table_aggregates():
    rep = report_from_table(TABLE_RMSE)
    assert rep.aggregates["nominal"]["static"]["rmse"] == 280.17
    assert rep.aggregates["compensated"]["static"]["rmse"] == 31.96
    assert rep.aggregates["nominal"]["transition"]["rmse"] == 270.95
    assert rep.aggregates["compensated"]["transition"]["rmse"] == 124.81
    assert rep.reductions["static"] == 88.6
    assert rep.reductions["transition"] == 53.9


def test_rounding_rules():
    assert mean_rounded([0.005, 0.005]) == 0.01
    assert reduction_percent(100.0, 100.0) == 0.0
    assert reduction_percent(200.0, 100.0) == 50.0


def two_pass(e):
    n = len(e)
    mean = sum(e) / n
    rmse = math.sqrt(sum(x * x for x in e) / n)
    std = math.sqrt(sum((x - mean) ** 2 for x in e) / n)
    return rmse, std


def test_residual_report_against_two_pass(rng):
    T = 2000
    qd = np.where(rng.random((T, 3)) < 0.5, 0.0, 0.05)
    labels = phase_segmentation(qd)
    a = rng.normal(3.0, 40.0, (T, 3))
    b = rng.normal(-1.0, 10.0, (T, 3))
    rep = residual_report({"nominal": a, "compensated": b}, labels)
    for name, err in (("nominal", a), ("compensated", b)):
        for phase, ph in (("static", Phase.STATIC), ("transition", Phase.TRANSITION)):
            for j in range(3):
                ref = two_pass(list(err[labels[:, j] == ph, j]))
                assert abs(rep.stats[name][phase]["rmse"][j] - ref[0]) <= 1e-9
                assert abs(rep.stats[name][phase]["std"][j] - ref[1]) <= 1e-9
    same = residual_report({"a": a, "b": a}, labels)
    assert same.reductions == {"static": 0.0, "transition": 0.0}
    with pytest.raises(ContractViolation):
        residual_report({"a": a, "b": b[:-1]}, labels)


# --- logs --------------------------------------------------------------

def test_log_round_trip(tmp_path, rng):
    cols = {"t": np.arange(5) * 0.0025, "q": rng.normal(size=(5, 4)), "p": rng.normal(size=(5, 12)),
            "tau_ext_true": rng.normal(size=(5, 4))}
    logio.write_log(tmp_path / "a.csv", cols, {"seed": 3})
    back, meta = logio.read_log(tmp_path / "a.csv")
    assert meta == {"seed": "3"}
    for k, v in cols.items():
        assert np.allclose(back[k], v, rtol=1e-9, atol=0)
    (tmp_path / "b.csv").write_text("t,q\n1,2\n")
    with pytest.raises(ContractViolation):
        logio.read_log(tmp_path / "b.csv")
    with pytest.raises(ContractViolation):
        logio.write_log(tmp_path / "c.csv", {"t": np.zeros(3), "q": np.zeros((2, 4))})


# --- scenario plumbing -------------------------------------------------

def test_push_release_script():
    s = pl.push_release_script(pad=1, force=12.0, t_on=0.5, duration=1.0, count=3, gap=2.0)
    assert [(e.t_start, e.t_end) for e in s.events] == [(0.5, 1.5), (3.5, 4.5), (6.5, 7.5)]
    for bad in ({"count": 0}, {"duration": 0.0}, {"gap": -1.0}):
        with pytest.raises(ContractViolation):
            pl.push_release_script(**bad)


@pytest.fixture(scope="module")
def setup(ref_cfg):
    return pl.setup_from_config(ref_cfg)


def test_reference_velocity_follows_admittance(setup):
    sigma = np.full(4, 100.0)
    tau = np.zeros((800, 4))
    tau[:, 1] = -1000.0
    ref = pl.reference_velocity(setup, tau, sigma)
    adm = pl.admittance_params(setup.cfg)
    k = setup.cfg.float("estimator.deadband_k")
    drive = setup.model.kt * (1000.0 - k * 100.0)
    assert ref[-1, 1] == pytest.approx(min(drive / np.broadcast_to(adm.damping, (4,))[1], np.broadcast_to(adm.vlimit, (4,))[1]), rel=1e-3)
    assert np.all(ref[:, [0, 2, 3]] == 0.0)
    below = pl.reference_velocity(setup, np.full((50, 4), 149.0), sigma)
    assert np.all(below == 0.0)


def test_push_release_metrics_on_synthetic_run(setup):
    script = pl.push_release_script(t_on=0.25, duration=0.5, gap=0.5, count=1)
    T = 600
    t = np.arange(T) * setup.dt
    tau = np.zeros((T, 4))
    on = (t >= 0.25) & (t < 0.75)
    tau[on, 1] = -1000.0
    sigma = np.full(4, 100.0)
    ref = pl.reference_velocity(setup, tau, sigma)
    v = ref.copy()
    v[150, 1] += 0.05
    v[400, 1] = -0.02
    v[450, 3] = 0.01
    res = pl.ScenarioResult({"t": t, "tau_ext_true": tau}, v)
    m = pl.push_release_metrics(setup, res, script, sigma)
    assert m.joint == 1
    assert m.overshoot == pytest.approx(0.05)
    assert m.undershoot == pytest.approx(0.02)
    assert m.onset_delay == 0.0
    v[400, 1] = ref[400, 1]
    assert pl.push_release_metrics(setup, pl.ScenarioResult(res.columns, v), script, sigma).undershoot == \
        pytest.approx(0.01)


def test_demo_event_ordering(setup):
    """Compliance starts only after the dead band is crossed and stops once
    the estimator is back in StaticNoContact."""
    script = pl.push_release_script(force=25.0, t_on=0.3, duration=0.6)
    # band wide enough that nominal stick-slip kicks near standstill stay inside
    sigma = np.full(4, 300.0)
    res = pl.run_scenario(setup, script, 4.5, 0, control=True, sigma=sigma)
    c, v = res.columns, res.v_cmd
    k = setup.cfg.float("estimator.deadband_k")
    crossed = np.flatnonzero(np.any(np.abs(c["tau_ext"]) > k * sigma, axis=1) & (c["fsm_mode"] != 0))
    moving = np.flatnonzero(np.any(v != 0, axis=1))
    assert moving.size and crossed.size
    assert moving[0] >= crossed[0] and c["t"][moving[0]] >= 0.3
    back = np.flatnonzero((c["t"] > 0.9) & (c["fsm_mode"] == 0))
    assert back.size
    assert np.all(v[back[0]:] == 0.0)


# --- CLI -------------------------------------------------------------

def test_cli_simulate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--seed", "7", "--duration", "0.5", "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "log_s7.csv").read_bytes()
    assert a == (tmp_path / "b" / "log_s7.csv").read_bytes()
    cols, meta = logio.read_log(tmp_path / "a" / "log_s7.csv")
    assert meta["seed"] == "7" and cols["q"].shape == (200, 4) and "tau_fric_true" in cols


def test_cli_exit_codes(tmp_path):
    assert main(["simulate", "--set", "plant.dt"]) == 2
    assert main(["simulate", "--set", "plant.dt=-1", "--duration", "0.1", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--scenario", str(tmp_path / "missing.sched"), "--out", str(tmp_path)]) == 3
    assert main(["evaluate", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "e")]) == 3
    assert main(["train", str(tmp_path / "missing_manifest.txt")]) == 3
    assert main(["report", str(tmp_path / "missing.csv")]) == 3
    assert main(["bogus"]) == 2
    assert main(["--help"]) == 0


def test_cli_report_reproduces_table(tmp_path, capsys):
    path = tmp_path / "table.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "phase", "metric", "joint", "value"])
        for model, by in TABLE_RMSE.items():
            for phase, vals in by.items():
                for j, v in enumerate(vals):
                    w.writerow([model, phase, "rmse", j, v])
    assert main(["report", str(path), "--out", str(tmp_path / "r.txt")]) == 0
    text = (tmp_path / "r.txt").read_text()
    assert "mean 280.17" in text and "mean 31.96" in text and "reduction 53.9%" in text


def test_cli_build_dataset_refuses_forced_logs(tmp_path):
    assert main(["simulate", "--scenario", "push_release", "--motion", "hold", "--duration", "0.6",
                 "--out", str(tmp_path)]) == 0
    assert main(["build-dataset", str(tmp_path / "log_s0.csv"), "--out", str(tmp_path / "ds")]) == 2


def test_cli_evaluate_populates_both_phases(tmp_path):
    assert main(["simulate", "--seed", "1", "--duration", "8", "--out", str(tmp_path)]) == 0
    assert main(["evaluate", str(tmp_path / "log_s1.csv"), "--out", str(tmp_path / "ev")]) == 0
    rows = list(csv.reader(open(tmp_path / "ev" / "report.csv")))
    counts = {(r[1], r[3]): int(r[4]) for r in rows[1:] if r[2] == "count"}
    assert all(counts[(ph, str(j))] > 0 for ph in ("static", "transition") for j in range(4))
    assert (tmp_path / "ev" / "deadband.cfg").read_text().count("control.sigma_nominal") == 1
