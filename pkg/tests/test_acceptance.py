"""Acceptance criteria 1-10 on the reference configuration.

Each test records one PASS/FAIL line (shown in the terminal summary) and
then asserts the criterion at its stated tolerance.  Criteria 7-9 share one
compensator trained on 10 min of seeded excitation and evaluated on a
held-out 2 min log.
"""
import itertools
import time

import numpy as np
import pytest

from oracles import fd_point_jacobian, lagrangian_torque, stribeck_reference
from skinfusion.compensator.online import OnlineCompensator
from skinfusion.compensator.tcn import TcnModel, loss_and_grad, tcn_forward
from skinfusion.compensator.train import TrainConfig, train
from skinfusion.dynamics import ContactFrame, axis_rotation, contact_jacobian, forward_kinematics, inverse_dynamics
from skinfusion.estimator import ContactAwareEstimator, FsmMode, FsmState, fsm_step
from skinfusion.friction import (FrictionParams, HystereticFrictionState, hysteretic_step, load_adjusted_params,
                                 stribeck_friction)
from skinfusion.harness import pipeline as pl
from skinfusion.harness.report import report_from_table
from skinfusion.plant import ExternalForceScript, ForceEvent, MotorSample, simulate
from skinfusion.skin import SkinFrameSample

TRAIN_SEEDS = (0, 1, 2, 3, 4)   # 5 x 120 s = 10 min
EVAL_SEED = 5                   # held-out 2 min
LOG_SECONDS = 120.0


@pytest.fixture(scope="module")
def setup(ref_cfg):
    return pl.setup_from_config(ref_cfg)


# --- 1 ---------------------------------------------------------------

def test_criterion_01_dynamics(ref_model, acceptance):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_id = 0.0
    for _ in range(100):
        q, qd, qdd = rng.uniform(-2, 2, (3, 4))
        tau = inverse_dynamics(ref_model, q=q, qd=qd, qdd=qdd)
        worst_id = max(worst_id, np.max(np.abs(tau - lagrangian_torque(ref_model, q, qd, qdd))))
    worst_j = 0.0
    for _ in range(100):
        q = rng.uniform(-np.pi, np.pi, 4)
        link = int(rng.integers(0, 4))
        off = rng.uniform(-0.1, 0.3, 3)
        p, _ = forward_kinematics(ref_model, q, link, off)
        axis = rng.normal(size=3)
        R = axis_rotation(axis / np.linalg.norm(axis), rng.uniform(-3, 3))
        J = contact_jacobian(ref_model, q, ContactFrame(p, R, link))
        Jfd = R.T @ fd_point_jacobian(ref_model, q, link, off)
        worst_j = max(worst_j, np.max(np.abs(J[:3] - Jfd)))
    dt = time.perf_counter() - t0
    ok = worst_id <= 1e-6 and worst_j <= 1e-5 and dt < 10
    acceptance(1, ok, f"inverse dynamics err {worst_id:.2e} (<=1e-6), Jacobian err {worst_j:.2e} (<=1e-5), "
                      f"{dt:.1f} s (<10 s)")
    assert ok


# --- 2 ---------------------------------------------------------------

def test_criterion_02_friction(ref_friction, acceptance):
    t0 = time.perf_counter()
    one = lambda **kw: FrictionParams(*(np.array([kw[k]]) for k in ("tau_c", "tau_s", "qd_s", "delta", "b",
                                                                        "alpha_c", "alpha_v")))
    p = one(tau_c=0.5, tau_s=1.0, qd_s=0.1, delta=2.0, b=0.2, alpha_c=0.0, alpha_v=0.0)
    point = float(stribeck_friction(p, np.array([0.1]))[0])
    ref_point = float(stribeck_reference(0.5, 1.0, 0.1, 2.0, 0.2, 0.1))
    v = np.linspace(-3, 3, 601)
    odd = np.max(np.abs(stribeck_friction(ref_friction, v[:, None]) + stribeck_friction(ref_friction, -v[:, None])))
    big = 1e3
    limit = np.max(np.abs(stribeck_friction(ref_friction, np.full(4, big)) - (ref_friction.tau_c + ref_friction.b * big)))
    g = np.array([3.0, 50.0, 20.0, 0.0])
    pl_ = load_adjusted_params(ref_friction, g)
    worst_rel = 0.0
    for qd in (0.01, 0.05, 0.2, -0.1, 1.0):
        st = HystereticFrictionState.default(ref_friction)
        for _ in range(4000):
            st, tau = hysteretic_step(st, pl_, np.full(4, qd), 0.0025)
        ref = stribeck_friction(pl_, np.full(4, qd))
        worst_rel = max(worst_rel, np.max(np.abs(tau - ref) / np.abs(ref)))
    h = one(tau_c=1.0, tau_s=1.5, qd_s=0.05, delta=2.0, b=0.1, alpha_c=0.0, alpha_v=0.0)
    st = HystereticFrictionState.default(h)
    t = np.arange(0, 8.0, 0.0025)
    vel = 0.1 * np.sin(2 * np.pi * t / 4.0)
    out = np.empty_like(t)
    for k, vk in enumerate(vel):
        st, o = hysteretic_step(st, h, np.array([vk]), 0.0025)
        out[k] = o[0]
    sel = (t > 4.0) & (np.abs(vel - 0.01) < 2e-4)
    loop = abs(out[sel & (np.gradient(vel) > 0)].mean() - out[sel & (np.gradient(vel) < 0)].mean())
    dt = time.perf_counter() - t0
    ok = (abs(point - 0.70394) < 5e-6 and abs(point - ref_point) < 1e-12 and odd == 0.0
          and limit < 1e-9 * big and worst_rel <= 0.01 and loop > 0.05 * 1.5 and dt < 30)
    acceptance(2, ok, f"point {point:.5f} (0.70394), odd err {odd:.1e}, limit err {limit:.1e}, "
                      f"convergence {100 * worst_rel:.3f}% (<=1%), reversal loop {loop:.3f} (>0.075), {dt:.1f} s")
    assert ok


# --- 3 ---------------------------------------------------------------

def _run_estimator(setup, rec, model):
    est = ContactAwareEstimator(model, setup.nominal_friction, setup.layout, setup.detector(),
                                omega_static=setup.omega, debounce_ticks=setup.debounce_ticks)
    out = []
    for k in range(len(rec)):
        m = MotorSample(rec.t[k], rec.current[k], rec.q[k], rec.qd[k], rec.qdd[k])
        out.append(est.update(m, SkinFrameSample(rec.t[k], rec.pressures[k])))
    return out


def test_criterion_03_static_exactness(setup, acceptance):
    t0 = time.perf_counter()
    q0 = np.array([0.0, 0.3, -0.4, 0.0])
    script = ExternalForceScript((ForceEvent(0.5, 1.5, 2, [0, 0, 10.0]),))
    rec = simulate(setup.plant(11), None, script, steps=800, q0=q0)
    ref = _run_estimator(setup, rec, setup.model)
    held = np.flatnonzero((rec.t > 0.6) & (rec.t < 1.5))
    modes_ok = all(ref[k].mode == FsmMode.STATIC_WITH_CONTACT for k in held)
    tau = np.array([ref[k].tau_ext for k in held])
    truth = rec.tau_ext_true[held]
    sigma = setup.plant_cfg.sigma_i
    err = np.abs(tau.mean(0) - truth.mean(0))
    invariant = True
    for factor in (0.5, 1.5):
        bad = _run_estimator(setup, rec, setup.model.scaled_inertia(factor))
        invariant &= all(bad[k].tau_ext.tobytes() == ref[k].tau_ext.tobytes() for k in held)
    dt = time.perf_counter() - t0
    ok = modes_ok and np.all(err <= 3 * sigma) and invariant and dt < 30
    acceptance(3, ok, f"|mean tau_hat - J^T F| max {err.max():.2f} (<= 3 sigma = {3 * sigma:.0f}), "
                      f"bit-invariant under +-50% inertia: {invariant}, {dt:.1f} s")
    assert ok


# --- 4 ---------------------------------------------------------------

def test_criterion_04_fsm(acceptance):
    SNC, SWC, DYN = FsmMode
    table = {(SNC, True, True): SWC, (SNC, True, False): SWC, (SWC, True, False): DYN,
             (SWC, False, False): DYN, (DYN, False, True): SNC}
    base = np.array([1.0])
    mismatches = 0
    for mode, c, s in itertools.product(FsmMode, (False, True), (False, True)):
        st = FsmState() if mode == SNC else FsmState(mode=mode, t_on=0.0, baseline=base, previous=base, latches=1)
        if fsm_step(st, c, s, base).mode != table.get((mode, c, s), mode):
            mismatches += 1
    rng = np.random.default_rng(4)
    episodes_ok = True
    for _ in range(200):
        st, episodes = FsmState(), 0
        for c, s in rng.random((300, 2)) < (0.3, 0.6):
            before = st.mode
            st = fsm_step(st, bool(c), bool(s), rng.normal(size=1), debounce_ticks=5)
            episodes += before == SNC and st.mode == SWC
        episodes_ok &= st.latches == episodes
    ok = mismatches == 0 and episodes_ok
    acceptance(4, ok, f"{12 - mismatches}/12 transition cells match, one latch per episode: {episodes_ok}")
    assert ok


# --- 5 ---------------------------------------------------------------

def test_criterion_05_tcn_integrity(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    m = TcnModel.initialize(20, 4, seed=5, channels=8)
    x = rng.normal(size=(6, 30, 20))
    yl, yh = rng.normal(size=(2, 6, 4))
    _, grads = loss_and_grad(m, x, yl, yh)
    worst, h = 0.0, 1e-6
    for p, g in zip(m.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            o = flat[i]
            flat[i] = o + h
            lp, _ = loss_and_grad(m, x, yl, yh, with_grad=False)
            flat[i] = o - h
            lm, _ = loss_and_grad(m, x, yl, yh, with_grad=False)
            flat[i] = o
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(1.0, abs(fd)))
    w = rng.normal(size=(20, 60))
    w2 = w.copy()
    w2[:, : 60 - m.receptive_field] += 1e3
    w3 = w.copy()
    w3[:, -1] += 1.0
    causal = tcn_forward(m, w)[2].tobytes() == tcn_forward(m, w2)[2].tobytes() and \
        tcn_forward(m, w)[2].tobytes() != tcn_forward(m, w3)[2].tobytes()
    from skinfusion.compensator.data import WindowDataset
    xs = rng.normal(size=(30, 20))
    one = WindowDataset([xs], [rng.normal(size=(30, 4))], [rng.normal(size=(30, 4))], np.zeros(1, int),
                        np.array([29]), 30, np.zeros(20), np.ones(20), np.ones(4))
    start, _ = loss_and_grad(m, *one.batch([0]), with_grad=False)
    fit, hist = train(TcnModel.initialize(20, 4, seed=5, channels=8), one,
                      TrainConfig(epochs=600, batch=1, lr=0.02, momentum=0.9))
    rel = hist[-1]["train_loss"] / start
    cfg = TrainConfig(epochs=2, batch=4, lr=0.02, seed=9)
    data = WindowDataset([rng.normal(size=(80, 20))], [rng.normal(size=(80, 4))], [rng.normal(size=(80, 4))],
                         np.zeros(51, int), np.arange(29, 80), 30, np.zeros(20), np.ones(20), np.ones(4))
    a, _ = train(TcnModel.initialize(20, 4, seed=2, channels=8), data, cfg)
    b, _ = train(TcnModel.initialize(20, 4, seed=2, channels=8), data, cfg)
    repro = all(p.tobytes() == q.tobytes() for p, q in zip(a.params(), b.params()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and causal and rel < 1e-6 and repro and dt < 120
    acceptance(5, ok, f"gradient rel err {worst:.1e} (<=1e-4), causal: {causal}, overfit rel loss {rel:.1e} (<1e-6), "
                      f"bit-reproducible: {repro}, {dt:.1f} s (<120 s)")
    assert ok


# --- 6 ---------------------------------------------------------------

def test_criterion_06_latch_disambiguation(setup, acceptance):
    """Replay a log up to contact onset, then continue it twice: once force
    free and once with a push.  The latched channel must not see the push."""
    t0 = time.perf_counter()
    q0 = np.array([0.0, 0.3, -0.4, 0.0])
    onset = 0.5
    free = simulate(setup.plant(6), None, ExternalForceScript(), steps=400, q0=q0)
    push = simulate(setup.plant(6), None, ExternalForceScript((ForceEvent(onset, 1.0, 2, [0, 0, 10.0]),)),
                    steps=400, q0=q0)
    model = TcnModel.initialize(20, 4, seed=6)
    rng = np.random.default_rng(6)
    model.mean, model.scale = rng.normal(size=20), rng.uniform(0.5, 2.0, 20)
    outs = []
    for rec in (free, push):
        comp = OnlineCompensator(model, setup.omega, "latched", setup.cfg.str("tcn.latch_reset"))
        est = ContactAwareEstimator(setup.model, setup.nominal_friction, setup.layout, setup.detector(),
                                    omega_static=setup.omega, debounce_ticks=setup.debounce_ticks)
        rows, taus = [], []
        for k in range(len(rec)):
            m = MotorSample(rec.t[k], rec.current[k], rec.q[k], rec.qd[k], rec.qdd[k])
            d = est.update(m, SkinFrameSample(rec.t[k], rec.pressures[k])).decomp
            # the counterfactual shares the contact flag: onset is a skin event
            tau, _ = comp.step(m, d, contact=rec.t[k] >= onset, mode=1 if rec.t[k] >= onset else 0)
            rows.append(comp.last_input.copy())
            taus.append(tau)
        outs.append((np.array(rows), np.array(taus)))
    after = free.t >= onset
    n = 4
    hid = slice(4 * n, 5 * n)
    same_channel = outs[0][0][after][:, hid].tobytes() == outs[1][0][after][:, hid].tobytes()
    differs = not np.array_equal(push.current[after], free.current[after])
    # the stiff servo holds the arm, so the motor channels agree too
    same_motor = np.array_equal(outs[0][0][:, :hid.start], outs[1][0][:, :hid.start])
    dtau = float(np.max(np.abs(outs[0][1][after] - outs[1][1][after])))
    dt = time.perf_counter() - t0
    ok = same_channel and differs and same_motor and dtau <= 1e-9 and dt < 60
    acceptance(6, ok, f"latched channel bit-equal after onset: {same_channel}, |d tau_TCN| {dtau:.1e} (<=1e-9), "
                      f"{dt:.1f} s")
    assert ok


# --- 7, 8, 9: shared trained compensator -------------------------------

@pytest.fixture(scope="module")
def trained(setup):
    t0 = time.perf_counter()
    logs = []
    for seed in TRAIN_SEEDS + (EVAL_SEED,):
        rec = pl.excitation_record(setup, seed, LOG_SECONDS)
        logs.append(pl.log_channels(setup, pl.record_columns(setup, rec), f"excitation_s{seed}"))
    model, _hist = pl.train_compensator(setup, logs[:-1])
    report = pl.evaluate(setup, model, logs[-1:])
    elapsed = time.perf_counter() - t0
    sigma = {name: np.array(report.stats[name]["transition"]["std"]) for name in ("nominal", "compensated")}
    return model, report, sigma, elapsed


def test_criterion_07_residual_reduction(trained, acceptance):
    _model, report, _sigma, elapsed = trained
    r_static, r_trans = report.reductions["static"], report.reductions["transition"]
    agg = report.aggregates
    ok = r_static >= 70.0 and r_trans >= 30.0 and elapsed < 15 * 60
    acceptance(7, ok, f"static RMSE {agg['nominal']['static']['rmse']:.2f} -> {agg['compensated']['static']['rmse']:.2f} "
                      f"({r_static:.1f}% >= 70%), transition {agg['nominal']['transition']['rmse']:.2f} -> "
                      f"{agg['compensated']['transition']['rmse']:.2f} ({r_trans:.1f}% >= 30%), "
                      f"{elapsed / 60:.1f} min (<15)")
    assert ok


def test_criterion_08_dead_band(setup, trained, acceptance):
    model, _report, sigma, _ = trained
    s = sigma["compensated"]
    # dead band as the only gate: compliance runs in every FSM mode
    quiet = pl.run_scenario(setup, ExternalForceScript(), 60.0, 8, model=model, control=True, sigma=s,
                            engage="always")
    still = float(np.max(np.abs(quiet.v_cmd)))
    script = pl.push_release_script(pad=setup.cfg.int("demo.pad"), force=setup.cfg.float("demo.force"),
                                    t_on=0.5, duration=1.0)
    res = pl.run_scenario(setup, script, 1.0, 8, model=model, control=True, sigma=s)
    m = pl.push_release_metrics(setup, res, script, s)
    ok = still == 0.0 and m.onset_delay <= 0.1
    acceptance(8, ok, f"force-free 60 s max |v_cmd| {still:.1e} (== 0), push onset {1000 * m.onset_delay:.1f} ms "
                      f"(<= 100 ms)")
    assert ok


def test_criterion_09_kinesthetic_demo(setup, trained, acceptance):
    model, _report, sigma, _ = trained
    script = pl.resolve_scenario(setup, "push_release")
    duration = script.events[-1].t_end + setup.cfg.float("demo.tail")
    metrics = {}
    for name, mdl in (("nominal", None), ("compensated", model)):
        res = pl.run_scenario(setup, script, duration, 9, model=mdl, control=True, sigma=sigma[name])
        metrics[name] = pl.push_release_metrics(setup, res, script, sigma[name])
    nom, comp = metrics["nominal"], metrics["compensated"]
    ok = comp.overshoot < nom.overshoot and comp.undershoot == 0.0
    acceptance(9, ok, f"{len(script.events)} pushes: overshoot {nom.overshoot:.4f} -> {comp.overshoot:.4f} rad/s, "
                      f"undershoot {nom.undershoot:.4f} -> {comp.undershoot:.4f} rad/s (must be 0)")
    assert ok


# --- 10 --------------------------------------------------------------

def test_criterion_10_report_arithmetic(acceptance):
    rmse = {
        "nominal": {"static": [92.56, 387.10, 329.22, 311.81], "transition": [125.07, 333.60, 349.84, 275.28]},
        "compensated": {"static": [18.32, 37.73, 43.89, 27.88], "transition": [85.43, 119.36, 175.63, 118.80]},
    }
    agg = report_from_table(rmse).aggregates
    a, b = agg["nominal"]["static"]["rmse"], agg["compensated"]["static"]["rmse"]
    ok = f"{a:.2f}" == "280.17" and f"{b:.2f}" == "31.96"
    acceptance(10, ok, f"static aggregates {a:.2f} (280.17) and {b:.2f} (31.96)")
    assert ok
