"""Scenario orchestration: setup from config, force-free excitation runs,
friction identification, dataset assembly, training, evaluation and the
closed-loop kinesthetic scenario."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..compensator.data import LogChannels, build_dataset, gate_hidden_torque, input_channels
from ..compensator.online import OnlineCompensator, infer_log
from ..compensator.tcn import TcnModel
from ..compensator.train import TrainConfig, train
from ..config import (Config, bristle_gains, fill_dataclass, friction_params, pad_layout, parse_config_text,
                      robot_model)
from ..control import AdmittanceParams, admittance_update
from ..dynamics import gravity_vector, inverse_dynamics
from ..errors import ContractViolation
from ..estimator import ContactAwareEstimator, FsmMode, compute_residual, dead_band
from ..friction import FrictionParams, identify_friction
from ..plant import (Command, ExternalForceScript, ForceEvent, Plant, PlantConfig, SimRecord, excitation_trajectory,
                     load_schedule, simulate)
from ..skin import ContactDetector
from .report import ResidualReport, phase_segmentation, residual_report

FRICTION_KEYS = ("tau_c", "tau_s", "qd_s", "delta", "b", "alpha_c", "alpha_v")


@dataclass
class Setup:
    """Everything the reference configuration pins down."""

    cfg: Config
    model: object
    true_friction: FrictionParams
    nominal_friction: FrictionParams
    layout: object
    plant_cfg: PlantConfig
    sigma0: object = None
    sigma1: object = None

    @property
    def dt(self) -> float:
        return self.plant_cfg.dt

    @property
    def omega(self) -> float:
        return self.cfg.float("estimator.omega_static", 1e-4)

    @property
    def debounce_ticks(self) -> int:
        return int(round(self.cfg.float("estimator.debounce", 0.05) / self.dt))

    def plant(self, seed: int) -> Plant:
        return Plant(self.model, self.true_friction, self.layout, self.plant_cfg, seed=seed, sigma0=self.sigma0,
                     sigma1=self.sigma1)

    def detector(self) -> ContactDetector:
        return ContactDetector(self.layout.n_pads, self.cfg.float("skin.threshold"), self.cfg.float("skin.hysteresis"))

    def train_config(self, **kw) -> TrainConfig:
        return fill_dataclass(TrainConfig, self.cfg, "train", **kw)

    def deadband_sigma(self, which: str) -> np.ndarray:
        key = f"control.sigma_{which}"
        if not self.cfg.has(key):
            raise ContractViolation(f"{key} is not set; run `evaluate` and pass its deadband config")
        return np.broadcast_to(self.cfg.array(key), (self.model.n_joints,)).astype(float)


def setup_from_config(cfg: Config, friction_file=None) -> Setup:
    model = robot_model(cfg)
    n = model.n_joints
    true_fr = friction_params(cfg, n)
    nominal = read_friction_file(friction_file, n) if friction_file else true_fr
    s0, s1 = bristle_gains(cfg)
    pcfg = fill_dataclass(PlantConfig, cfg, "plant", skin_rate=cfg.float("skin.rate", 1000.0))
    return Setup(cfg, model, true_fr, nominal, pad_layout(cfg), pcfg, s0, s1)


# --- friction files -------------------------------------------------------

def write_friction_file(path, params: FrictionParams, rmse=None):
    lines = ["# identified nominal friction, current units"]
    for k in FRICTION_KEYS:
        lines.append(f"{k} = " + ", ".join(f"{v:.10g}" for v in getattr(params, k)))
    if rmse is not None:
        lines.append("# fit rmse = " + ", ".join(f"{v:.4g}" for v in rmse))
    Path(path).write_text("\n".join(lines) + "\n")


def read_friction_file(path, n: int) -> FrictionParams:
    vals = parse_config_text(Path(path).read_text())
    missing = [k for k in FRICTION_KEYS if k not in vals]
    if missing:
        raise ContractViolation(f"{path}: missing friction keys {missing}")
    arr = {k: np.broadcast_to(np.array([float(x) for x in vals[k].split(",")]), (n,)) for k in FRICTION_KEYS}
    return FrictionParams(**arr)


# --- force-free excitation ------------------------------------------------

def excitation_record(setup: Setup, seed: int, duration: float) -> SimRecord:
    """Open-loop force-free run; the command and plant noise share ``seed``."""
    q_cmd, qd_cmd = excitation_trajectory(seed, duration, setup.dt, setup.model.joint_limits, setup.model.n_joints)
    rec = simulate(setup.plant(seed), (q_cmd, qd_cmd))
    rec.meta.update(seed=seed, duration=duration, scenario="excitation")
    return rec


def record_residual(setup: Setup, rec: SimRecord):
    return compute_residual(rec.t, rec.current, rec.q, rec.qd, rec.qdd, setup.model, setup.nominal_friction)


def log_channels(setup: Setup, cols: dict, name: str = "") -> LogChannels:
    """Compensator channels of a logged run, recomputed with the nominal model."""
    d = compute_residual(cols["t"], cols["I"], cols["q"], cols["qd"], cols["qdd"], setup.model, setup.nominal_friction)
    hidden = gate_hidden_torque(d.tau_res, cols["qd"], setup.omega)
    chans = input_channels(cols["q"], cols["qd"], cols["qdd"], d.tau_dyn, hidden)
    force_free = not np.any(cols.get("F", np.zeros(1)) != 0.0)
    return LogChannels(chans, d.tau_res, np.asarray(cols["qd"]), name, force_free)


def record_columns(setup: Setup, rec: SimRecord, tau_tcn=None, tau_ext=None, mode=None) -> dict:
    """Canonical log columns (see ``harness.logs``) of an open-loop record."""
    d = record_residual(setup, rec)
    T, n = rec.q.shape
    tau_tcn = np.zeros((T, n)) if tau_tcn is None else tau_tcn
    return {
        "t": rec.t, "q": rec.q, "qd": rec.qd, "qdd": rec.qdd, "I": rec.current,
        "tau_meas": d.tau_meas, "tau_dyn": d.tau_dyn, "tau_fric": d.tau_fric, "tau_res": d.tau_res,
        "tau_tcn": tau_tcn, "tau_ext": d.tau_res if tau_ext is None else tau_ext,
        "fsm_mode": np.zeros(T) if mode is None else mode,
        "p": rec.pressures,
        "tau_fric_true": rec.tau_fric_true, "tau_ext_true": rec.tau_ext_true, "F": rec.force,
    }


def identify(setup: Setup, logs: list[dict]):
    """Fit the nominal friction to force-free logs: residual of the rigid-body
    model against velocity and gravity load.  Returns (params, rmse)."""
    m = setup.model
    qd = np.concatenate([c["qd"] for c in logs])
    q = np.concatenate([c["q"] for c in logs])
    qdd = np.concatenate([c["qdd"] for c in logs])
    cur = np.concatenate([c["I"] for c in logs])
    rigid = cur - inverse_dynamics(m, q=q, qd=qd, qdd=qdd) / m.kt
    g_abs = np.abs(gravity_vector(m, q)) / m.kt
    return identify_friction(qd, g_abs, rigid, min_speed=setup.omega)


# --- training and evaluation ---------------------------------------------

def tcn_dataset(setup: Setup, logs: list[LogChannels], stats=None):
    c = setup.cfg
    return build_dataset(
        logs, window=c.int("tcn.window", 30), cutoff=c.float("tcn.cutoff", 5.0), fs=1.0 / setup.dt,
        omega_th=setup.omega, dynamic_stride=c.int("tcn.dynamic_stride", 10), stats=stats,
    )


def train_compensator(setup: Setup, train_logs, val_logs=(), seed: int | None = None):
    """Returns (model, history)."""
    c = setup.cfg
    ds = tcn_dataset(setup, train_logs)
    val = tcn_dataset(setup, list(val_logs), stats=(ds.mean, ds.scale, ds.label_scale)) if val_logs else None
    tcfg = setup.train_config() if seed is None else setup.train_config(seed=seed)
    model = TcnModel.initialize(
        ds.inputs[0].shape[1], train_logs[0].tau_res.shape[1], seed=tcfg.seed, window=c.int("tcn.window", 30),
        kernel=c.int("tcn.kernel", 4), dilations=tuple(int(x) for x in c.array("tcn.dilations", "1,2,4,8")),
        channels=c.int("tcn.channels", 32), w_low=c.float("tcn.w_low", 1.0), w_high=c.float("tcn.w_high", 2.0),
    )
    return train(model, ds, tcfg, val=val)


def evaluate(setup: Setup, model: TcnModel | None, logs: list[LogChannels], window: int | None = None):
    """Residual report of both models on force-free logs."""
    if not logs:
        raise ContractViolation("no logs to evaluate")
    for lg in logs:
        if not lg.force_free:
            raise ContractViolation(f"log {lg.name!r} is not force-free")
    window = window or setup.cfg.int("eval.transition_window", 30)
    nominal, comp, labels = [], [], []
    for lg in logs:
        nominal.append(lg.tau_res)
        if model is not None:
            tau, _ready = infer_log(model, lg.channels)
            comp.append(lg.tau_res - tau)
        labels.append(phase_segmentation(lg.qd, setup.omega, window))
    errors = {"nominal": np.concatenate(nominal)}
    if model is not None:
        errors["compensated"] = np.concatenate(comp)
    return residual_report(errors, np.concatenate(labels))


def deadband_config(report: ResidualReport) -> str:
    """Config fragment carrying the transition-phase STD of each model."""
    lines = ["# dead-band sigma from the transition-phase residual STD"]
    for name, by in report.stats.items():
        lines.append(f"control.sigma_{name} = " + ", ".join(f"{v:.6g}" for v in by["transition"]["std"]))
    return "\n".join(lines) + "\n"


# --- closed-loop scenario -------------------------------------------------

def admittance_params(cfg: Config) -> AdmittanceParams:
    return AdmittanceParams(cfg.array("control.mass", "1.0"), cfg.array("control.damping", "4.0"),
                            cfg.array("control.vlimit", "0.5"))


def push_release_script(pad: int = 2, force: float = 10.0, t_on: float = 0.5, duration: float = 1.0,
                        ramp: float = 0.0, area: float = 1.0, count: int = 1, gap: float = 2.5) -> ExternalForceScript:
    """``count`` same-direction normal pushes on one pad, ``gap`` seconds apart."""
    if count < 1 or duration <= 0 or gap < 0:
        raise ContractViolation("push-release needs count >= 1, duration > 0 and gap >= 0")
    starts = t_on + np.arange(count) * (duration + gap)
    return ExternalForceScript(tuple(ForceEvent(float(a), float(a) + duration, pad, [0.0, 0.0, force], area, ramp)
                                     for a in starts))


def resolve_scenario(setup: Setup, scenario) -> ExternalForceScript:
    if scenario is None or str(scenario) == "none":
        return ExternalForceScript()
    if isinstance(scenario, ExternalForceScript):
        return scenario
    if str(scenario) == "push_release":
        c = setup.cfg
        return push_release_script(
            pad=c.int("demo.pad", 2), force=c.float("demo.force", 10.0), t_on=c.float("demo.t_on", 0.5),
            duration=c.float("demo.push", 1.0), ramp=setup.plant_cfg.force_ramp, count=c.int("demo.count", 1),
            gap=c.float("demo.gap", 2.5),
        )
    return load_schedule(scenario, setup.plant_cfg.force_ramp)


@dataclass
class ScenarioResult:
    columns: dict
    v_cmd: np.ndarray
    meta: dict = field(default_factory=dict)


def run_scenario(setup: Setup, script: ExternalForceScript, duration: float, seed: int, *, model=None,
                 control: bool = False, sigma=None, engage: str = "contact", q0=None,
                 commands=None) -> ScenarioResult:
    """Closed loop: plant -> estimator (-> compensator) -> dead band ->
    admittance -> joint command.

    The admittance input is ``-kt * deadband(tau_hat)``: the robot yields to
    the load it feels.  With ``engage="contact"`` compliance runs only while
    the mode machine is out of StaticNoContact and the velocity command is
    reset there; ``"always"`` leaves the dead band as the only gate.
    Without control the arm holds ``q0`` or follows ``commands`` =
    (q_cmd, qd_cmd), which then also sets the duration.
    """
    if commands is not None:
        if control:
            raise ContractViolation("a command stream and the admittance loop are exclusive")
        cq, cqd = (np.asarray(a, dtype=float) for a in commands)
        duration = len(cq) * setup.dt
        q0 = cq[0] if q0 is None else q0
    if engage not in ("contact", "always"):
        raise ContractViolation(f"unknown engage policy {engage!r}")
    c, m, dt = setup.cfg, setup.model, setup.dt
    n = m.n_joints
    plant = setup.plant(seed)
    comp = None
    if model is not None:
        comp = OnlineCompensator(model, setup.omega, c.str("tcn.friction_channel", "latched"),
                                 c.str("tcn.latch_reset", "snc"))
    est = ContactAwareEstimator(m, setup.nominal_friction, setup.layout, setup.detector(), omega_static=setup.omega,
                                debounce_ticks=setup.debounce_ticks, compensator=comp)
    if control:
        adm = admittance_params(c)
        sigma = np.zeros(n) if sigma is None else np.broadcast_to(np.asarray(sigma, float), (n,))
        k_db = c.float("estimator.deadband_k", 1.5)
    T = int(round(duration / dt))
    state = plant.initial_state(q0)
    q_cmd, v = state.q.copy(), np.zeros(n)
    names = ("q", "qd", "qdd", "I", "tau_meas", "tau_dyn", "tau_fric", "tau_res", "tau_tcn", "tau_ext",
             "tau_fric_true", "tau_ext_true", "q_true", "qd_true")
    cols = {k: np.empty((T, n)) for k in names}
    t, mode = np.empty(T), np.empty(T)
    press, force = np.empty((T, setup.layout.n_pads)), np.empty((T, 3))
    v_log = np.zeros((T, n))
    for k in range(T):
        if commands is not None:
            q_cmd, v = cq[k], cqd[k]
        state, motor, skin, truth = plant.step(state, Command(q_cmd, v), script)
        out = est.update(motor, skin)
        if control:
            if engage == "contact" and out.mode == FsmMode.STATIC_NO_CONTACT:
                v = np.zeros(n)
            else:
                tau_db = dead_band(out.tau_ext, sigma, k_db)
                v = admittance_update(adm, v, -m.kt * tau_db, dt)
            q_cmd = q_cmd + dt * v
        d = out.decomp
        t[k], mode[k] = motor.t, int(out.mode)
        for key, val in (("q", motor.q), ("qd", motor.qd), ("qdd", motor.qdd), ("I", motor.current),
                         ("tau_meas", d.tau_meas), ("tau_dyn", d.tau_dyn), ("tau_fric", d.tau_fric),
                         ("tau_res", d.tau_res), ("tau_tcn", out.tau_tcn), ("tau_ext", out.tau_ext),
                         ("tau_fric_true", truth.tau_fric), ("tau_ext_true", truth.tau_ext),
                         ("q_true", truth.q), ("qd_true", truth.qd)):
            cols[key][k] = val
        press[k], force[k] = skin.pressures, truth.force
        if control:
            v_log[k] = v
    columns = {"t": t}
    for key in names[:10]:
        columns[key] = cols[key]
    columns.update(fsm_mode=mode, p=press, v_cmd=v_log, tau_fric_true=cols["tau_fric_true"],
                   tau_ext_true=cols["tau_ext_true"], F=force, q_true=cols["q_true"], qd_true=cols["qd_true"])
    return ScenarioResult(columns, v_log, {"seed": seed, "duration": duration, "compensated": model is not None})


# --- push-release analysis ----------------------------------------------

@dataclass(frozen=True)
class PushReleaseMetrics:
    onset_delay: float          # first force application to first nonzero v_cmd, s (inf if none)
    peak: float                 # largest v_cmd along the push on ``joint``, rad/s
    overshoot: float            # largest excess of v_cmd over the reference along the push on ``joint``, rad/s
    undershoot: float           # largest v_cmd against the push on any joint while no force acts, rad/s
    joint: int                  # joint with the largest reference motion


def reference_velocity(setup: Setup, tau_ext_true, sigma) -> np.ndarray:
    """The admittance command an exact estimator would produce: the same dead
    band and virtual mass-damper driven by the true external torque."""
    adm = admittance_params(setup.cfg)
    k_db = setup.cfg.float("estimator.deadband_k", 1.5)
    tau = np.asarray(tau_ext_true, dtype=float)
    v, out = np.zeros(tau.shape[1]), np.empty_like(tau)
    for i, row in enumerate(tau):
        v = admittance_update(adm, v, -setup.model.kt * dead_band(row, sigma, k_db), setup.dt)
        out[i] = v
    return out


def push_release_metrics(setup: Setup, result: ScenarioResult, script: ExternalForceScript,
                         sigma) -> PushReleaseMetrics:
    """Velocity figures of a push-release run against ``reference_velocity``.

    Each joint's push direction is the sign of its largest reference
    velocity.  A joint the pushes never drive has no direction, so any
    motion of it while no force acts counts as undershoot.
    """
    t, v = result.columns["t"], result.v_cmd
    ref = reference_velocity(setup, result.columns["tau_ext_true"], sigma)
    n = v.shape[1]
    idx = np.argmax(np.abs(ref), axis=0)
    direction = np.sign(ref[idx, np.arange(n)])
    j = int(np.argmax(np.max(np.abs(ref), axis=0)))
    forced = np.zeros(len(t), dtype=bool)
    for e in script.events:
        forced |= (t >= e.t_start) & (t < e.t_end)
    t_on = min((e.t_start for e in script.events), default=0.0)
    moving = np.flatnonzero(np.any(v != 0, axis=1) & (t >= t_on))
    onset = float(t[moving[0]] - t_on) if moving.size else math.inf
    along = direction[j] * v[:, j]
    peak = float(np.max(along)) if along.size else 0.0
    overshoot = float(max(0.0, np.max(direction[j] * (v[:, j] - ref[:, j])))) if along.size else 0.0
    against = np.where(direction == 0, np.abs(v), np.maximum(-direction * v, 0.0))[~forced]
    undershoot = float(np.max(against)) if against.size else 0.0
    return PushReleaseMetrics(onset, peak, overshoot, undershoot, j)
