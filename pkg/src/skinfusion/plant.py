"""Ground-truth closed-loop simulator.

The plant integrates the rigid-body model with bristle friction and
script-applied pad forces under a stiff joint servo, then reports what the
estimator is allowed to see: a quantized joint encoder, a filtered velocity
and acceleration, noisy motor current and the skin pressures.  True friction
and external torque go to a separate ground-truth record.

Sign convention: a script force is the load the pad exerts on its
surroundings, in the pad frame.  The robot feels the opposite force, so the
joint torque it produces is ``tau_ext = J^T F`` on the right-hand side with a
minus sign::

    M(q) qdd + C qd + G + tau_fric = tau_servo - J^T F
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import RobotModel, contact_jacobian, dynamics_terms
from .errors import ContractViolation, SimulationFault
from .friction import FrictionParams, HystereticFrictionState, bristle_slope, bristle_update
from .skin import PadLayout, SkinFrameSample, pad_frame, pad_pressure


@dataclass(frozen=True)
class PlantConfig:
    dt: float = 0.0025
    kp: float = 1e7
    kd: float = 2e4
    ki: float = 0.0
    sigma_i: float = 5.0
    encoder_bits: int = 20
    vel_cutoff: float = 25.0
    acc_cutoff: float = 15.0
    vel_lsb: float = 1e-4
    acc_lsb: float = 1e-3
    force_ramp: float = 0.0
    skin_rate: float = 1000.0
    servo: bool = True
    friction: bool = True

    def __post_init__(self):
        if self.dt <= 0 or self.skin_rate <= 0:
            raise ContractViolation("dt and skin rate must be positive")
        if min(self.kp, self.kd, self.ki, self.sigma_i) < 0:
            raise ContractViolation("servo gains and noise levels must be non-negative")

    @property
    def encoder_lsb(self) -> float:
        return 2.0 * math.pi / 2**self.encoder_bits


@dataclass(frozen=True)
class ForceEvent:
    t_start: float
    t_end: float
    pad: int
    force: np.ndarray           # pad frame, N
    area: float = 1.0
    ramp: float = 0.0           # raised-cosine rise/fall time, s
    profile: Callable | None = None  # optional f(t) -> 3-vector replacing the constant force

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float).reshape(3))
        if not self.t_end > self.t_start:
            raise ContractViolation("force window must have t_end > t_start")
        if not 0.0 < self.area <= 1.0:
            raise ContractViolation("area fraction must lie in (0, 1]")
        if self.ramp < 0:
            raise ContractViolation("ramp time must be non-negative")

    def at(self, t: float) -> np.ndarray:
        if not self.t_start <= t < self.t_end:
            return np.zeros(3)
        if self.profile is not None:
            return np.asarray(self.profile(t), dtype=float)
        if self.ramp > 0:
            edge = min(t - self.t_start, self.t_end - t) / self.ramp
            if edge < 1.0:
                return self.force * 0.5 * (1.0 - math.cos(math.pi * edge))
        return self.force


@dataclass(frozen=True)
class ExternalForceScript:
    events: tuple = ()

    def __post_init__(self):
        ev = tuple(sorted(self.events, key=lambda e: (e.pad, e.t_start)))
        for a, b in zip(ev, ev[1:]):
            if a.pad == b.pad and b.t_start < a.t_end:
                raise ContractViolation(f"overlapping force windows on pad {a.pad}")
        object.__setattr__(self, "events", ev)

    @property
    def empty(self) -> bool:
        return not self.events

    def active(self, t: float):
        """[(pad, force, area)] for events acting at time t."""
        return [(e.pad, e.at(t), e.area) for e in self.events if e.t_start <= t < e.t_end]

    def to_text(self) -> str:
        lines = ["# t_start t_end pad fx fy fz area ramp"]
        for e in self.events:
            fx, fy, fz = e.force
            lines.append(f"{e.t_start:.6g} {e.t_end:.6g} {e.pad} {fx:.6g} {fy:.6g} {fz:.6g} {e.area:.6g} {e.ramp:.6g}")
        return "\n".join(lines) + "\n"


def parse_schedule(text: str, default_ramp: float = 0.0) -> ExternalForceScript:
    """Schedule lines: ``t_start t_end pad fx fy fz area [ramp]``; '#' starts
    a comment.  Forces are in the pad frame (tangent, tangent, normal)."""
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) not in (7, 8):
            raise ContractViolation(f"schedule line {lineno}: expected 7 or 8 fields, got {len(parts)}")
        try:
            t0, t1 = float(parts[0]), float(parts[1])
            pad = int(parts[2])
            f = [float(x) for x in parts[3:6]]
            area = float(parts[6])
            ramp = float(parts[7]) if len(parts) == 8 else default_ramp
        except ValueError as exc:
            raise ContractViolation(f"schedule line {lineno}: {exc}") from None
        events.append(ForceEvent(t0, t1, pad, f, area, ramp))
    return ExternalForceScript(tuple(events))


def load_schedule(path, default_ramp: float = 0.0) -> ExternalForceScript:
    if path is None or str(path) == "none":
        return ExternalForceScript()
    return parse_schedule(Path(path).read_text(), default_ramp)


@dataclass(frozen=True)
class Command:
    q: np.ndarray
    qd: np.ndarray


@dataclass(frozen=True)
class MotorSample:
    t: float
    current: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    t: float
    q: np.ndarray
    qd: np.ndarray
    tau_fric: np.ndarray    # current units
    tau_ext: np.ndarray     # current units, J^T F
    force: np.ndarray       # summed scripted pad force, pad frame
    pad: int                # -1 when no force is scripted


@dataclass(frozen=True)
class SensorState:
    q_enc: np.ndarray
    vel_f: np.ndarray
    qd_rep: np.ndarray
    acc_f: np.ndarray


@dataclass(frozen=True)
class PlantState:
    t: float
    q: np.ndarray
    qd: np.ndarray
    friction: HystereticFrictionState
    integ: np.ndarray
    command: Command
    sensors: SensorState
    tick: int = 0


def _quantize(x, lsb):
    return np.round(x / lsb) * lsb


def _truncate(x, lsb):
    # toward zero, so anything below one lsb reads exactly zero
    return np.trunc(x / lsb) * lsb


def _lpf_gain(dt, fc):
    return dt / (dt + 1.0 / (2.0 * math.pi * fc))


class Plant:
    """Simulator bound to a model, friction ground truth, skin layout and seed."""

    def __init__(
        self,
        model: RobotModel,
        friction: FrictionParams,
        layout: PadLayout,
        config: PlantConfig = PlantConfig(),
        seed: int = 0,
        sigma0=None,
        sigma1=None,
    ):
        if friction.n_joints != model.n_joints:
            raise ContractViolation("friction parameters do not match the model")
        self.model = model
        self.fparams = friction
        self.layout = layout
        self.cfg = config
        self.rng = np.random.default_rng(seed)
        self._sigma = (sigma0, sigma1)
        self._a_vel = _lpf_gain(config.dt, config.vel_cutoff)
        self._a_acc = _lpf_gain(config.dt, config.acc_cutoff)
        self._stiff = (config.dt * config.kd + config.dt**2 * config.kp) * np.eye(model.n_joints)

    def initial_state(self, q0=None) -> PlantState:
        n = self.model.n_joints
        q0 = np.zeros(n) if q0 is None else np.asarray(q0, dtype=float).reshape(n)
        zeros = np.zeros(n)
        sens = SensorState(_quantize(q0, self.cfg.encoder_lsb), zeros, zeros, zeros)
        fr = HystereticFrictionState.default(self.fparams, *self._sigma)
        return PlantState(0.0, q0.copy(), zeros, fr, zeros, Command(q0.copy(), zeros), sens)

    def external_torque(self, q, t: float, script: ExternalForceScript):
        """(tau_ext in N*m, summed pad force, dominant pad) at time t."""
        n = self.model.n_joints
        tau = np.zeros(n)
        total = np.zeros(3)
        pad, best = -1, 0.0
        for pid, f, _area in script.active(t):
            frame = pad_frame(self.layout, self.model, q, pid)
            J = contact_jacobian(self.model, q, frame)
            tau += J[:3].T @ f
            total += f
            if abs(f[2]) >= best:
                pad, best = pid, abs(f[2])
        return tau, total, pad

    def skin_sample(self, t: float, script: ExternalForceScript) -> SkinFrameSample:
        """Latest skin frame at or before t (zero-order hold of the faster stream)."""
        rate = self.cfg.skin_rate
        ts = math.floor(t * rate + 1e-9) / rate
        p = np.zeros(self.layout.n_pads)
        for pid, f, area in script.active(ts):
            p[pid] += pad_pressure(self.layout, pid, f, area)
        p += self.layout.noise * self.rng.standard_normal(self.layout.n_pads)
        return SkinFrameSample(ts, p)

    def step(self, state: PlantState, command: Command | None, script: ExternalForceScript):
        """Advance one tick.  Returns (state', MotorSample, SkinFrameSample, GroundTruth)."""
        cfg, model, dt = self.cfg, self.model, self.cfg.dt
        kt = model.kt
        cmd = state.command if command is None else command
        q, qd = state.q, state.qd

        M, h, G = dynamics_terms(model, q, qd)
        tau_ext, force, pad = self.external_torque(q, state.t, script)
        if cfg.friction:
            # friction enters the velocity solve linearized about qd, so the
            # stiff bristle is integrated implicitly like the servo
            fp, fs, g_abs = self.fparams, state.friction, np.abs(G) / kt
            args = (fs.sigma0, fs.sigma1, fp.tau_c + fp.alpha_c * g_abs, fp.tau_s, fp.qd_s, fp.delta,
                    fp.b + fp.alpha_v * g_abs)
            _, tau_f0 = bristle_update(fs.z, *args, qd, dt)
            slope = kt * bristle_slope(fs.z, *args, qd, dt)
        else:
            tau_f0 = slope = np.zeros_like(q)
        rest = G - h - kt * tau_f0 + slope * qd - tau_ext
        A = M + dt * np.diag(slope)
        if cfg.servo:
            A = A + self._stiff
            drive = cfg.kp * (cmd.q - q) + cfg.kd * cmd.qd + cfg.ki * state.integ
            qd1 = np.linalg.solve(A, M @ qd + dt * (drive + rest))
            q1 = q + dt * qd1
            tau_servo = cfg.kp * (cmd.q - q1) + cfg.kd * (cmd.qd - qd1) + cfg.ki * state.integ + G
            integ = state.integ + dt * (cmd.q - q1)
        else:
            qd1 = np.linalg.solve(A, M @ qd + dt * (rest - G))
            q1 = q + dt * qd1
            tau_servo = np.zeros_like(q)
            integ = state.integ
        if cfg.friction:
            tau_f = tau_f0 + slope / kt * (qd1 - qd)
            fr_state = replace(fs, z=bristle_update(fs.z, *args, qd1, dt)[0])
        else:
            fr_state, tau_f = state.friction, np.zeros_like(q)
        if not (np.all(np.isfinite(q1)) and np.all(np.isfinite(qd1))):
            raise SimulationFault(f"non-finite state at t={state.t:.4f}: q={q1}, qd={qd1}")

        t1 = state.t + dt
        new = PlantState(t1, q1, qd1, fr_state, integ, cmd, state.sensors, state.tick + 1)
        new, motor = self.sample_motor(new, tau_servo)
        skin = self.skin_sample(t1, script)
        truth = GroundTruth(t1, q1, qd1, tau_f, tau_ext / kt, force, pad)
        return new, motor, skin, truth

    def sample_motor(self, state: PlantState, tau_servo):
        """Sensor read-out after a step: encoder, filtered derivatives, current."""
        cfg, s = self.cfg, state.sensors
        q_enc = _quantize(state.q, cfg.encoder_lsb)
        vel_f = s.vel_f + self._a_vel * ((q_enc - s.q_enc) / cfg.dt - s.vel_f)
        qd_rep = _truncate(vel_f, cfg.vel_lsb)
        acc_f = s.acc_f + self._a_acc * ((qd_rep - s.qd_rep) / cfg.dt - s.acc_f)
        qdd_rep = _truncate(acc_f, cfg.acc_lsb)
        current = np.asarray(tau_servo) / self.model.kt
        if cfg.sigma_i > 0:
            current = current + cfg.sigma_i * self.rng.standard_normal(len(current))
        sample = MotorSample(state.t, current, q_enc, qd_rep, qdd_rep)
        return replace(state, sensors=SensorState(q_enc, vel_f, qd_rep, acc_f)), sample


@dataclass
class SimRecord:
    """Column arrays of a simulated run (motor stream, skin, ground truth)."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    current: np.ndarray
    pressures: np.ndarray
    q_true: np.ndarray
    qd_true: np.ndarray
    tau_fric_true: np.ndarray
    tau_ext_true: np.ndarray
    force: np.ndarray
    pad: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)


def simulate(plant: Plant, commands, script: ExternalForceScript = ExternalForceScript(), steps=None, q0=None):
    """Open-loop run over a command stream ``(q_cmd, qd_cmd)`` of shape (T, n).
    With ``commands=None`` the initial pose is held for ``steps`` ticks."""
    state = plant.initial_state(q0 if commands is None or q0 is not None else commands[0][0])
    if commands is None:
        if steps is None:
            raise ContractViolation("need a command stream or a step count")
        q_cmd = np.broadcast_to(state.q, (steps, plant.model.n_joints))
        qd_cmd = np.zeros_like(q_cmd)
    else:
        q_cmd, qd_cmd = (np.asarray(c, float) for c in commands)
    T, n, m = len(q_cmd), plant.model.n_joints, plant.layout.n_pads
    cols = {k: np.empty((T, n)) for k in ("q", "qd", "qdd", "current", "q_true", "qd_true", "tau_fric_true", "tau_ext_true")}
    t = np.empty(T)
    press = np.empty((T, m))
    force = np.empty((T, 3))
    pad = np.empty(T, dtype=int)
    for k in range(T):
        state, motor, skin, truth = plant.step(state, Command(q_cmd[k], qd_cmd[k]), script)
        t[k] = motor.t
        cols["q"][k], cols["qd"][k], cols["qdd"][k], cols["current"][k] = motor.q, motor.qd, motor.qdd, motor.current
        cols["q_true"][k], cols["qd_true"][k] = truth.q, truth.qd
        cols["tau_fric_true"][k], cols["tau_ext_true"][k] = truth.tau_fric, truth.tau_ext
        press[k], force[k], pad[k] = skin.pressures, truth.force, truth.pad
    return SimRecord(t=t, pressures=press, force=force, pad=pad, **cols)


def _trapezoid(t, vp, ta, tc):
    """Displacement of a unit-direction trapezoidal move at times t (>= 0)."""
    acc = vp / ta
    t1, t2, t3 = ta, ta + tc, 2 * ta + tc
    d1 = 0.5 * acc * ta**2
    x = np.where(t < t1, 0.5 * acc * t**2, 0.0)
    x = np.where((t >= t1) & (t < t2), d1 + vp * (t - t1), x)
    td = t - t2
    x = np.where((t >= t2) & (t < t3), d1 + vp * tc + vp * td - 0.5 * acc * td**2, x)
    x = np.where(t >= t3, 2 * d1 + vp * tc, x)
    v = np.where(t < t1, acc * t, 0.0)
    v = np.where((t >= t1) & (t < t2), vp, v)
    v = np.where((t >= t2) & (t < t3), vp - acc * td, v)
    return x, v


_SETTLE_FLOOR = 1e-4  # rad/s; the decay snaps to rest below this speed


def _settle_length(vp, ta, tau):
    return 0.5 * vp * ta + vp * tau * (1.0 - min(1.0, _SETTLE_FLOOR / vp))


def _settle(t, vp, ta, tau):
    """Linear ramp to ``vp`` over ``ta``, then exponential decay with time
    constant ``tau`` until the speed drops below the floor."""
    t_end = ta + tau * math.log(max(vp, _SETTLE_FLOOR) / _SETTLE_FLOOR)
    acc = vp / ta
    d1 = 0.5 * vp * ta
    tc = np.minimum(t, t_end) - ta
    x = np.where(t < ta, 0.5 * acc * np.minimum(t, ta) ** 2, d1 + vp * tau * (1.0 - np.exp(-np.maximum(tc, 0.0) / tau)))
    v = np.where(t < ta, acc * t, np.where(t < t_end, vp * np.exp(-np.maximum(tc, 0.0) / tau), 0.0))
    return x, v


def excitation_trajectory(
    seed: int,
    duration: float,
    dt: float = 0.0025,
    limits=None,
    n_joints: int = 4,
    q0=None,
    margin: float = 0.1,
    hold=(0.5, 2.0),
    peak_velocity=(0.05, 0.5),
    accel_time=(0.1, 0.3),
    cruise=(0.0, 1.0),
    settle=(0.05, 0.3),
    settle_fraction: float = 0.5,
):
    """Seeded hold/move/hold command stream for force-free excitation.

    Each joint independently alternates a hold and a move with a random peak
    velocity and direction.  A move is either a trapezoid or, with
    probability ``settle_fraction``, a ramp up followed by an exponential
    decay with a time constant drawn from ``settle``: the slow creep to rest
    that a released admittance loop produces.  A move that would leave the
    joint range (minus ``margin``) is reversed, and shortened if it still
    does not fit.  Returns ``(q_cmd, qd_cmd)`` of shape (T, n).
    """
    if duration <= 0:
        raise ContractViolation("duration must be positive")
    rng = np.random.default_rng(seed)
    if limits is None:
        limits = np.tile([-np.pi, np.pi], (n_joints, 1))
    limits = np.asarray(limits, dtype=float)
    n = limits.shape[0]
    q0 = np.zeros(n) if q0 is None else np.asarray(q0, dtype=float)
    T = int(round(duration / dt))
    t = np.arange(T) * dt
    q_cmd = np.empty((T, n))
    qd_cmd = np.empty((T, n))
    for j in range(n):
        lo, hi = limits[j, 0] + margin, limits[j, 1] - margin
        pos = float(np.clip(q0[j], lo, hi))
        qj = np.full(T, pos)
        vj = np.zeros(T)
        t0 = 0.0
        while t0 < t[-1] + dt:
            t0 += rng.uniform(*hold)
            vp, ta, tc = rng.uniform(*peak_velocity), rng.uniform(*accel_time), rng.uniform(*cruise)
            sign = 1.0 if rng.random() < 0.5 else -1.0
            tau_s = rng.uniform(*settle)
            decay = rng.random() < settle_fraction
            shape = (lambda tt, vp, ta, tc: _settle(tt, vp, ta, tau_s)) if decay else _trapezoid
            length = (lambda vp, ta, tc: _settle_length(vp, ta, tau_s)) if decay else (lambda vp, ta, tc: vp * (ta + tc))
            dist = length(vp, ta, tc)
            if not lo <= pos + sign * dist <= hi:
                sign = -sign
            room = (hi - pos) if sign > 0 else (pos - lo)
            if dist > room:
                if decay:
                    vp *= room / dist
                else:
                    # shorten the cruise first, then the speed
                    tc = max(0.0, room / vp - ta)
                    if vp * ta > room:
                        vp = room / ta
                dist = length(vp, ta, tc)
            mask = t >= t0
            x, v = shape(t[mask] - t0, vp, ta, tc)
            qj[mask] = pos + sign * x
            vj[mask] = sign * v
            pos = pos + sign * dist
            t0 += (ta + tau_s * math.log(max(vp, _SETTLE_FLOOR) / _SETTLE_FLOOR)) if decay else (2 * ta + tc)
        q_cmd[:, j] = qj
        qd_cmd[:, j] = vj
    return q_cmd, qd_cmd
