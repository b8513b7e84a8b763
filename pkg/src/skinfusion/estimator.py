"""Contact-aware external torque estimation.

Transition table of the estimator mode machine (``c`` = contact, ``s`` =
static, all other combinations keep the mode)::

    StaticNoContact    c            -> StaticWithContact   latch baseline, t_on
    StaticWithContact  not s        -> Dynamic             keep baseline
    Dynamic            s and not c  -> StaticNoContact     after the debounce;
                                                           clear baseline

The baseline is the residual decomposition of the sample *before* the onset
sample.  While the arm stays put, the external torque is the increment of
the residual over that baseline, which needs no dynamics model at all.

Torques are in current units; ``model.kt`` converts N*m to current units.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .dynamics import RobotModel, contact_jacobian, gravity_vector, inverse_dynamics
from .errors import ContractViolation
from .friction import FrictionParams, load_adjusted_params, stribeck_friction


class FsmMode(IntEnum):
    STATIC_NO_CONTACT = 0
    STATIC_WITH_CONTACT = 1
    DYNAMIC = 2


@dataclass(frozen=True)
class TorqueDecomposition:
    t: float
    tau_meas: np.ndarray
    tau_dyn: np.ndarray
    tau_fric: np.ndarray
    tau_res: np.ndarray


@dataclass(frozen=True)
class FsmState:
    mode: FsmMode = FsmMode.STATIC_NO_CONTACT
    t_on: float | None = None
    baseline: object = None          # TorqueDecomposition or n-vector at t_on-
    previous: object = None          # last residual seen, candidate baseline
    quiet: int = 0                   # consecutive static, contact-free ticks in Dynamic
    latches: int = 0                 # number of baselines latched so far

    def __post_init__(self):
        if (self.baseline is None) != (self.t_on is None):
            raise ContractViolation("t_on and baseline must be set together")
        if self.mode == FsmMode.STATIC_WITH_CONTACT and self.baseline is None:
            raise ContractViolation("StaticWithContact requires a baseline")
        if self.mode == FsmMode.STATIC_NO_CONTACT and self.baseline is not None:
            raise ContractViolation("StaticNoContact carries no baseline")


def compute_residual(t, current, q, qd, qdd, model: RobotModel, params: FrictionParams) -> TorqueDecomposition:
    """tau_res = tau_meas - tau_dyn - tau_fric, per joint, in current units.

    Inputs may carry a leading time axis; the whole log is then processed in
    one batched call.
    """
    kt = model.kt
    tau_meas = np.asarray(current, dtype=float)
    tau_dyn = inverse_dynamics(model, q=q, qd=qd, qdd=qdd) / kt
    g_abs = np.abs(gravity_vector(model, q)) / kt
    tau_fric = stribeck_friction(load_adjusted_params(params, g_abs), qd)
    return TorqueDecomposition(t, tau_meas, tau_dyn, tau_fric, tau_meas - tau_dyn - tau_fric)


def residual_of_sample(motor, model: RobotModel, params: FrictionParams) -> TorqueDecomposition:
    return compute_residual(motor.t, motor.current, motor.q, motor.qd, motor.qdd, model, params)


def is_static(qd, omega: float = 1e-4) -> bool:
    return bool(np.all(np.abs(qd) < omega))


def fsm_step(state: FsmState, is_contact: bool, is_static: bool, residual, t=None, debounce_ticks: int = 0) -> FsmState:
    """One transition of the mode machine (see the module table).

    ``residual`` is the current sample's decomposition (or bare residual
    vector); it becomes the baseline candidate for the next call.
    ``debounce_ticks`` is the number of consecutive static, contact-free
    ticks needed to leave Dynamic; 0 and 1 both mean immediately.
    """
    mode = state.mode
    new = replace(state, previous=residual)
    if mode == FsmMode.STATIC_NO_CONTACT:
        if is_contact:
            base = state.previous if state.previous is not None else residual
            return replace(new, mode=FsmMode.STATIC_WITH_CONTACT, t_on=t if t is not None else 0.0,
                           baseline=base, quiet=0, latches=state.latches + 1)
        return new
    if mode == FsmMode.STATIC_WITH_CONTACT:
        if not is_static:
            return replace(new, mode=FsmMode.DYNAMIC, quiet=0)
        return new
    # Dynamic
    if is_static and not is_contact:
        quiet = state.quiet + 1
        if quiet >= max(debounce_ticks, 1):
            return replace(new, mode=FsmMode.STATIC_NO_CONTACT, t_on=None, baseline=None, quiet=0)
        return replace(new, quiet=quiet)
    return replace(new, quiet=0)


def static_external_torque(decomp: TorqueDecomposition, state: FsmState) -> np.ndarray:
    """Residual increment since the pre-contact baseline.

    Written as increments of each term, so identical kinematics give exactly
    zero dynamics and friction increments and the result is the measured
    increment bit for bit, whatever the model parameters are.
    """
    base = state.baseline
    if base is None:
        raise ContractViolation("no pre-contact baseline latched")
    if isinstance(base, TorqueDecomposition):
        return (decomp.tau_meas - base.tau_meas) - (
            (decomp.tau_dyn - base.tau_dyn) + (decomp.tau_fric - base.tau_fric)
        )
    return decomp.tau_res - np.asarray(base, dtype=float)


def compensated_external_torque(decomp: TorqueDecomposition, tau_tcn) -> np.ndarray:
    return decomp.tau_meas - (decomp.tau_dyn + decomp.tau_fric + np.asarray(tau_tcn, dtype=float))


def dead_band(tau_hat, sigma, k: float = 1.5) -> np.ndarray:
    """Continuous shrinkage: zero inside +-k*sigma, shifted toward zero outside."""
    tau_hat = np.asarray(tau_hat, dtype=float)
    width = k * np.asarray(sigma, dtype=float)
    if np.any(width < 0):
        raise ContractViolation("dead-band width must be non-negative")
    return np.sign(tau_hat) * np.maximum(np.abs(tau_hat) - width, 0.0)


@dataclass(frozen=True)
class ForceEstimate:
    force: np.ndarray          # contact frame, N
    rank: int
    singular_values: np.ndarray
    condition: float
    partial: bool              # True when J_v^T has rank < 3
    null_space: np.ndarray     # (3, 3 - rank) unobservable force directions, contact frame


def wrench_from_torque(tau_ext, J, frame=None, rank_tol: float = 1e-9) -> ForceEstimate:
    """Contact force from joint torque, tau = J_v^T F, by regularized least
    squares on the linear rows of ``J`` (already in the contact frame).

    Units follow the inputs: N*m torques give N.  Tikhonov weight is 1e-6
    times the largest singular value.  With rank < 3 the estimate lives in
    the observable subspace and the unobservable directions are returned.
    """
    J = np.asarray(J, dtype=float)
    if J.shape[0] != 6:
        raise ContractViolation("expected a 6 x n Jacobian")
    A = J[:3].T                       # n x 3
    tau = np.asarray(tau_ext, dtype=float).reshape(A.shape[0])
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return ForceEstimate(np.zeros(3), 0, s, np.inf, True, np.eye(3))
    lam = 1e-6 * smax
    rank = int(np.sum(s > rank_tol * smax))
    coef = (s / (s**2 + lam**2)) * (U[:, : len(s)].T @ tau)
    force = Vt[: len(s)].T @ coef
    s_full = np.concatenate([s, np.zeros(3 - len(s))])
    cond = smax / s_full[2] if s_full[2] > 0 else np.inf
    return ForceEstimate(force, rank, s, float(cond), rank < 3, Vt[rank:].T)


@dataclass(frozen=True)
class EstimatorOutput:
    t: float
    decomp: TorqueDecomposition
    mode: FsmMode
    tau_tcn: np.ndarray
    tau_ext: np.ndarray          # mode-dependent estimate, current units
    quality: str                 # "static", "compensated", "raw"
    contact: bool
    frame: object = None
    force: ForceEstimate | None = None


class ContactAwareEstimator:
    """Streaming estimator: residual, contact detection, mode machine and the
    mode-dependent external torque.  ``compensator`` is an optional online
    TCN (see ``skinfusion.compensator.online``)."""

    def __init__(self, model, params, layout, detector, *, omega_static=1e-4, debounce_ticks=20,
                 compensator=None, reconstruct_force=False):
        self.model = model
        self.params = params
        self.layout = layout
        self.detector = detector
        self.omega = omega_static
        self.debounce = debounce_ticks
        self.compensator = compensator
        self.reconstruct = reconstruct_force
        self.state = FsmState()

    def update(self, motor, skin) -> EstimatorOutput:
        from .skin import contact_point_estimate

        decomp = residual_of_sample(motor, self.model, self.params)
        active, onset = self.detector.update(skin)
        contact = bool(active)
        static = is_static(motor.qd, self.omega)
        self.state = fsm_step(self.state, contact, static, decomp, t=motor.t, debounce_ticks=self.debounce)
        mode = self.state.mode

        tau_tcn = np.zeros(self.model.n_joints)
        ready = False
        if self.compensator is not None:
            tau_tcn, ready = self.compensator.step(motor, decomp, contact=contact, mode=mode)
        if mode == FsmMode.STATIC_WITH_CONTACT:
            tau_ext, quality = static_external_torque(decomp, self.state), "static"
        elif ready:
            tau_ext, quality = compensated_external_torque(decomp, tau_tcn), "compensated"
        else:
            tau_ext, quality = decomp.tau_res, "raw"

        frame = force = None
        if contact and self.reconstruct:
            frame = contact_point_estimate(self.layout, self.model, motor.q, active, skin.pressures)
            J = contact_jacobian(self.model, motor.q, frame)
            force = wrench_from_torque(tau_ext * self.model.kt, J, frame)
        return EstimatorOutput(motor.t, decomp, mode, tau_tcn, tau_ext, quality, contact, frame, force)
