"""Streaming and whole-log TCN inference."""
from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from .data import LatchState, gate_hidden_torque, input_channels, latch_step
from .tcn import TcnModel, forward_normalized

# FSM mode value for StaticNoContact (kept numeric to avoid an import cycle)
_SNC = 0


class OnlineCompensator:
    """One forward pass per motor tick over a ring of the last ``window``
    normalized channel rows.

    The hidden-torque channel is gated by velocity and latched at contact
    onset.  ``latch_reset`` picks when the latch opens again: ``snc`` on the
    estimator's return to StaticNoContact, ``release`` as soon as no pad is
    active.  Until ``window`` ticks have been seen the window is zero-padded
    and the output is flagged as not ready.
    """

    def __init__(self, model: TcnModel, omega_th: float = 1e-4, channel_mode: str = "latched",
                 latch_reset: str = "snc"):
        if channel_mode not in ("latched", "zeroed"):
            raise ContractViolation(f"unknown friction channel mode {channel_mode!r}")
        if latch_reset not in ("snc", "release"):
            raise ContractViolation(f"unknown latch reset policy {latch_reset!r}")
        self.model = model
        self.omega = omega_th
        self.mode = channel_mode
        self.reset_policy = latch_reset
        self.reset()

    def reset(self):
        self.buffer = np.zeros((self.model.window, self.model.c_in))
        self.count = 0
        self.latch = LatchState()
        self.was_contact = False
        self.last_input = None

    def channel_row(self, motor, decomp, contact: bool, mode) -> np.ndarray:
        gated = gate_hidden_torque(decomp.tau_res, motor.qd, self.omega)
        onset = contact and not self.was_contact
        if self.reset_policy == "snc":
            reset = int(mode) == _SNC and not contact
        else:
            reset = not contact
        self.latch, hidden = latch_step(self.latch, gated, onset, reset)
        if self.mode == "zeroed":
            hidden = np.where(np.abs(motor.qd) <= self.omega, hidden, 0.0)
        self.was_contact = contact
        return input_channels(motor.q[None], motor.qd[None], motor.qdd[None], decomp.tau_dyn[None], hidden[None])[0]

    def step(self, motor, decomp, contact: bool = False, mode=_SNC):
        """Returns (tau_tcn, ready)."""
        row = self.channel_row(motor, decomp, contact, mode)
        self.last_input = row
        self.buffer = np.roll(self.buffer, -1, axis=0)
        self.buffer[-1] = self.model.normalize(row)
        self.count += 1
        low, high, _ = forward_normalized(self.model, self.buffer[None])
        tau = (low[0] + high[0]) * self.model.label_scale
        return tau, self.count >= self.model.window


def infer_log(model: TcnModel, channels, batch: int = 4096):
    """tau_tcn for every sample of a (T, C) raw channel log, using the same
    zero-padded warm-up as the streaming path.  Returns (tau_tcn, ready)."""
    x = model.normalize(channels)
    T, C = x.shape
    L = model.window
    padded = np.concatenate([np.zeros((L - 1, C)), x])
    offs = np.arange(L)
    out = np.empty((T, model.n_out))
    for s in range(0, T, batch):
        e = np.arange(s, min(T, s + batch))
        low, high, _ = forward_normalized(model, padded[e[:, None] + offs])
        out[e] = (low + high) * model.label_scale
    ready = np.arange(T) >= L - 1
    return out, ready
