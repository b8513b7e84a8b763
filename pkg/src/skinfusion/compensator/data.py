"""Compensator inputs and labels: the gated residual channel, its contact
latch, frequency-separated labels and sliding-window datasets.

Input channels per timestep, joint-major within each group:
``q, qd, qdd, tau_dyn, tau_hidden*`` (5 n channels).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt

from ..errors import ContractViolation

CHANNEL_GROUPS = ("q", "qd", "qdd", "tau_dyn", "tau_hidden")


def gate_hidden_torque(tau_res, qd, omega_th: float = 1e-4) -> np.ndarray:
    """tau_res where |qd| <= omega_th, zero elsewhere, per joint."""
    if omega_th <= 0:
        raise ContractViolation("gate threshold must be positive")
    tau_res = np.asarray(tau_res, dtype=float)
    return np.where(np.abs(qd) <= omega_th, tau_res, 0.0)


@dataclass
class LatchState:
    latched: bool = False
    value: np.ndarray | None = None
    previous: np.ndarray | None = None   # last input, the value frozen at onset


def latch_step(state: LatchState, tau_hidden, onset: bool, reset: bool):
    """One latch update; returns (state', emitted channel).

    ``reset`` is evaluated first, so a reset and a new onset on the same tick
    re-latch.  On onset the channel freezes at the previous input.
    """
    tau_hidden = np.asarray(tau_hidden, dtype=float)
    latched, value = state.latched, state.value
    if reset:
        latched, value = False, None
    if onset and not latched:
        latched = True
        value = state.previous.copy() if state.previous is not None else tau_hidden.copy()
    out = value if latched else tau_hidden
    return LatchState(latched, value, tau_hidden), out


def latch_input(tau_hidden, onsets, resets=None) -> np.ndarray:
    """Apply the latch to a (T, n) stream with boolean onset/reset flags."""
    tau_hidden = np.asarray(tau_hidden, dtype=float)
    T = tau_hidden.shape[0]
    onsets = np.asarray(onsets, dtype=bool).reshape(T)
    resets = np.zeros(T, dtype=bool) if resets is None else np.asarray(resets, dtype=bool).reshape(T)
    out = np.empty_like(tau_hidden)
    st = LatchState()
    for k in range(T):
        st, out[k] = latch_step(st, tau_hidden[k], onsets[k], resets[k])
    return out


def friction_channel(tau_res, qd, omega_th, mode: str = "latched", onsets=None, resets=None):
    """Hidden-torque channel for a stream.

    ``latched`` gates and then latches; ``zeroed`` additionally zeroes the
    channel whenever the joint moves, latched value included.
    """
    if mode not in ("latched", "zeroed"):
        raise ContractViolation(f"unknown friction channel mode {mode!r}")
    gated = gate_hidden_torque(tau_res, qd, omega_th)
    if onsets is None:
        ch = gated
    else:
        ch = latch_input(gated, onsets, resets)
    if mode == "zeroed":
        ch = np.where(np.abs(qd) <= omega_th, ch, 0.0)
    return ch


def frequency_split(series, cutoff: float, fs: float, order: int = 2):
    """Zero-phase low-pass (forward-backward Butterworth) and the remainder.

    ``high`` is defined as ``series - low`` so the split is exactly additive.
    """
    x = np.asarray(series, dtype=float)
    if not 0 < cutoff < fs / 2:
        raise ContractViolation("cutoff must lie between 0 and the Nyquist rate")
    b, a = butter(order, cutoff / (fs / 2))
    padlen = 3 * max(len(a), len(b))
    if x.shape[0] <= padlen:
        raise ContractViolation(f"series of length {x.shape[0]} is too short for the filter (need > {padlen})")
    low = filtfilt(b, a, x, axis=0, padlen=padlen)
    return low, x - low


def input_channels(q, qd, qdd, tau_dyn, tau_hidden) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=float) for a in (q, qd, qdd, tau_dyn, tau_hidden)], axis=1)


@dataclass
class WindowDataset:
    """Sliding windows over normalized logs, stored by reference.

    ``inputs[i]`` is a normalized (T_i, C) array; a window is identified by
    (log index, end index) and spans ``end - window + 1 .. end``.
    """

    inputs: list
    labels_low: list
    labels_high: list
    log_ids: np.ndarray
    ends: np.ndarray
    window: int
    mean: np.ndarray
    scale: np.ndarray
    label_scale: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ends)

    def batch(self, sel):
        sel = np.asarray(sel)
        C = self.inputs[0].shape[1]
        x = np.empty((len(sel), self.window, C))
        yl = np.empty((len(sel), self.labels_low[0].shape[1]))
        yh = np.empty_like(yl)
        offs = np.arange(-self.window + 1, 1)
        for lid in np.unique(self.log_ids[sel]):
            m = self.log_ids[sel] == lid
            e = self.ends[sel][m]
            x[m] = self.inputs[lid][e[:, None] + offs]
            yl[m] = self.labels_low[lid][e]
            yh[m] = self.labels_high[lid][e]
        return x, yl, yh

    def subset(self, sel) -> "WindowDataset":
        sel = np.asarray(sel)
        return WindowDataset(self.inputs, self.labels_low, self.labels_high, self.log_ids[sel], self.ends[sel],
                             self.window, self.mean, self.scale, self.label_scale, dict(self.meta))


@dataclass
class LogChannels:
    """Un-normalized inputs and labels of one force-free log."""

    channels: np.ndarray      # (T, 5n)
    tau_res: np.ndarray       # (T, n)
    qd: np.ndarray            # (T, n)
    name: str = ""
    force_free: bool = True


def normalization(logs) -> tuple:
    allc = np.concatenate([lg.channels for lg in logs])
    mean = allc.mean(0)
    scale = allc.std(0)
    scale[scale < 1e-9] = 1.0
    return mean, scale


def build_dataset(logs, *, window: int = 30, cutoff: float = 5.0, fs: float = 400.0, omega_th: float = 1e-4,
                  dynamic_stride: int = 10, stats=None) -> WindowDataset:
    """Windows of length ``window`` at stride 1 with labels split at ``cutoff``.

    Windows whose hidden-torque channel is zero for every joint over the whole
    window (pure motion) are kept one in ``dynamic_stride``.  ``stats`` =
    (mean, scale, label_scale) reuses training statistics, e.g. for
    validation data.
    """
    logs = list(logs)
    if not logs:
        raise ContractViolation("no logs given")
    for lg in logs:
        if not lg.force_free:
            raise ContractViolation(f"log {lg.name!r} contains scripted external forces; refusing to train on it")
    n = logs[0].tau_res.shape[1]
    if stats is None:
        mean, scale = normalization(logs)
        label_scale = np.concatenate([lg.tau_res for lg in logs]).std(0)
        label_scale[label_scale < 1e-9] = 1.0
    else:
        mean, scale, label_scale = stats
    inputs, lows, highs, ids, ends = [], [], [], [], []
    hid = slice(4 * n, 5 * n)
    kept_dyn = total_dyn = 0
    for i, lg in enumerate(logs):
        T = lg.channels.shape[0]
        if T < window:
            continue
        low, high = frequency_split(lg.tau_res, cutoff, fs)
        inputs.append((lg.channels - mean) / scale)
        lows.append(low / label_scale)
        highs.append(high / label_scale)
        active = np.any(lg.channels[:, hid] != 0.0, axis=1).astype(int)
        csum = np.concatenate([[0], np.cumsum(active)])
        e = np.arange(window - 1, T)
        dyn = (csum[e + 1] - csum[e + 1 - window]) == 0
        keep = ~dyn
        dyn_idx = np.flatnonzero(dyn)
        keep[dyn_idx[::dynamic_stride]] = True
        kept_dyn += len(dyn_idx[::dynamic_stride])
        total_dyn += len(dyn_idx)
        ends.append(e[keep])
        ids.append(np.full(int(keep.sum()), len(inputs) - 1))
    if not ends:
        raise ContractViolation("every log is shorter than one window")
    ds = WindowDataset(inputs, lows, highs, np.concatenate(ids), np.concatenate(ends), window, mean, scale,
                       label_scale)
    ds.meta.update(dynamic_windows=total_dyn, dynamic_kept=kept_dyn)
    return ds
