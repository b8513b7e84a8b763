"""Dilated causal convolution network with two linear heads, in numpy.

Only the final timestep feeds the heads, so each layer evaluates just the
positions that the final output depends on.  Those positions are fixed by
the dilation pattern and are planned once per architecture; a window shorter
than the receptive field is left-padded with zeros (in normalized units),
a longer one is cut to the receptive field.  Both are therefore exact.

Array layout inside the network is (batch, time, channel).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..errors import ContractViolation


def receptive_field(kernel: int, dilations) -> int:
    return 1 + (kernel - 1) * int(sum(dilations))


@lru_cache(maxsize=16)
def _plan(kernel: int, dilations: tuple):
    """Per layer: (input positions, output positions, tap index arrays).

    Positions are time indices in a window of length R; tap ``j`` of an
    output at ``p`` reads the input at ``p - (kernel - 1 - j) * d``.
    """
    R = receptive_field(kernel, dilations)
    outs = [np.array([R - 1])]
    for d in reversed(dilations):
        p = outs[0]
        need = np.unique((p[:, None] - np.arange(kernel)[None, :] * d).ravel())
        outs.insert(0, need)
    plan = []
    for layer, d in enumerate(dilations):
        pin, pout = outs[layer], outs[layer + 1]
        taps = tuple(np.searchsorted(pin, pout - (kernel - 1 - j) * d) for j in range(kernel))
        plan.append((pin, pout, taps))
    return R, plan


@dataclass
class TcnModel:
    c_in: int
    n_out: int
    window: int = 30
    kernel: int = 4
    dilations: tuple = (1, 2, 4, 8)
    channels: int = 32
    conv_w: list = field(default_factory=list)   # per layer (kernel, c_prev, channels)
    conv_b: list = field(default_factory=list)   # per layer (channels,)
    head_w: list = field(default_factory=list)   # [low, high] (channels, n_out)
    head_b: list = field(default_factory=list)
    mean: np.ndarray | None = None               # input normalization
    scale: np.ndarray | None = None
    label_scale: np.ndarray | None = None        # per-output scale of both heads
    w_low: float = 1.0
    w_high: float = 2.0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.kernel != 4:
            raise ContractViolation("kernel size is fixed at 4")
        if self.receptive_field < self.window:
            raise ContractViolation(
                f"receptive field {self.receptive_field} shorter than the window {self.window}"
            )
        if self.mean is None:
            self.mean = np.zeros(self.c_in)
        if self.scale is None:
            self.scale = np.ones(self.c_in)
        if self.label_scale is None:
            self.label_scale = np.ones(self.n_out)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.kernel, self.dilations)

    @classmethod
    def initialize(cls, c_in: int, n_out: int, seed: int = 0, **kw) -> "TcnModel":
        """Glorot-uniform convolutions, small head weights, zero biases."""
        m = cls(c_in=c_in, n_out=n_out, seed=seed, **kw)
        rng = np.random.default_rng(seed)
        prev = c_in
        for _ in m.dilations:
            lim = np.sqrt(6.0 / (m.kernel * prev + m.kernel * m.channels))
            m.conv_w.append(rng.uniform(-lim, lim, (m.kernel, prev, m.channels)))
            m.conv_b.append(np.zeros(m.channels))
            prev = m.channels
        for _ in range(2):
            lim = np.sqrt(6.0 / (m.channels + n_out))
            m.head_w.append(rng.uniform(-lim, lim, (m.channels, n_out)))
            m.head_b.append(np.zeros(n_out))
        return m

    def params(self) -> list:
        """Flat list of parameter arrays in the canonical (file) order."""
        out = []
        for w, b in zip(self.conv_w, self.conv_b):
            out += [w, b]
        for w, b in zip(self.head_w, self.head_b):
            out += [w, b]
        return out

    def set_params(self, arrays):
        arrays = list(arrays)
        L = len(self.dilations)
        self.conv_w = arrays[0 : 2 * L : 2]
        self.conv_b = arrays[1 : 2 * L : 2]
        self.head_w = [arrays[2 * L], arrays[2 * L + 2]]
        self.head_b = [arrays[2 * L + 1], arrays[2 * L + 3]]

    def copy(self) -> "TcnModel":
        m = TcnModel(**{k: getattr(self, k) for k in ("c_in", "n_out", "window", "kernel", "dilations", "channels")})
        m.set_params([p.copy() for p in self.params()])
        m.mean, m.scale, m.label_scale = self.mean.copy(), self.scale.copy(), self.label_scale.copy()
        m.w_low, m.w_high, m.seed, m.meta = self.w_low, self.w_high, self.seed, dict(self.meta)
        return m

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale


def _fit_window(model: TcnModel, x):
    """(B, L, C) normalized windows -> (B, R, C), zero-padded or cut on the left."""
    if x.ndim != 3 or x.shape[2] != model.c_in:
        raise ContractViolation(f"expected windows (batch, time, {model.c_in}), got {x.shape}")
    R = model.receptive_field
    L = x.shape[1]
    if L >= R:
        return x[:, L - R :, :]
    out = np.zeros((x.shape[0], R, x.shape[2]), dtype=x.dtype)
    out[:, R - L :, :] = x
    return out


def forward_normalized(model: TcnModel, x, keep: bool = False):
    """Heads on normalized windows (B, L, C).  Returns (low, high) in label
    units divided by ``label_scale``, plus the activation cache if ``keep``."""
    R, plan = _plan(model.kernel, model.dilations)
    h = _fit_window(model, x)
    h = h[:, plan[0][0], :]
    cache = []
    for (pin, pout, taps), W, b in zip(plan, model.conv_w, model.conv_b):
        z = b + sum(h[:, idx, :] @ W[j] for j, idx in enumerate(taps))
        a = np.tanh(z)
        if keep:
            cache.append((h, a))
        h = a
    feat = h[:, -1, :]
    low = feat @ model.head_w[0] + model.head_b[0]
    high = feat @ model.head_w[1] + model.head_b[1]
    return low, high, (cache, feat)


def tcn_forward(model: TcnModel, window):
    """Raw-unit window (C_in, L) or batch (B, C_in, L) -> (tau_low, tau_high,
    tau_tcn) in label units."""
    w = np.asarray(window, dtype=float)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.ndim != 3 or w.shape[1] != model.c_in:
        raise ContractViolation(f"window must be ({model.c_in}, L), got {np.shape(window)}")
    x = model.normalize(np.swapaxes(w, 1, 2))
    low, high, _ = forward_normalized(model, x)
    low, high = low * model.label_scale, high * model.label_scale
    if single:
        low, high = low[0], high[0]
    return low, high, low + high


def loss_and_grad(model: TcnModel, x, y_low, y_high, with_grad: bool = True):
    """Weighted MSE of both heads on normalized inputs/labels and its
    gradient, in ``model.params()`` order."""
    low, high, (cache, feat) = forward_normalized(model, x, keep=with_grad)
    B = x.shape[0]
    denom = B * model.n_out
    e_low, e_high = low - y_low, high - y_high
    loss = (model.w_low * np.sum(e_low**2) + model.w_high * np.sum(e_high**2)) / denom
    if not with_grad:
        return loss, None
    g_low = 2.0 * model.w_low * e_low / denom
    g_high = 2.0 * model.w_high * e_high / denom
    grads_head = [feat.T @ g_low, g_low.sum(0), feat.T @ g_high, g_high.sum(0)]
    d_feat = g_low @ model.head_w[0].T + g_high @ model.head_w[1].T

    _, plan = _plan(model.kernel, model.dilations)
    d_a = np.zeros_like(cache[-1][1])
    d_a[:, -1, :] = d_feat
    conv_grads = []
    for layer in reversed(range(len(plan))):
        pin, pout, taps = plan[layer]
        h_in, a = cache[layer]
        dz = d_a * (1.0 - a * a)
        W = model.conv_w[layer]
        flat_dz = dz.reshape(-1, dz.shape[2])
        gW = np.stack([h_in[:, idx, :].reshape(-1, h_in.shape[2]).T @ flat_dz for idx in taps])
        gb = flat_dz.sum(0)
        conv_grads.insert(0, (gW, gb))
        if layer > 0:
            d_in = np.zeros_like(h_in)
            for j, idx in enumerate(taps):
                # positions are distinct within one tap, so += does not drop terms
                d_in[:, idx, :] += dz @ W[j].T
            d_a = d_in
    grads = []
    for gW, gb in conv_grads:
        grads += [gW, gb]
    return loss, grads + grads_head
