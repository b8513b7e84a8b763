"""Weights file and dataset manifest.

Weights file layout (all little-endian)::

    magic      8 bytes  b"SKFTCN\\x00\\x01"
    header     uint32 x 8: version, C_in, L_in, n_out, kernel, channels,
               n_layers, seed
    layers     uint32 x 3 per layer: dilation, in channels, out channels
    weights    float32 x 2: w_low, w_high
    tensors    float32, row-major, in this order: input mean (C_in), input
               scale (C_in), label scale (n_out), per layer W (kernel, in,
               out) and b (out), then low head W (channels, n_out), b
               (n_out), high head W, b.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ContractViolation
from .tcn import TcnModel

MAGIC = b"SKFTCN\x00\x01"
VERSION = 1


def _tensors(model: TcnModel):
    return [model.mean, model.scale, model.label_scale] + model.params()


def save_model(path, model: TcnModel):
    buf = bytearray(MAGIC)
    L = len(model.dilations)
    buf += struct.pack("<8I", VERSION, model.c_in, model.window, model.n_out, model.kernel, model.channels, L,
                       model.seed & 0xFFFFFFFF)
    prev = model.c_in
    for d in model.dilations:
        buf += struct.pack("<3I", d, prev, model.channels)
        prev = model.channels
    buf += struct.pack("<2f", model.w_low, model.w_high)
    for t in _tensors(model):
        buf += np.ascontiguousarray(t, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_model(path) -> TcnModel:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ContractViolation(f"{path}: not a TCN weights file")
    off = 8
    version, c_in, window, n_out, kernel, channels, L, seed = struct.unpack_from("<8I", raw, off)
    off += 32
    if version != VERSION:
        raise ContractViolation(f"{path}: unsupported weights version {version}")
    dil = []
    for _ in range(L):
        d, _cin, _cout = struct.unpack_from("<3I", raw, off)
        off += 12
        dil.append(d)
    w_low, w_high = struct.unpack_from("<2f", raw, off)
    off += 8
    model = TcnModel(c_in=c_in, n_out=n_out, window=window, kernel=kernel, dilations=tuple(dil), channels=channels,
                     w_low=float(w_low), w_high=float(w_high), seed=seed)
    shapes = [(c_in,), (c_in,), (n_out,)]
    prev = c_in
    for _ in dil:
        shapes += [(kernel, prev, channels), (channels,)]
        prev = channels
    shapes += [(channels, n_out), (n_out,), (channels, n_out), (n_out,)]
    arrays = []
    for shp in shapes:
        cnt = int(np.prod(shp))
        if off + 4 * cnt > len(raw):
            raise ContractViolation(f"{path}: truncated weights file")
        arrays.append(np.frombuffer(raw, dtype="<f4", count=cnt, offset=off).astype(float).reshape(shp))
        off += 4 * cnt
    if off != len(raw):
        raise ContractViolation(f"{path}: {len(raw) - off} trailing bytes")
    model.mean, model.scale, model.label_scale = arrays[:3]
    model.set_params(arrays[3:])
    return model


def write_manifest(path, entries, seed: int, extra: dict | None = None):
    """``entries``: iterable of (log path, split) with split in {train, val, test}."""
    lines = ["# skinfusion dataset manifest v1", f"seed = {seed}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    for p, split in entries:
        if split not in ("train", "val", "test"):
            raise ContractViolation(f"unknown split {split!r}")
        lines.append(f"log {split} {p}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    """Returns (entries, settings) with entries = [(path, split)]."""
    entries, settings = [], {}
    base = Path(path).parent
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("log "):
            _, split, p = line.split(None, 2)
            pp = Path(p)
            entries.append((pp if pp.is_absolute() else base / pp, split))
        elif "=" in line:
            k, v = line.split("=", 1)
            settings[k.strip()] = v.strip()
        else:
            raise ContractViolation(f"bad manifest line {raw!r}")
    return entries, settings
