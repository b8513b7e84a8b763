"""Canonical CSV logs.

A log file starts with a version line and a metadata line, then a header
row of column names and one row per motor tick::

    # skinfusion-log v1
    # seed=7 dt=0.0025 script=none
    t,q_0,...,fsm_mode,p_0,...

Per-joint columns are ``<name>_<joint>``; pad pressures are ``p_<pad>``.
Simulated ground truth (``tau_fric_true``, ``tau_ext_true``, ``F`` and, for
closed-loop runs, ``q_true`` / ``qd_true``) is stored as extra columns.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ContractViolation

VERSION_LINE = "# skinfusion-log v1"
JOINT_GROUPS = ("q", "qd", "qdd", "I", "tau_meas", "tau_dyn", "tau_fric", "tau_res", "tau_tcn", "tau_ext")
TRUTH_GROUPS = ("q_true", "qd_true", "tau_fric_true", "tau_ext_true")
FMT = "%.10g"


def _expand(columns: dict) -> tuple[list, np.ndarray]:
    names, blocks = [], []
    for key, val in columns.items():
        a = np.asarray(val, dtype=float)
        if a.ndim == 1:
            names.append(key)
            blocks.append(a[:, None])
        else:
            names += [f"{key}_{j}" for j in range(a.shape[1])]
            blocks.append(a)
    lengths = {b.shape[0] for b in blocks}
    if len(lengths) != 1:
        raise ContractViolation("log columns have different lengths")
    return names, np.hstack(blocks)


def write_log(path, columns: dict, meta: dict | None = None):
    """Write ordered ``columns`` (1-D or (T, k) arrays) as a versioned CSV."""
    names, data = _expand(columns)
    meta_line = " ".join(f"{k}={v}" for k, v in (meta or {}).items())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{VERSION_LINE}\n# {meta_line}\n{','.join(names)}\n")
        np.savetxt(fh, data, fmt=FMT, delimiter=",")


def read_log(path):
    """Returns (columns, meta): grouped columns (``q`` -> (T, n) etc.) and the
    metadata dict."""
    path = Path(path)
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != VERSION_LINE:
            raise ContractViolation(f"{path}: not a skinfusion log (first line {first!r})")
        meta_line = fh.readline().lstrip("#").strip()
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size and data.shape[1] != len(header):
        raise ContractViolation(f"{path}: {data.shape[1]} values per row for {len(header)} columns")
    if not data.size:
        data = np.zeros((0, len(header)))
    meta = dict(item.split("=", 1) for item in meta_line.split() if "=" in item)
    groups: dict = {}
    for i, name in enumerate(header):
        base, _, idx = name.rpartition("_")
        if base and idx.isdigit():
            groups.setdefault(base, []).append((int(idx), i))
        else:
            groups[name] = i
    out = {}
    for k, v in groups.items():
        if isinstance(v, list):
            out[k] = data[:, [i for _, i in sorted(v)]]
        else:
            out[k] = data[:, v]
    return out, meta
