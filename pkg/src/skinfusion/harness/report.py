"""Phase segmentation and residual statistics (static / static-to-kinetic)."""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import IntEnum

import numpy as np

from ..errors import ContractViolation


class Phase(IntEnum):
    STATIC = 0
    TRANSITION = 1
    KINETIC = 2


def phase_segmentation(qd, omega_static: float = 1e-4, window: int = 30) -> np.ndarray:
    """Per-sample, per-joint phase labels.

    Static where |qd| < omega_static.  The ``window`` samples starting at each
    static-to-moving crossing are transition samples, except those that fall
    back below the threshold, which stay Static.  Everything else is Kinetic.
    """
    if omega_static <= 0 or window < 1:
        raise ContractViolation("need omega_static > 0 and window >= 1")
    qd = np.asarray(qd, dtype=float)
    squeeze = qd.ndim == 1
    if squeeze:
        qd = qd[:, None]
    static = np.abs(qd) < omega_static
    labels = np.full(qd.shape, int(Phase.KINETIC), dtype=np.int8)
    T = qd.shape[0]
    for j in range(qd.shape[1]):
        s = static[:, j]
        starts = np.flatnonzero(~s[1:] & s[:-1]) + 1
        mark = np.zeros(T + window + 1, dtype=int)
        np.add.at(mark, starts, 1)
        np.add.at(mark, starts + window, -1)
        in_win = np.cumsum(mark)[:T] > 0
        labels[in_win, j] = int(Phase.TRANSITION)
        labels[s, j] = int(Phase.STATIC)
    return labels[:, 0] if squeeze else labels


def round_half_up(x, places: int = 2) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def mean_rounded(values, places: int = 2) -> float:
    """Mean of decimal table entries, rounded half-up: the arithmetic a
    printed table is checked with."""
    vals = [Decimal(repr(float(v))) for v in values]
    m = sum(vals, Decimal(0)) / Decimal(len(vals))
    return float(m.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def reduction_percent(before: float, after: float, places: int = 1) -> float:
    b, a = Decimal(repr(float(before))), Decimal(repr(float(after)))
    if b == 0:
        return 0.0
    r = (b - a) / b * 100
    return float(r.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def rmse_std(err):
    err = np.asarray(err, dtype=float)
    if err.size == 0:
        return float("nan"), float("nan")
    return float(np.sqrt(np.mean(err**2))), float(np.std(err))


@dataclass
class ResidualReport:
    """stats[model][phase] = {"rmse": per-joint list, "std": per-joint list,
    "count": per-joint sample counts}."""

    stats: dict
    aggregates: dict = field(default_factory=dict)
    reductions: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for phase in ("static", "transition"):
            for metric in ("rmse", "std"):
                lines.append(f"[{metric.upper()} {phase}]")
                for model in self.stats:
                    vals = " ".join(f"{v:10.2f}" for v in self.stats[model][phase][metric])
                    lines.append(f"  {model:12s} {vals}   mean {self.aggregates[model][phase][metric]:.2f}")
            lines.append(f"  reduction {self.reductions.get(phase, float('nan')):.1f}%")
        return "\n".join(lines) + "\n"

    def to_csv_rows(self):
        rows = [("model", "phase", "metric", "joint", "value")]
        for model, by_phase in self.stats.items():
            for phase, d in by_phase.items():
                for metric in ("rmse", "std", "count"):
                    for j, v in enumerate(d[metric]):
                        rows.append((model, phase, metric, str(j), f"{v:.6f}" if metric != "count" else str(int(v))))
                    if metric != "count":
                        rows.append((model, phase, metric, "mean", f"{self.aggregates[model][phase][metric]:.2f}"))
        for phase, r in self.reductions.items():
            rows.append(("", phase, "reduction_percent", "", f"{r:.1f}"))
        return rows


def report_from_table(rmse: dict, std: dict | None = None) -> ResidualReport:
    """Build a report from per-joint table values ``rmse[model][phase]``."""
    std = std or rmse
    stats = {
        m: {ph: {"rmse": list(rmse[m][ph]), "std": list(std[m][ph]), "count": [0] * len(rmse[m][ph])}
            for ph in rmse[m]}
        for m in rmse
    }
    return _finish(stats)


def _finish(stats) -> ResidualReport:
    agg = {
        m: {ph: {k: mean_rounded(d[k]) for k in ("rmse", "std")} for ph, d in by.items()}
        for m, by in stats.items()
    }
    red = {}
    models = list(stats)
    if len(models) >= 2:
        a, b = models[0], models[1]
        for ph in stats[a]:
            red[ph] = reduction_percent(agg[a][ph]["rmse"], agg[b][ph]["rmse"])
    return ResidualReport(stats, agg, red)


def residual_report(errors: dict, labels) -> ResidualReport:
    """``errors`` maps model name -> (T, n) force-free error series (the
    first entry is the reference for reductions); ``labels`` from
    ``phase_segmentation``."""
    labels = np.asarray(labels)
    shapes = {np.shape(e) for e in errors.values()}
    if len(shapes) != 1 or labels.shape != next(iter(shapes)):
        raise ContractViolation("error logs and labels are not aligned sample for sample")
    stats = {}
    for name, err in errors.items():
        err = np.asarray(err, dtype=float)
        by = {}
        for ph_name, ph in (("static", Phase.STATIC), ("transition", Phase.TRANSITION)):
            rm, sd, cnt = [], [], []
            for j in range(err.shape[1]):
                e = err[labels[:, j] == ph, j]
                r, s = rmse_std(e)
                rm.append(r)
                sd.append(s)
                cnt.append(e.size)
            by[ph_name] = {"rmse": rm, "std": sd, "count": cnt}
        stats[name] = by
    return _finish(stats)
