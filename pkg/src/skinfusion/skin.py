"""Simulated pneumatic skin pads: pressure response, thresholded contact
detection and contact frame estimation.

Force convention: a pad force is the load the pad surface exerts on whatever
touches it, in the pad frame (tangent, tangent, outward normal).  Pressing on
a pad therefore has a positive normal component.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ContactFrame, RobotModel, forward_kinematics
from .errors import ContractViolation


@dataclass(frozen=True)
class PadLayout:
    links: np.ndarray       # (m,) parent link index
    centers: np.ndarray     # (m, 3) in link frame
    normals: np.ndarray     # (m, 3) outward, link frame
    areas: np.ndarray       # (m,) m^2
    gains: np.ndarray       # (m,) pressure units per N/m^2
    noise: np.ndarray       # (m,) pressure units

    def __post_init__(self):
        m = len(self.links)
        set_ = object.__setattr__
        set_(self, "links", np.asarray(self.links, dtype=int).reshape(m))
        set_(self, "centers", np.asarray(self.centers, dtype=float).reshape(m, 3))
        set_(self, "normals", np.asarray(self.normals, dtype=float).reshape(m, 3))
        for name in ("areas", "gains", "noise"):
            set_(self, name, np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (m,)).copy())
        if np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > 1e-9):
            raise ContractViolation("pad normals must be unit vectors")
        if np.any(self.areas <= 0):
            raise ContractViolation("pad areas must be positive")

    @property
    def n_pads(self) -> int:
        return len(self.links)

    def check_id(self, pad: int):
        if not 0 <= pad < self.n_pads:
            raise ContractViolation(f"unknown pad id {pad}")


@dataclass(frozen=True)
class SkinFrameSample:
    t: float
    pressures: np.ndarray


def pad_pressure(layout: PadLayout, pad: int, force, area_fraction: float, rng=None) -> float:
    """Pressure reading for a force in the pad frame.  Only the compressive
    normal component registers; a smaller contact patch reads higher."""
    layout.check_id(pad)
    if not 0.0 < area_fraction <= 1.0:
        raise ContractViolation("area fraction must lie in (0, 1]")
    fn = max(0.0, float(np.asarray(force, dtype=float)[2]))
    p = layout.gains[pad] * fn / (area_fraction * layout.areas[pad])
    if rng is not None:
        p += layout.noise[pad] * rng.standard_normal()
    return p


def frame_from_normal(point, normal, link: int) -> ContactFrame:
    """Complete an outward normal to a right-handed frame, taking the first
    tangent from the base x-axis (y-axis when the normal is nearly along x)."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    t1 = ref - (ref @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return ContactFrame(point=point, rotation=np.column_stack([t1, t2, n]), link=link)


def pad_frame(layout: PadLayout, model: RobotModel, q, pad: int) -> ContactFrame:
    layout.check_id(pad)
    link = int(layout.links[pad])
    p, R = forward_kinematics(model, q, link, layout.centers[pad])
    return frame_from_normal(p, R @ layout.normals[pad], link)


def detect_contact(pressures, active, threshold: float, hysteresis: float):
    """One detector update.  Returns (new active flags, onset flags)."""
    if not threshold > hysteresis >= 0:
        raise ContractViolation("need threshold > hysteresis >= 0")
    p = np.asarray(pressures, dtype=float)
    active = np.asarray(active, dtype=bool)
    new = np.where(active, p >= threshold - hysteresis, p > threshold)
    return new, new & ~active


class ContactDetector:
    """Per-pad contact flags with hysteresis, fed one skin sample at a time."""

    def __init__(self, n_pads: int, threshold: float, hysteresis: float):
        if not threshold > hysteresis >= 0:
            raise ContractViolation("need threshold > hysteresis >= 0")
        self.threshold = threshold
        self.hysteresis = hysteresis
        self.active = np.zeros(n_pads, dtype=bool)

    def update(self, sample: SkinFrameSample):
        self.active, onset = detect_contact(sample.pressures, self.active, self.threshold, self.hysteresis)
        return set(np.flatnonzero(self.active).tolist()), onset


def contact_point_estimate(layout: PadLayout, model: RobotModel, q, active, pressures) -> ContactFrame:
    """Merge all active pads into one contact frame.

    The point is the pressure-weighted centroid of the pad centres and the
    normal the weighted mean of pad normals.  The frame is attached to the
    link of the strongest pad (the most distal one on ties), which is the
    link the contact Jacobian is built for.
    """
    ids = sorted(int(i) for i in active)
    if not ids:
        raise ContractViolation("no active pad")
    for i in ids:
        layout.check_id(i)
    w = np.clip(np.asarray(pressures, dtype=float)[ids], 0.0, None)
    if w.sum() <= 0:
        w = np.ones(len(ids))
    w = w / w.sum()
    pts, nrm = [], []
    for i in ids:
        p, R = forward_kinematics(model, q, int(layout.links[i]), layout.centers[i])
        pts.append(p)
        nrm.append(R @ layout.normals[i])
    point = w @ np.array(pts)
    normal = w @ np.array(nrm)
    if np.linalg.norm(normal) < 1e-9:
        raise ContractViolation("active pad normals cancel; contact normal undefined")
    order = sorted(range(len(ids)), key=lambda k: (w[k], layout.links[ids[k]]))
    link = int(layout.links[ids[order[-1]]])
    return frame_from_normal(point, normal, link)
