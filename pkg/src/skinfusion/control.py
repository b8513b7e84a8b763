"""Joint-space admittance: a virtual mass-damper driven by the dead-banded
external torque estimate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class AdmittanceParams:
    mass: np.ndarray        # virtual inertia, N*m*s^2/rad
    damping: np.ndarray     # virtual damping, N*m*s/rad
    vlimit: np.ndarray      # rad/s

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mass, dtype=float))
        n = max(m.size, np.size(self.damping), np.size(self.vlimit))
        for name in ("mass", "damping", "vlimit"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            if np.any(v <= 0):
                raise ContractViolation(f"admittance {name} must be positive")
            object.__setattr__(self, name, v)


def admittance_update(params: AdmittanceParams, v_prev, tau, dt: float) -> np.ndarray:
    """Implicit Euler step of M_a v' + D_a v = tau, then the velocity clamp."""
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    v = (params.mass * np.asarray(v_prev, dtype=float) + dt * np.asarray(tau, dtype=float)) / (
        params.mass + dt * params.damping
    )
    return np.clip(v, -params.vlimit, params.vlimit)
