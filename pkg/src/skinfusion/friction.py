"""Joint friction: the nominal Stribeck/viscous model with load-dependent
coefficients, a bristle (LuGre-type) model used as plant ground truth, and a
least-squares identification routine for the nominal model.

All torques here are in current units.  Parameters are per-joint arrays and
every function broadcasts over a leading time axis.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.optimize import least_squares

from .errors import ContractViolation, IdentifiabilityError


@dataclass(frozen=True)
class FrictionParams:
    tau_c: np.ndarray
    tau_s: np.ndarray
    qd_s: np.ndarray
    delta: np.ndarray
    b: np.ndarray
    alpha_c: np.ndarray
    alpha_v: np.ndarray

    def __post_init__(self):
        n = np.shape(self.tau_c)[-1] if np.ndim(self.tau_c) else 1
        for f in fields(self):
            v = np.asarray(getattr(self, f.name), dtype=float)
            # coefficients may carry a leading time axis after load adjustment
            object.__setattr__(self, f.name, np.array(np.broadcast_to(v, np.broadcast_shapes(v.shape, (n,)))))
        if np.any(self.qd_s <= 0) or np.any(self.delta <= 0):
            raise ContractViolation("Stribeck velocity and shape exponent must be positive")
        if np.any(self.tau_c < 0) or np.any(self.b < 0):
            raise ContractViolation("Coulomb level and viscous coefficient must be non-negative")
        if np.any(self.alpha_c < 0) or np.any(self.alpha_v < 0):
            raise ContractViolation("load scales must be non-negative")

    @property
    def n_joints(self) -> int:
        return self.tau_c.shape[-1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def stribeck_friction(params: FrictionParams, qd) -> np.ndarray:
    qd = np.asarray(qd, dtype=float)
    shape = np.exp(-np.abs(qd / params.qd_s) ** params.delta)
    return (params.tau_c + (params.tau_s - params.tau_c) * shape) * np.sign(qd) + params.b * qd


def load_adjusted_params(params: FrictionParams, g_abs) -> FrictionParams:
    """Coulomb and viscous coefficients grown by |G(q)| (current units).

    With a batched ``g_abs`` of shape (T, n) the returned coefficient arrays
    keep that shape, which the vectorised callers rely on.
    """
    g_abs = np.asarray(g_abs, dtype=float)
    if np.any(g_abs < 0):
        raise ContractViolation("|G(q)| must be non-negative")
    return replace(params, tau_c=params.tau_c + params.alpha_c * g_abs, b=params.b + params.alpha_v * g_abs)


@dataclass(frozen=True)
class HystereticFrictionState:
    z: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray

    @classmethod
    def default(cls, params: FrictionParams, sigma0=None, sigma1=None) -> "HystereticFrictionState":
        s0 = 100.0 * params.tau_s / params.qd_s if sigma0 is None else np.broadcast_to(sigma0, (params.n_joints,))
        s1 = np.sqrt(s0) if sigma1 is None else np.broadcast_to(sigma1, (params.n_joints,))
        return cls(np.zeros(params.n_joints), np.asarray(s0, float), np.asarray(s1, float))


def bristle_update(z, sigma0, sigma1, tau_c, tau_s, qd_s, delta, b, qd, dt):
    """Array-level bristle update shared by ``hysteretic_step`` and the plant's
    per-tick loop.  ``tau_c`` and ``b`` are the load-adjusted values."""
    g = tau_c + (tau_s - tau_c) * np.exp(-np.abs(qd / qd_s) ** delta)
    rate = sigma0 * np.abs(qd) / g
    z_ss = np.sign(qd) * g / sigma0
    z_new = np.where(rate > 0, z_ss + (z - z_ss) * np.exp(-rate * dt), z)
    zdot = (z_new - z) / dt
    return z_new, sigma0 * z_new + sigma1 * zdot + b * qd


def bristle_slope(z, sigma0, sigma1, tau_c, tau_s, qd_s, delta, b, qd, dt):
    """d(friction)/d(qd) of one ``bristle_update`` step, to first order in dt.

    The plant uses it to treat the stiff bristle implicitly in the velocity
    solve.  It is (sigma0 dt + sigma1) for an unloaded bristle and falls to
    ``b`` once the deflection reaches its sliding value.
    """
    g = tau_c + (tau_s - tau_c) * np.exp(-np.abs(qd / qd_s) ** delta)
    return (sigma0 * dt + sigma1) * np.maximum(0.0, 1.0 - sigma0 * np.sign(qd) * z / g) + b


def hysteretic_step(state: HystereticFrictionState, params: FrictionParams, qd, dt: float):
    """Advance the bristle deflection over ``dt`` at joint velocity ``qd``.

    ``params`` should already be load adjusted.  The deflection ODE is linear
    in z for a fixed velocity, so it is integrated exactly over the step, which
    keeps it stable for stiff bristles.  Returns (new state, friction torque).
    """
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    z_new, torque = bristle_update(
        state.z, state.sigma0, state.sigma1, params.tau_c, params.tau_s, params.qd_s, params.delta, params.b,
        np.asarray(qd, dtype=float), dt,
    )
    return replace(state, z=z_new), torque


def _basis(qd, g_abs, qd_s, delta):
    s = np.sign(qd)
    e = np.exp(-np.abs(qd / qd_s) ** delta)
    # coefficients: tau_c, alpha_c, tau_s, b, alpha_v
    return np.stack([s * (1 - e), g_abs * s * (1 - e), s * e, qd, g_abs * qd], axis=1)


def _model_1d(theta, qd, g_abs):
    tau_c, tau_s, qd_s, delta, b, alpha_c, alpha_v = theta
    tcl = tau_c + alpha_c * g_abs
    e = np.exp(-np.abs(qd / qd_s) ** delta)
    return (tcl + (tau_s - tcl) * e) * np.sign(qd) + (b + alpha_v * g_abs) * qd


def _fit_joint(qd, g_abs, y, fit_load: bool):
    cols = [0, 1, 2, 3, 4] if fit_load else [0, 2, 3]
    best = None
    for qd_s in np.geomspace(1e-3, 1.0, 31):
        for delta in np.linspace(0.5, 3.0, 11):
            A = _basis(qd, g_abs, qd_s, delta)[:, cols]
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            sse = float(np.sum((A @ coef - y) ** 2))
            if best is None or sse < best[0]:
                best = (sse, qd_s, delta, coef)
    _, qd_s, delta, coef = best
    full = np.zeros(5)
    full[cols] = coef
    tau_c, alpha_c, tau_s, b, alpha_v = full
    theta0 = np.array([tau_c, tau_s, qd_s, delta, b, alpha_c, alpha_v])
    free = np.arange(7) if fit_load else np.arange(5)
    lo = np.array([0, 0, 1e-6, 0.1, 0, 0, 0], dtype=float)[free]
    hi = np.array([np.inf, np.inf, 10.0, 10.0, np.inf, np.inf, np.inf])[free]

    def resid(x):
        th = theta0.copy()
        th[free] = x
        return _model_1d(th, qd, g_abs) - y

    sol = least_squares(
        resid,
        np.clip(theta0[free], lo, hi),
        bounds=(lo, hi),
        x_scale="jac",
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=2000,
    )
    theta = theta0.copy()
    theta[free] = sol.x
    rmse = float(np.sqrt(np.mean(resid(sol.x) ** 2)))
    return theta, rmse


def identify_friction(qd, g_abs, tau_residual, *, min_speed: float = 1e-4, min_samples: int = 20):
    """Fit the nominal friction model to friction-only residuals.

    ``qd``, ``g_abs`` (|G(q)| in current units) and ``tau_residual``
    (measured minus rigid-body torque) are (T, n) arrays.  Samples slower
    than ``min_speed`` are dropped: the nominal model is zero there by
    convention while the real joint may hold any sticking torque.

    Returns ``(FrictionParams, rmse)`` with per-joint RMSE of the fit.  Load
    scales are pinned at zero for joints whose |G| barely varies in the log.
    """
    qd = np.atleast_2d(np.asarray(qd, float))
    g_abs = np.atleast_2d(np.asarray(g_abs, float))
    y_all = np.atleast_2d(np.asarray(tau_residual, float))
    if not (qd.shape == g_abs.shape == y_all.shape):
        raise ContractViolation("qd, |G| and residual logs must have the same shape")
    n = qd.shape[1]
    thetas, rmses = [], []
    for j in range(n):
        m = np.abs(qd[:, j]) > min_speed
        v, g, y = qd[m, j], g_abs[m, j], y_all[m, j]
        if np.sum(v > 0) < min_samples or np.sum(v < 0) < min_samples:
            raise IdentifiabilityError(f"joint {j}: log does not cover both velocity signs")
        g_span = np.ptp(g) if g.size else 0.0
        fit_load = g_span > 1e-3 * max(1.0, float(np.max(np.abs(y))))
        theta, rmse = _fit_joint(v, g, y, fit_load)
        thetas.append(theta)
        rmses.append(rmse)
    th = np.array(thetas)
    params = FrictionParams(
        tau_c=th[:, 0], tau_s=th[:, 1], qd_s=th[:, 2], delta=th[:, 3], b=th[:, 4], alpha_c=th[:, 5], alpha_v=th[:, 6]
    )
    return params, np.array(rmses)
