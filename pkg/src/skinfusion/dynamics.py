"""Rigid-body model of a serial revolute arm.

All vectors are expressed in the base frame unless a name says otherwise.
Functions accept a leading batch dimension on ``q``/``qd``/``qdd`` so that a
whole log (or a set of probe vectors for the mass matrix) can be evaluated in
one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class RobotModel:
    """Kinematic and inertial description of an n-joint revolute chain.

    Joint ``i`` sits at ``origins[i]`` in the frame of link ``i - 1`` (the base
    for ``i = 0``) and rotates about ``axes[i]``; link ``i`` is the body moved
    by joint ``i``.  ``armature`` is the reflected rotor inertia of each drive,
    added on the diagonal of M(q).
    """

    axes: np.ndarray
    origins: np.ndarray
    masses: np.ndarray
    coms: np.ndarray
    inertias: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    armature: np.ndarray | None = None
    kt: float = 1.0
    joint_limits: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        axes = np.atleast_2d(np.asarray(self.axes, dtype=float))
        n = axes.shape[0]
        if n < 1:
            raise ContractViolation("model needs at least one joint")
        set_(self, "axes", axes)
        set_(self, "origins", np.asarray(self.origins, dtype=float).reshape(n, 3))
        set_(self, "masses", np.asarray(self.masses, dtype=float).reshape(n))
        set_(self, "coms", np.asarray(self.coms, dtype=float).reshape(n, 3))
        set_(self, "inertias", np.asarray(self.inertias, dtype=float).reshape(n, 3, 3))
        set_(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        arm = np.zeros(n) if self.armature is None else self.armature
        set_(self, "armature", np.asarray(arm, dtype=float).reshape(n))
        if self.joint_limits is not None:
            set_(self, "joint_limits", np.asarray(self.joint_limits, dtype=float).reshape(n, 2))

        if np.any(np.abs(np.linalg.norm(self.axes, axis=1) - 1.0) > 1e-12):
            raise ContractViolation("joint axes must be unit vectors")
        if np.any(self.masses < 0) or np.any(self.armature < 0):
            raise ContractViolation("masses and armature must be non-negative")
        for I in self.inertias:
            if not np.allclose(I, I.T, atol=1e-12):
                raise ContractViolation("inertia tensors must be symmetric")
            if np.linalg.eigvalsh(I).min() < -1e-12:
                raise ContractViolation("inertia tensors must be positive semidefinite")
        if self.kt <= 0:
            raise ContractViolation("torque constant must be positive")
        K = np.zeros((n, 3, 3))
        K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -self.axes[:, 2], self.axes[:, 1], -self.axes[:, 0]
        K = K - np.swapaxes(K, 1, 2)
        set_(self, "_skew", K)
        set_(self, "_skew2", K @ K)

    @property
    def n_joints(self) -> int:
        return self.axes.shape[0]

    def scaled_inertia(self, factor) -> "RobotModel":
        """Copy with masses, inertias and armature multiplied by ``factor``
        (scalar or per-link)."""
        f = np.broadcast_to(np.asarray(factor, dtype=float), (self.n_joints,))
        return replace(
            self,
            masses=self.masses * f,
            inertias=self.inertias * f[:, None, None],
            armature=self.armature * f,
        )


@dataclass(frozen=True)
class JointState:
    t: float
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray


@dataclass(frozen=True)
class ContactFrame:
    """Contact point on link ``link`` with orientation columns
    (tangent, tangent, outward normal), all in the base frame."""

    point: np.ndarray
    rotation: np.ndarray
    link: int

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-10) or abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise ContractViolation("contact rotation must be a proper rotation")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", R)


def _check_q(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (model.n_joints,):
        raise ContractViolation(
            f"joint vector has trailing shape {q.shape[-1:]}, model has {model.n_joints} joints"
        )
    return q


_LEVI_CIVITA = np.zeros((3, 3, 3))
_LEVI_CIVITA[0, 1, 2] = _LEVI_CIVITA[1, 2, 0] = _LEVI_CIVITA[2, 0, 1] = 1.0
_LEVI_CIVITA[0, 2, 1] = _LEVI_CIVITA[2, 1, 0] = _LEVI_CIVITA[1, 0, 2] = -1.0


def _cross(a, b):
    # np.cross is slow for tiny batched arrays
    return np.einsum("xyz,...y,...z->...x", _LEVI_CIVITA, a, b)


def _rotmv(R, v):
    return np.einsum("...ij,...j->...i", R, v)


def axis_rotation(axis, angle) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``; ``angle`` may be batched."""
    k = np.asarray(axis, dtype=float)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    a = np.asarray(angle, dtype=float)[..., None, None]
    return np.eye(3) + np.sin(a) * K + (1.0 - np.cos(a)) * (K @ K)


def link_frames(model: RobotModel, q):
    """Return (R, P): link orientations (..., n, 3, 3) and joint origins
    (..., n, 3) in the base frame."""
    q = _check_q(model, q)
    if q.ndim == 1:
        return _link_frames_single(model, q)
    R = np.broadcast_to(np.eye(3), q.shape[:-1] + (3, 3))
    P = np.zeros(q.shape[:-1] + (3,))
    Rs, Ps = [], []
    for i in range(model.n_joints):
        P = P + _rotmv(R, model.origins[i])
        R = R @ axis_rotation(model.axes[i], q[..., i])
        Rs.append(R)
        Ps.append(P)
    return np.stack(Rs, axis=-3), np.stack(Ps, axis=-2)


def _link_frames_single(model: RobotModel, q):
    n = model.n_joints
    s, c = np.sin(q), 1.0 - np.cos(q)
    local = np.eye(3) + s[:, None, None] * model._skew + c[:, None, None] * model._skew2
    Rs = np.empty((n, 3, 3))
    Ps = np.empty((n, 3))
    R = np.eye(3)
    P = np.zeros(3)
    for i in range(n):
        P = P + R @ model.origins[i]
        R = R @ local[i]
        Rs[i] = R
        Ps[i] = P
    return Rs, Ps


def forward_kinematics(model: RobotModel, q, link: int, offset=(0.0, 0.0, 0.0)):
    """Position of a point rigidly attached to ``link`` (given in that link's
    frame) and the link orientation, both in the base frame."""
    if not 0 <= link < model.n_joints:
        raise ContractViolation(f"link index {link} out of range")
    R, P = link_frames(model, q)
    Rl = R[..., link, :, :]
    return P[..., link, :] + _rotmv(Rl, np.asarray(offset, dtype=float)), Rl


def rnea(model: RobotModel, q, qd, qdd, gravity=None) -> np.ndarray:
    """Recursive Newton-Euler inverse dynamics in world-frame vector form.

    ``q`` may carry fewer batch dimensions than ``qd``/``qdd``; the geometric
    quantities then broadcast over the velocity batch, which is how the mass
    matrix probes share one kinematic pass.
    """
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    qdd = _check_q(model, qdd)
    g = model.gravity if gravity is None else np.asarray(gravity, dtype=float)
    n = model.n_joints

    R, P = link_frames(model, q)
    z = _rotmv(R, model.axes)                      # joint axes in world
    rc = _rotmv(R, model.coms)                     # COM offsets from joint origin
    Iw = R @ model.inertias @ np.swapaxes(R, -1, -2)

    batch = np.broadcast_shapes(q.shape[:-1], qd.shape[:-1], qdd.shape[:-1], g.shape[:-1])
    w = np.zeros(batch + (3,))
    dw = np.zeros(batch + (3,))
    a = np.broadcast_to(-g, batch + (3,))
    p_prev = np.zeros(q.shape[:-1] + (3,))

    forces, moments = [], []
    for i in range(n):
        zi = z[..., i, :]
        d = P[..., i, :] - p_prev
        a = a + _cross(dw, d) + _cross(w, _cross(w, d))
        zqd = zi * qd[..., i, None]
        dw = dw + zi * qdd[..., i, None] + _cross(w, zqd)
        w = w + zqd
        r = rc[..., i, :]
        ac = a + _cross(dw, r) + _cross(w, _cross(w, r))
        I = Iw[..., i, :, :]
        forces.append(model.masses[i] * ac)
        moments.append(_rotmv(I, dw) + _cross(w, _rotmv(I, w)))
        p_prev = P[..., i, :]

    tau = np.empty(batch + (n,))
    f = np.zeros(batch + (3,))
    m = np.zeros(batch + (3,))
    for i in reversed(range(n)):
        if i < n - 1:
            lever = P[..., i + 1, :] - P[..., i, :]
            m = m + _cross(lever, f)
        m = m + moments[i] + _cross(rc[..., i, :], forces[i])
        f = f + forces[i]
        tau[..., i] = np.sum(z[..., i, :] * m, axis=-1) + model.armature[i] * qdd[..., i]
    return tau


def inverse_dynamics(model: RobotModel, state: JointState | None = None, *, q=None, qd=None, qdd=None):
    """tau_dyn = M(q) qdd + C(q, qd) qd + G(q)."""
    if state is not None:
        q, qd, qdd = state.q, state.qd, state.qdd
    return rnea(model, q, qd, qdd)


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    q = _check_q(model, q)
    zero = np.zeros_like(q)
    return rnea(model, q, zero, zero)


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """M(q) by unit-acceleration probes with gravity and velocity off."""
    q = _check_q(model, q)
    n = model.n_joints
    eye = np.eye(n)
    cols = rnea(model, q[..., None, :], np.zeros(n), eye, gravity=np.zeros(3))
    return np.swapaxes(cols, -1, -2)


def mass_and_bias(model: RobotModel, q, qd):
    """(M(q), C(q, qd) qd + G(q)) from a single batched pass; used by the plant."""
    q = _check_q(model, q)
    n = model.n_joints
    qd_b = np.zeros((n + 1, n))
    qd_b[n] = qd
    qdd_b = np.zeros((n + 1, n))
    qdd_b[:n] = np.eye(n)
    g_b = np.zeros((n + 1, 3))
    g_b[n] = model.gravity
    out = rnea(model, q, qd_b, qdd_b, gravity=g_b)
    return out[:n].T, out[n]


_MASKS: dict = {}


def _lower_mask(n):
    if n not in _MASKS:
        _MASKS[n] = np.tril(np.ones((n, n)))[:, :, None]
    return _MASKS[n]


def dynamics_terms(model: RobotModel, q, qd):
    """(M, C qd + G, G) for one configuration by explicit Jacobian assembly.

    The cost is a fixed number of small array operations, which makes it much
    cheaper than the recursion for the plant's one-state-per-tick use.
    """
    q = _check_q(model, q)
    qd = np.asarray(qd, dtype=float)
    n = model.n_joints
    R, P = link_frames(model, q)
    Z = np.einsum("kij,kj->ki", R, model.axes)
    C = P + np.einsum("kij,kj->ki", R, model.coms)
    low = _lower_mask(n)                                  # [i, k]: joint k moves link i

    Zq = Z * qd[:, None]
    omega = np.cumsum(Zq, axis=0)                         # link angular velocities
    rc = (C[:, None, :] - P[None, :, :]) * low            # [i, k] lever COM_i - P_k
    rp = (P[:, None, :] - P[None, :, :]) * low            # [i, k] lever P_i - P_k
    Jv = _cross(np.broadcast_to(Z, (n, n, 3)), rc)        # [i, k, :]
    Jw = np.broadcast_to(Z, (n, n, 3)) * low
    vc = np.einsum("ikx,k->ix", Jv, qd)
    vp = np.einsum("ikx,k->ix", _cross(np.broadcast_to(Z, (n, n, 3)), rp), qd)

    # velocity-product accelerations (qdd = 0)
    dZ = _cross(omega, Zq)                                # d/dt of Z_k qd_k
    alpha = np.cumsum(dZ, axis=0)
    ac = np.einsum(
        "ikx->ix",
        (_cross(np.broadcast_to(dZ, (n, n, 3)), rc)
         + _cross(np.broadcast_to(Zq, (n, n, 3)), vc[:, None, :] - vp[None, :, :])) * low,
    )
    Iw = R @ model.inertias @ np.swapaxes(R, -1, -2)
    Iomega = np.einsum("ixy,iy->ix", Iw, omega)
    mom = np.einsum("ixy,iy->ix", Iw, alpha) + _cross(omega, Iomega)

    m = model.masses
    M = np.einsum("i,ikx,ilx->kl", m, Jv, Jv) + np.einsum("ikx,ixy,ily->kl", Jw, Iw, Jw)
    M[np.diag_indices(n)] += model.armature
    G = -np.einsum("i,ikx,x->k", m, Jv, model.gravity)
    h = np.einsum("i,ikx,ix->k", m, Jv, ac) + np.einsum("ikx,ix->k", Jw, mom) + G
    return M, h, G


def contact_jacobian(model: RobotModel, q, frame: ContactFrame) -> np.ndarray:
    """6 x n Jacobian of the contact point; rows are (linear, angular)
    velocity in the contact frame.  Joints distal to ``frame.link`` give zero
    columns."""
    q = _check_q(model, q)
    if q.ndim != 1:
        raise ContractViolation("contact_jacobian takes a single configuration")
    R, P = link_frames(model, q)
    z = _rotmv(R, model.axes)
    J = np.zeros((6, model.n_joints))
    for i in range(frame.link + 1):
        J[:3, i] = np.cross(z[i], frame.point - P[i])
        J[3:, i] = z[i]
    Rt = frame.rotation.T
    J[:3] = Rt @ J[:3]
    J[3:] = Rt @ J[3:]
    return J
