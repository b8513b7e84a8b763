import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skinfusion.control import AdmittanceParams, admittance_update
from skinfusion.errors import ContractViolation

DT = 0.0025


def run(params, tau, steps, v0=0.0):
    v = np.broadcast_to(np.asarray(v0, dtype=float), params.mass.shape).copy()
    out = []
    for k in range(steps):
        v = admittance_update(params, v, tau[k] if np.ndim(tau) > 1 else tau, DT)
        out.append(v)
    return np.array(out)


@pytest.mark.parametrize("mass,damping", [(0.5, 4.0), (1.0, 4.0), (2.0, 1.0), (0.25, 5.0)])
def test_constant_torque_reaches_tau_over_damping(mass, damping):
    p = AdmittanceParams(mass, damping, 100.0)
    steps = int(np.ceil(5 * mass / damping / DT))
    v = run(p, np.array([1.5]), steps)
    assert v[-1, 0] == pytest.approx(1.5 / damping, rel=0.01)
    assert np.all(np.diff(v[:, 0]) >= 0)


def test_matches_closed_form_response():
    p = AdmittanceParams(1.0, 4.0, 100.0)
    v = run(p, np.array([2.0]), 400)[:, 0]
    k = np.arange(1, 401)
    expected = 0.5 * (1 - (1 / (1 + DT * 4.0)) ** k)
    assert np.allclose(v, expected, rtol=1e-12)


def test_velocity_clamp():
    p = AdmittanceParams([1.0, 1.0], [4.0, 4.0], [0.5, 0.1])
    v = run(p, np.array([100.0, -100.0]), 2000)
    assert np.allclose(v[-1], [0.5, -0.1])
    assert np.all(np.abs(v) <= p.vlimit + 1e-15)


def test_params_contract():
    with pytest.raises(ContractViolation):
        AdmittanceParams(0.0, 1.0, 1.0)
    with pytest.raises(ContractViolation):
        AdmittanceParams(1.0, [1.0, -1.0], 1.0)
    with pytest.raises(ContractViolation):
        admittance_update(AdmittanceParams(1.0, 1.0, 1.0), [0.0], [1.0], 0.0)
    p = AdmittanceParams(1.0, [1.0, 2.0, 3.0], 0.5)
    assert p.mass.shape == (3,) and p.vlimit.shape == (3,)


@given(st.lists(st.floats(-50, 50), min_size=10, max_size=400), st.floats(0.05, 5.0), st.floats(0.1, 20.0))
def test_passive(taus, mass, damping):
    """Stored kinetic energy never exceeds the energy supplied by the input."""
    p = AdmittanceParams(mass, damping, 1e9)
    v = np.zeros(1)
    supplied = 0.0
    for tau in taus:
        v_new = admittance_update(p, v, [tau], DT)
        supplied += tau * v_new[0] * DT
        v = v_new
        assert 0.5 * mass * v[0] ** 2 <= supplied + 1e-12


@given(st.floats(0.05, 10.0), st.floats(0.1, 50.0), st.floats(1e-4, 0.1), st.floats(-5, 5))
def test_unconditionally_stable(mass, damping, dt, v0):
    """Free response decays monotonically for any step size."""
    p = AdmittanceParams(mass, damping, 1e9)
    v = np.array([v0])
    for _ in range(50):
        v_new = admittance_update(p, v, [0.0], dt)
        assert abs(v_new[0]) <= abs(v[0]) and v_new[0] * v[0] >= 0
        v = v_new


def test_closed_loop_requires_mass_above_joint_inertia(ref_cfg):
    """Stiff tracking of v_cmd feeds the arm's reaction back as torque.  The
    loop is stable when the virtual inertia exceeds the joint inertia."""
    from skinfusion.dynamics import mass_matrix
    from skinfusion.harness.pipeline import setup_from_config
    setup = setup_from_config(ref_cfg)
    m_joint = mass_matrix(setup.model, np.array([0.0, 0.3, -0.4, 0.0]))[0, 0]

    damping = ref_cfg.float("control.damping")

    def response(mass):
        # joint 0 as a 1-DoF loop: the servo forces velocity v_cmd; the
        # measured torque includes the inertial reaction m_joint * dv/dt
        p = AdmittanceParams(mass, ref_cfg.float("control.damping"), 1e9)
        v = np.zeros(1)
        prev = 0.0
        hist = []
        for k in range(800):
            push = 1.0 if k < 400 else 0.0
            tau = push - m_joint * (v[0] - prev) / DT
            prev = v[0]
            v = admittance_update(p, v, [tau], DT)
            hist.append(v[0])
        return np.abs(hist)

    assert m_joint > 0.5
    assert np.max(response(1.0)) <= 1.0 / damping + 1e-9
    assert np.max(response(0.5)[-100:]) > 1.0
