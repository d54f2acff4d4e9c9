import numpy as np
import pytest

from ksmotion.dynamics import rnea, rnea_vjp, world_wrench_to_link
from ksmotion.fixtures import load, mimic_gripper_doc, pendulum_doc
from ksmotion.kinematics import forward_kinematics
from ksmotion.robot_model import set_payload

G_Y = np.array([0.0, -9.81, 0.0])


def test_static_unloaded_is_zero(branched, rng):
    q = rng.uniform(-1, 1, (5, branched.dof))
    z = np.zeros_like(q)
    tau, _ = rnea(branched, q, z, z, gravity=np.zeros(3))
    assert np.all(np.abs(tau) < 1e-14)


@pytest.mark.parametrize("q", np.linspace(-np.pi, np.pi, 9))
def test_pendulum_gravity(q):
    m = load(pendulum_doc(mass=1.7, length=0.35))
    tau, _ = rnea(m, [[q]], [[0.0]], [[0.0]], gravity=G_Y)
    assert abs(tau[0, 0] - 1.7 * 9.81 * 0.35 * np.cos(q)) < 1e-10


def test_pendulum_inertia_adjoint(rng):
    mass, length, izz = 2.0, 0.5, 0.01
    m = load(pendulum_doc(mass, length, izz))
    for q in rng.uniform(-3, 3, 5):
        qd = rng.normal(size=(1, 1))
        tau, cache = rnea(m, [[q]], qd, [[0.3]], gravity=G_Y)
        g = rnea_vjp(m, [[q]], qd, np.array([[1.5]]), cache)
        assert g.qdd_bar[0, 0] == pytest.approx(1.5 * (mass * length**2 + izz), rel=1e-12)


def test_zero_adjoint(branched, rng):
    d = branched.dof
    q, qd, qdd = rng.normal(size=(3, 2, d))
    _, cache = rnea(branched, q, qd, qdd)
    g = rnea_vjp(branched, q, qd, np.zeros((2, d)), cache)
    for block in (g.q_bar, g.qd_bar, g.qdd_bar, g.fext_bar):
        assert np.all(block == 0)


def test_vjp_on_gripper_matches_fd(rng):
    m = load(mimic_gripper_doc())
    d = m.dof
    q, qd, qdd = rng.normal(size=(3, 1, d)) * 0.5
    fe = rng.normal(size=(1, m.n_links, 6))
    tb = rng.normal(size=(1, d))
    _, cache = rnea(m, q, qd, qdd, fe)
    g = rnea_vjp(m, q, qd, tb, cache)
    h = 1e-6

    def scalar(args):
        return float(np.sum(tb * rnea(m, *args)[0]))

    base = [q, qd, qdd, fe]
    for idx, got in enumerate([g.q_bar, g.qd_bar, g.qdd_bar, g.fext_bar]):
        fd = np.zeros_like(base[idx])
        for k in np.ndindex(base[idx].shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[idx][k] += h
            minus[idx][k] -= h
            fd[k] = (scalar(plus) - scalar(minus)) / (2 * h)
        np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-7)


def test_payload_adds_point_mass_torque():
    m = load(pendulum_doc(mass=1.0, length=0.4))
    loaded = set_payload(m, "arm", 3.0, (0.6, 0.0, 0.0), np.zeros((3, 3)))
    q = 0.3
    base, _ = rnea(m, [[q]], [[0.0]], [[0.0]], gravity=G_Y)
    tau, _ = rnea(loaded, [[q]], [[0.0]], [[0.0]], gravity=G_Y)
    assert tau[0, 0] - base[0, 0] == pytest.approx(3.0 * 9.81 * 0.6 * np.cos(q), rel=1e-12)


def test_external_force_equals_hanging_mass():
    # a downward world force on the link origin of a massless arm acts like gravity on a point mass there
    m = load(pendulum_doc(mass=0.0, length=0.5))
    arm = m.link_index("arm")
    q = np.array([[0.7]])
    st = forward_kinematics(m, q)
    wrench = np.zeros((1, m.n_links, 6))
    # force applied at the link origin (on the joint axis) creates no torque
    wrench[0, arm, 3:] = [0.0, -5.0, 0.0]
    fe = world_wrench_to_link(st.R, wrench)
    tau, _ = rnea(m, q, [[0.0]], [[0.0]], fe, gravity=np.zeros(3))
    assert abs(tau[0, 0]) < 1e-12
    # the same force offset by 0.5 along x: add the moment r x f about the origin
    r = st.R[0, arm] @ np.array([0.5, 0.0, 0.0])
    wrench[0, arm, :3] = np.cross(r, [0.0, -5.0, 0.0])
    fe = world_wrench_to_link(st.R, wrench)
    tau, _ = rnea(m, q, [[0.0]], [[0.0]], fe, gravity=np.zeros(3))
    # holding torque matches a 5 N weight hanging 0.5 m out
    assert tau[0, 0] == pytest.approx(5.0 * 0.5 * np.cos(0.7), rel=1e-12)


def test_nonfinite_external_force_rejected(pendulum):
    fe = np.full((pendulum.n_links, 6), np.nan)
    with pytest.raises(ValueError):
        rnea(pendulum, [[0.0]], [[0.0]], [[0.0]], fe)
