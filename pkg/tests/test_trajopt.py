import dataclasses

import numpy as np
import pytest

from ksmotion import bspline, suites
from ksmotion.bspline import SplineTrajectory, ghost_points
from ksmotion.fixtures import load, planar_arm_doc
from ksmotion.ik import GoalSpec
from ksmotion.kinematics import forward_kinematics
from ksmotion.scene import cuboid, world_from_primitives
from ksmotion.spatial import Pose
from ksmotion.trajopt import (
    CostWeights, PlanningError, PlanProblem, anchored_spline, plan, read_trajectory_csv, total_cost,
    validate_trajectory, validation_samples, write_trajectory_csv,
)

SMOOTH_ONLY = CostWeights(gamma_smooth=1.0, gamma_length=0.0, gamma_energy=0.0, joint_limit=0.0, scene=0.0,
                          self_collision=0.0, goal=0.0, torque=0.0)


def tool_goal(model, q, **kw):
    st = forward_kinematics(model, np.atleast_2d(q))
    t = model.link_index("tool")
    return GoalSpec("tool", Pose(st.R[0, t], st.p[0, t]), **kw)


def test_stationary_plan_costs_nothing(planar3):
    q0 = np.array([0.3, -0.5, 0.8])
    prob = PlanProblem((q0, 0.0, 0.0), [tool_goal(planar3, q0)])
    spline = anchored_spline(planar3, prob, np.repeat(q0[:, None], prob.segments, axis=1))
    cost, grad, terms = total_cost(planar3, prob, spline)
    assert abs(cost) <= 1e-12 and np.all(np.abs(list(terms.values())) <= 1e-12)
    assert np.max(np.abs(grad)) <= 1e-10


def test_smoothness_closed_form(pendulum):
    """A quadratic profile has constant acceleration, so the cost is N * a^2."""
    a, dt = 0.7, 0.2
    prob = PlanProblem((0.0, 0.0, a), [], weights=SMOOTH_ONLY, dt_u=dt, enable_dynamics=False)
    P = np.array([[0.5 * a * dt**2 * i**2 - a * dt**2 / 6 for i in range(3, 3 + prob.segments)]])
    spline = SplineTrajectory(P, dt, ghost_points([0.0], [0.0], [a], dt), False, prob.n_interp)
    n = len(bspline.sample_uniform(spline))
    cost, _, _ = total_cost(pendulum, prob, spline)
    assert cost == pytest.approx(n * a**2, rel=1e-12)


def test_gradient_matches_fd_with_obstacle_and_dynamics(planar3, rng):
    wall = cuboid([0.45, 0.35, 0.0], [0.06, 0.06, 0.1])
    world = world_from_primitives([wall], [-1.0, -1.0, -0.06], [1.0, 1.0, 0.06], 0.02)
    q0, q1 = np.array([0.0, 0.3, 0.2]), np.array([1.2, 0.1, -0.4])
    weights = dataclasses.replace(CostWeights(), gamma_energy=1.0)
    prob = PlanProblem((q0, [0.1, 0.0, -0.1], 0.0), [tool_goal(planar3, q1)], world=world, weights=weights)
    U = q0[:, None] + (q1 - q0)[:, None] * np.linspace(0.1, 1.0, prob.segments)[None] + rng.normal(0, 0.05, (3, 8))
    spline = anchored_spline(planar3, prob, U)
    cost, grad, terms = total_cost(planar3, prob, spline)
    assert terms["scene"] > 0 and terms["energy"] > 0
    h = 1e-6
    fd = np.zeros_like(U)
    for idx in np.ndindex(*U.shape):
        dU = np.zeros_like(U)
        dU[idx] = h
        fd[idx] = (total_cost(planar3, prob, anchored_spline(planar3, prob, U + dU))[0]
                   - total_cost(planar3, prob, anchored_spline(planar3, prob, U - dU))[0]) / (2 * h)
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


def test_dynamics_without_inertia_rejected():
    m = load(planar_arm_doc([0.4, 0.3], masses=[0.0, 0.0]))
    prob = PlanProblem((np.zeros(2), 0.0, 0.0), [])
    with pytest.raises(ValueError):
        total_cost(m, prob, anchored_spline(m, prob, np.zeros((2, 8))))


def test_problem_validation(planar2):
    with pytest.raises(ValueError):
        PlanProblem((0.0, 0.0, 0.0), [], segments=3)
    with pytest.raises(ValueError):
        plan(planar2, PlanProblem((np.array([4.0, 0.0]), 0.0, 0.0), [tool_goal(planar2, np.zeros(2))]))
    far = GoalSpec("tool", Pose(np.eye(3), np.array([3.0, 0.0, 0.0])), weight_rot=0.0)
    with pytest.raises(PlanningError):
        plan(planar2, PlanProblem((np.zeros(2), 0.0, 0.0), [far], ik_seeds=4))


@pytest.fixture(scope="module")
def free_plan():
    model = suites.obstacle_arm()
    q0 = np.array([0.2, 0.4, -0.3])
    start = (q0, [0.2, -0.1, 0.0], [0.0, 0.3, 0.0])
    prob = PlanProblem(start, [tool_goal(model, [1.1, -0.2, 0.5], weight_rot=0.0)], enable_dynamics=True)
    return model, prob, plan(model, prob)


def test_free_space_plan(free_plan):
    model, prob, res = free_plan
    assert res.feasible and res.violation_report.ok
    first, last = res.samples[0], res.samples[-1]
    for got, want in zip((first.theta, first.theta_dot, first.theta_ddot), prob.start):
        np.testing.assert_allclose(got, want, atol=1e-9)
    np.testing.assert_allclose(last.theta_dot, 0, atol=1e-9)
    np.testing.assert_allclose(last.theta_ddot, 0, atol=1e-9)
    assert res.torques is not None and res.torques.shape == (len(res.samples), model.dof)
    # validator agreement at four times the optimization density
    dense = validate_trajectory(model, None, validation_samples(res.spline), None, prob.goals)
    assert dense.ok


def test_plan_is_deterministic(free_plan):
    model, prob, res = free_plan
    again = plan(model, prob)
    np.testing.assert_array_equal(again.spline.control_points, res.spline.control_points)
    assert again.cost == res.cost


def test_injected_velocity_fault(free_plan):
    model, prob, res = free_plan
    samples = validation_samples(res.spline)
    k = 17
    s = samples[k]
    bumped = s.theta_dot.copy()
    bumped[1] = 3.5
    samples[k] = dataclasses.replace(s, theta_dot=bumped)
    report = validate_trajectory(model, None, samples, None, prob.goals)
    assert [v.constraint for v in report.violations] == ["velocity"]
    v = report.checks["velocity"]
    assert v.index == k and v.t == samples[k].t and v.worst == pytest.approx(0.5)


def test_trajectory_csv_round_trip(free_plan, tmp_path):
    model, _, res = free_plan
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, res.samples, res.torques)
    header, data = read_trajectory_csv(path)
    assert header[:2] == ["t", "q0"] and header[-1] == "tau2" and len(header) == 1 + 4 * model.dof
    np.testing.assert_array_equal(data[:, 0], [s.t for s in res.samples])
    np.testing.assert_array_equal(data[:, 1:4], [s.theta for s in res.samples])
    np.testing.assert_array_equal(data[:, -3:], res.torques)
    write_trajectory_csv(path, res.samples)
    assert len(read_trajectory_csv(path)[0]) == 1 + 3 * model.dof


def test_payload_torque_contrast():
    model = suites.payload_arm()
    p = suites.payload_suite(model, n=1)[0]
    base = PlanProblem((p.start, 0.0, 0.0), [p.goal], segments=8, dt_u=0.4, payload=suites.PAYLOAD)
    with_dyn = plan(model, base)
    assert with_dyn.feasible and with_dyn.violation_report.dynamics_ok
    without = plan(model, dataclasses.replace(base, enable_dynamics=False))
    assert without.violation_report.kinematic_ok
    assert not without.violation_report.dynamics_ok
    assert without.violation_report.checks["torque"].worst > 0
