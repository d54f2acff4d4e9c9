"""Goal-pose inverse kinematics over batched seeds, with optional collision-aware refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collision import MARGIN, scene_collision, self_collision
from .esdf import DenseEsdf
from .kinematics import (
    KinematicState,
    backprop_gradients,
    forward_kinematics,
    jacobian,
    sphere_grads_to_link_grads,
)
from .robot_model import RobotModel
from .solvers import LbfgsConfig, LmConfig, lbfgs_minimize_batch, lm_solve
from .spatial import Pose, so3_log, so3_right_jacobian_inv

VALIDATION_PENETRATION = 1e-3


@dataclass(frozen=True)
class GoalSpec:
    link: str
    target: Pose
    position_tol: float = 5e-3
    orientation_tol: float = 0.05
    weight_pos: float = 1.0
    weight_rot: float = 0.5

    def __post_init__(self):
        if self.position_tol <= 0 or self.orientation_tol <= 0:
            raise ValueError("goal tolerances must be positive")


@dataclass(frozen=True)
class IkConfig:
    lm: LmConfig = field(default_factory=LmConfig)
    lbfgs: LbfgsConfig = field(
        default_factory=lambda: LbfgsConfig(max_iters=150, grad_tol=1e-9, first_step=0.3, stall_tol=1e-10)
    )
    collision_margin: float = MARGIN
    weight_self: float = 500.0
    weight_scene: float = 500.0
    weight_joint: float = 100.0
    weight_pose: float = 100.0


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    position_error: np.ndarray
    orientation_error: np.ndarray
    self_collision_free: bool
    scene_collision_free: bool
    converged: bool
    weighted_error: float = 0.0


def _link(model: RobotModel, goal: GoalSpec) -> int:
    try:
        return model.link_index(goal.link)
    except KeyError:
        raise KeyError(f"goal references unknown link {goal.link!r}") from None


def pose_residual(state: KinematicState, goal: GoalSpec, link: int) -> np.ndarray:
    """Weighted [position; axis-angle] error (B, 6) of ``link`` against the goal."""
    p = state.p[:, link]
    R = state.R[:, link]
    e_pos = goal.target.p - p
    e_rot = so3_log(goal.target.R @ np.swapaxes(R, -1, -2))
    return np.concatenate([goal.weight_pos * e_pos, goal.weight_rot * e_rot], axis=1)


def pose_errors(state: KinematicState, goal: GoalSpec, link: int) -> tuple[np.ndarray, np.ndarray]:
    pos = np.linalg.norm(goal.target.p - state.p[:, link], axis=1)
    rot = np.linalg.norm(so3_log(goal.target.R @ np.swapaxes(state.R[:, link], -1, -2)), axis=1)
    return pos, rot


def residual_and_jacobian(model: RobotModel, goals: list[GoalSpec], q: np.ndarray):
    state = forward_kinematics(model, q)
    rs, Js = [], []
    for goal in goals:
        link = _link(model, goal)
        r = pose_residual(state, goal, link)
        J = jacobian(model, state, link)
        e = r[:, 3:] / goal.weight_rot if goal.weight_rot else np.zeros_like(r[:, 3:])
        Jr = np.concatenate(
            [-goal.weight_pos * J[:, :3], -goal.weight_rot * so3_right_jacobian_inv(e) @ J[:, 3:]], axis=1
        )
        rs.append(r)
        Js.append(Jr)
    return np.concatenate(rs, axis=1), np.concatenate(Js, axis=1), state


def random_seeds(model: RobotModel, n: int, seed: int = 0, include_named: bool = True) -> np.ndarray:
    """Uniform samples inside position limits (+-pi where unbounded), named configurations first."""
    rng = np.random.default_rng(seed)
    lim = model.arrays.pos_limits
    lo = np.where(np.isfinite(lim[:, 0]), lim[:, 0], -np.pi)
    hi = np.where(np.isfinite(lim[:, 1]), lim[:, 1], np.pi)
    out = rng.uniform(lo, hi, size=(n, model.dof))
    if include_named and model.named_configurations:
        named = np.array([model.named_configurations[k] for k in sorted(model.named_configurations)])
        k = min(len(named), n)
        out[:k] = named[:k]
    return out


def _check_goals(model, goals):
    if not goals:
        raise ValueError("no goals given")
    for g in goals:
        _link(model, g)


def _validate(model, goals, q, world, state=None) -> list[IkResult]:
    state = state or forward_kinematics(model, q)
    errs = [pose_errors(state, g, _link(model, g)) for g in goals]
    pos = np.stack([e[0] for e in errs], axis=1)
    rot = np.stack([e[1] for e in errs], axis=1)
    ok = np.ones(len(q), dtype=bool)
    for k, g in enumerate(goals):
        ok &= pos[:, k] <= g.position_tol
        if g.weight_rot > 0:
            ok &= rot[:, k] <= g.orientation_tol
    self_free = self_collision(model, state.sphere_centers).max_penetration <= VALIDATION_PENETRATION
    if world is None:
        scene_free = np.ones(len(q), dtype=bool)
    else:
        pen = scene_collision(world, state.sphere_centers, state.sphere_radii).max_penetration
        scene_free = pen <= VALIDATION_PENETRATION
    werr = np.zeros(len(q))
    for g in goals:
        werr += np.sum(pose_residual(state, g, _link(model, g)) ** 2, axis=1)
    return [
        IkResult(q[b].copy(), pos[b], rot[b], bool(self_free[b]), bool(scene_free[b]), bool(ok[b]), float(werr[b]))
        for b in range(len(q))
    ]


def _feasible(r: IkResult) -> bool:
    return r.converged and r.self_collision_free and r.scene_collision_free


def solve_ik(model: RobotModel, goals: list[GoalSpec], seeds, config: IkConfig = IkConfig()) -> list[IkResult]:
    """LM from every seed; results sorted by weighted pose error."""
    _check_goals(model, goals)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.size == 0:
        raise ValueError("need at least one seed")
    lmc = config.lm

    def residual_fn(Q):
        r, J, _ = residual_and_jacobian(model, goals, Q)
        return r, J

    def converged_fn(st):
        state = forward_kinematics(model, st.q)
        ok = np.ones(len(st.q), dtype=bool)
        for g in goals:
            pos, rot = pose_errors(state, g, _link(model, g))
            ok &= pos < lmc.position_tol
            if g.weight_rot > 0:
                ok &= rot < lmc.orientation_tol
        return ok

    state, _, _ = lm_solve(model.clamp(seeds), residual_fn, lmc, converged_fn, project=model.clamp)
    return sorted(_validate(model, goals, state.q, None), key=lambda r: r.weighted_error)


def refinement_objective(model: RobotModel, goals: list[GoalSpec], world: DenseEsdf | None, config: IkConfig):
    """Pose + collision + joint-limit penalty over batched configurations, with its gradient."""
    lim = model.arrays.pos_limits

    def objective(Q):
        r, J, state = residual_and_jacobian(model, goals, Q)
        val = 0.5 * config.weight_pose * np.sum(r**2, axis=1)
        grad = config.weight_pose * np.einsum("bmi,bm->bi", J, r)
        sc = self_collision(model, state.sphere_centers, config.collision_margin)
        val = val + config.weight_self * sc.cost
        g_centers = config.weight_self * sc.gradient
        if world is not None:
            rep = scene_collision(world, state.sphere_centers, state.sphere_radii, margin=config.collision_margin)
            val = val + config.weight_scene * rep.cost
            g_centers = g_centers + config.weight_scene * rep.gradient
        gp, gr = sphere_grads_to_link_grads(model, state, g_centers)
        grad = grad + backprop_gradients(model, state, gp, gr)
        over = np.maximum(Q - lim[:, 1], 0.0)
        under = np.maximum(lim[:, 0] - Q, 0.0)
        val = val + config.weight_joint * np.sum(over**2 + under**2, axis=1)
        grad = grad + 2 * config.weight_joint * (over - under)
        return val, grad

    return objective


def solve_ik_collision_free(
    model: RobotModel,
    goals: list[GoalSpec],
    seeds,
    world: DenseEsdf | None = None,
    config: IkConfig = IkConfig(),
) -> list[IkResult]:
    """Pose-only LM, then L-BFGS under collision and limit penalties from each LM solution.

    A refined configuration replaces its LM solution when it validates as
    feasible, or when the LM solution was infeasible and the penalty dropped.
    Feasible results come first, then by weighted pose error.
    """
    stage1 = solve_ik(model, goals, seeds, config)
    q1 = np.array([r.q for r in stage1])
    objective = refinement_objective(model, goals, world, config)
    f1, _ = objective(q1)
    res = lbfgs_minimize_batch(objective, q1, config.lbfgs)
    q2 = model.clamp(res.q)
    f2, _ = objective(q2)
    before = _validate(model, goals, q1, world)
    after = _validate(model, goals, q2, world)
    out = []
    for b in range(len(q1)):
        if _feasible(after[b]) or (not _feasible(before[b]) and f2[b] < f1[b]):
            out.append(after[b])
        else:
            out.append(before[b])
    return sorted(out, key=lambda r: (not _feasible(r), r.weighted_error))


__all__ = [
    "GoalSpec",
    "IkConfig",
    "IkResult",
    "pose_errors",
    "pose_residual",
    "random_seeds",
    "refinement_objective",
    "residual_and_jacobian",
    "solve_ik",
    "solve_ik_collision_free",
]
