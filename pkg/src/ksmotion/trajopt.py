"""B-spline trajectory optimization: costs, penalties, batched seeds and validation.

Decision variables are the optimized control points of a ghost-anchored,
rest-clamped spline.  Every term is evaluated on the uniform sample grid and
its gradient is pulled back through kinematics, inverse dynamics and the
spline basis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bspline
from .bspline import SplineTrajectory, StateSample
from .collision import MARGIN, scene_collision, self_collision
from .dynamics import rnea, rnea_vjp
from .esdf import DenseEsdf
from .ik import GoalSpec, IkConfig, pose_errors, random_seeds, residual_and_jacobian, solve_ik_collision_free
from .kinematics import backprop_gradients, forward_kinematics, sphere_grads_to_link_grads
from .robot_model import RobotModel, halton, set_payload
from .solvers import LbfgsConfig, lbfgs_minimize_batch

VALIDATION_PENETRATION = 1e-3
LIMIT_TOL = 1e-6
REST_TOL = 1e-9
ORDERS = ("position", "velocity", "acceleration", "jerk")


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class CostWeights:
    gamma_smooth: float = 1e-4
    gamma_length: float = 1e-3
    gamma_energy: float = 1e-3
    joint_limit: float = 100.0
    scene: float = 500.0
    self_collision: float = 500.0
    goal: float = 500.0
    torque: float = 100.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v >= 0:
                raise ValueError(f"weight {k} must be non-negative, got {v}")


@dataclass(frozen=True)
class Payload:
    link: str
    mass: float
    com: tuple = (0.0, 0.0, 0.0)
    inertia: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def attach(self, model: RobotModel) -> RobotModel:
        return set_payload(model, self.link, self.mass, self.com, np.asarray(self.inertia, dtype=float))


@dataclass(frozen=True)
class PlanProblem:
    start: tuple
    goals: list[GoalSpec]
    world: DenseEsdf | None = None
    weights: CostWeights = field(default_factory=CostWeights)
    segments: int = 8
    dt_u: float = 0.2
    payload: Payload | None = None
    seed_count: int = 4
    enable_dynamics: bool = True
    n_interp: int = 4
    limit_scale: float = 0.95
    lbfgs: LbfgsConfig = field(
        default_factory=lambda: LbfgsConfig(
            max_iters=100, grad_tol=1e-7, first_step=0.05, stall_tol=1e-12,
            parallel_steps=(1.0, 0.5, 0.25, 0.1, 0.03, 0.01),
        )
    )
    ik: IkConfig = field(default_factory=IkConfig)
    ik_seeds: int = 16
    rng_seed: int = 0

    def __post_init__(self):
        if self.segments < 4:
            raise ValueError("need at least 4 optimized control points")
        if not self.dt_u > 0:
            raise ValueError("dt_u must be positive")
        if self.seed_count < 1:
            raise ValueError("seed_count must be positive")
        if not 0 < self.limit_scale <= 1:
            raise ValueError("limit_scale must lie in (0, 1]")

    def start_state(self, dof: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        th, thd, thdd = (np.broadcast_to(np.asarray(x, dtype=float), (dof,)).copy() for x in self.start)
        return th, thd, thdd


@dataclass(frozen=True)
class Violation:
    constraint: str
    worst: float
    threshold: float
    t: float
    index: int

    @property
    def violated(self) -> bool:
        return self.worst > self.threshold


@dataclass(frozen=True)
class ViolationReport:
    checks: dict

    @property
    def violations(self) -> list[Violation]:
        return [v for v in self.checks.values() if v.violated]

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def kinematic_ok(self) -> bool:
        return not any(v.violated for k, v in self.checks.items() if k != "torque")

    @property
    def dynamics_ok(self) -> bool:
        v = self.checks.get("torque")
        return v is None or not v.violated

    @property
    def total_excess(self) -> float:
        return float(sum(max(v.worst - v.threshold, 0.0) for v in self.checks.values()))


@dataclass(frozen=True)
class PlanResult:
    spline: SplineTrajectory
    samples: list[StateSample]
    torques: np.ndarray | None
    cost_breakdown: dict
    feasible: bool
    violation_report: ViolationReport
    cost: float = 0.0
    goal_q: np.ndarray | None = None


# --- linear sample map ------------------------------------------------------


class SampleMap:
    """Linear map from control points to sampled states, batched over seeds."""

    def __init__(self, spline: SplineTrajectory):
        seg, alpha = bspline.sample_grid(spline)
        W = bspline.basis(alpha, spline.dt_u)  # (N, 4, 4)
        n_ext = spline.n_segments + 3
        M = np.zeros((len(seg), 4, n_ext))
        for c in range(4):
            M[np.arange(len(seg)), :, seg + c] += W[:, :, c]
        idx = spline.extended_index()
        P = np.zeros((spline.n_control, n_ext))
        live = np.flatnonzero(idx >= 0)
        P[idx[live], live] = 1.0
        fixed = spline.extended_points().copy()
        fixed[:, live] = 0.0
        self.t = (seg + alpha) * spline.dt_u
        self.to_samples = np.einsum("nre,ke->nrk", M, P)  # (N, 4, K)
        self.offset = np.einsum("nre,de->nrd", M, fixed)  # (N, 4, d)

    def states(self, U: np.ndarray) -> np.ndarray:
        """(B, d, K) control points -> (B, N, 4, d) states."""
        return np.einsum("nrk,bdk->bnrd", self.to_samples, U) + self.offset

    def pullback(self, G: np.ndarray) -> np.ndarray:
        """(B, N, 4, d) sample gradients -> (B, d, K)."""
        return np.einsum("nrk,bnrd->bdk", self.to_samples, G)


# --- costs -----------------------------------------------------------------


def _hinge_sq(x, lo, hi):
    over = np.maximum(x - hi, 0.0)
    under = np.maximum(lo - x, 0.0)
    return over**2 + under**2, 2.0 * (over - under)


def _scaled(lim: np.ndarray, scale: float) -> np.ndarray:
    # shrink the interval about its midpoint; infinite bounds stay infinite
    finite = np.all(np.isfinite(lim), axis=-1, keepdims=True)
    mid = np.where(finite, np.where(finite, lim, 0.0).mean(axis=-1, keepdims=True), 0.0)
    return np.where(finite, mid + scale * (lim - mid), lim)


def _limit_table(model: RobotModel) -> list[np.ndarray]:
    A = model.arrays
    return [A.pos_limits, A.vel_limits, A.acc_limits, A.jerk_limits]


def _has_inertia(model: RobotModel) -> bool:
    return bool(np.any(model.arrays.mass > 0))


class _Context:
    def __init__(self, model: RobotModel, problem: PlanProblem, spline: SplineTrajectory):
        self.model = model
        self.problem = problem
        self.dyn_model = problem.payload.attach(model) if problem.payload is not None else model
        if problem.enable_dynamics and not _has_inertia(self.dyn_model):
            raise ValueError("dynamics requested but the model carries no inertial data")
        self.map = SampleMap(spline)
        self.dt = spline.dt_u / spline.n_interp
        self.limits = [_scaled(l, problem.limit_scale) for l in _limit_table(model)]
        self.torque_limits = _scaled(model.arrays.torque_limits, problem.limit_scale)


def _cost_batch(ctx: _Context, U: np.ndarray):
    """Total cost (B,), gradient (B, d, K) and per-term values (B,) for a batch of control points."""
    model, prob, w = ctx.model, ctx.problem, ctx.problem.weights
    X = ctx.map.states(U)  # (B, N, 4, d)
    B, N, _, d = X.shape
    G = np.zeros_like(X)
    terms = {}

    th, thd, thdd = X[:, :, 0], X[:, :, 1], X[:, :, 2]
    terms["smooth"] = w.gamma_smooth * np.sum(thdd**2, axis=(1, 2))
    G[:, :, 2] += 2 * w.gamma_smooth * thdd
    terms["length"] = w.gamma_length * np.sum(thd**2, axis=(1, 2))
    G[:, :, 1] += 2 * w.gamma_length * thd

    jl = np.zeros(B)
    for order, lim in enumerate(ctx.limits):
        v, dv = _hinge_sq(X[:, :, order], lim[:, 0], lim[:, 1])
        jl += np.sum(v, axis=(1, 2))
        G[:, :, order] += w.joint_limit * dv
    terms["joint_limit"] = w.joint_limit * jl

    flat = [a.reshape(B * N, d) for a in (th, thd, thdd)]
    terms["energy"] = np.zeros(B)
    terms["torque"] = np.zeros(B)
    if prob.enable_dynamics:
        tau, cache = rnea(ctx.dyn_model, *flat)
        tau = tau.reshape(B, N, d)
        power = thd * tau * ctx.dt
        terms["energy"] = w.gamma_energy * np.sum(power**2, axis=(1, 2))
        coef = 2 * w.gamma_energy * power * ctx.dt
        G[:, :, 1] += coef * tau
        tau_bar = coef * thd
        tv, tdv = _hinge_sq(tau, ctx.torque_limits[:, 0], ctx.torque_limits[:, 1])
        terms["torque"] = w.torque * np.sum(tv, axis=(1, 2))
        tau_bar = tau_bar + w.torque * tdv
        grads = rnea_vjp(ctx.dyn_model, flat[0], flat[1], tau_bar.reshape(B * N, d), cache)
        G[:, :, 0] += grads.q_bar.reshape(B, N, d)
        G[:, :, 1] += grads.qd_bar.reshape(B, N, d)
        G[:, :, 2] += grads.qdd_bar.reshape(B, N, d)

    state = forward_kinematics(model, flat[0])
    centers = state.sphere_centers.reshape(B, N, -1, 3)
    c_bar = np.zeros_like(centers)
    if model.n_spheres:
        sc = self_collision(model, state.sphere_centers, MARGIN)
        terms["self"] = w.self_collision * sc.cost.reshape(B, N).sum(axis=1)
        c_bar += w.self_collision * sc.gradient.reshape(c_bar.shape)
    else:
        terms["self"] = np.zeros(B)
    terms["scene"] = np.zeros(B)
    if prob.world is not None and model.n_spheres:
        # sphere lanes are independent, so every seed sweeps in one call: (N, B*S, 3)
        S_ = centers.shape[2]
        lanes = centers.transpose(1, 0, 2, 3).reshape(N, B * S_, 3)
        radii = np.tile(model.arrays.sphere_radius, B)
        vel = np.zeros_like(lanes)
        vel[:-1] = (lanes[1:] - lanes[:-1]) / ctx.dt
        rep = scene_collision(prob.world, lanes, radii, vel, ctx.dt, MARGIN)
        terms["scene"] = w.scene * rep.sphere_cost.reshape(N, B, S_).sum(axis=(0, 2))
        cb = w.scene * rep.gradient
        vg = w.scene * rep.velocity_gradient[:-1] / ctx.dt
        cb[1:] += vg
        cb[:-1] -= vg
        c_bar += cb.reshape(N, B, S_, 3).transpose(1, 0, 2, 3)
    if np.any(c_bar):
        gp, gr = sphere_grads_to_link_grads(model, state, c_bar.reshape(B * N, -1, 3))
        G[:, :, 0] += backprop_gradients(model, state, gp, gr).reshape(B, N, d)

    terms["goal"] = np.zeros(B)
    if prob.goals:
        r, J, _ = residual_and_jacobian(model, prob.goals, th[:, -1])
        terms["goal"] = w.goal * np.sum(r**2, axis=1)
        G[:, -1, 0] += 2 * w.goal * np.einsum("bmi,bm->bi", J, r)

    total = sum(terms.values())
    return total, ctx.map.pullback(G), terms


def anchored_spline(model: RobotModel, problem: PlanProblem, U: np.ndarray) -> SplineTrajectory:
    th0, thd0, thdd0 = problem.start_state(model.dof)
    ghosts = bspline.ghost_points(th0, thd0, thdd0, problem.dt_u)
    return SplineTrajectory(U, problem.dt_u, ghosts, True, problem.n_interp)


def total_cost(model: RobotModel, problem: PlanProblem, spline: SplineTrajectory):
    """(cost, gradient w.r.t. control points (d, K), per-term breakdown)."""
    ctx = _Context(model, problem, spline)
    val, grad, terms = _cost_batch(ctx, spline.control_points[None])
    return float(val[0]), grad[0], {k: float(v[0]) for k, v in terms.items()}


# --- validation ------------------------------------------------------------


def _worst(name, excess, t, threshold):
    """Largest entry of ``excess`` (N, ...) with its sample index and time."""
    if excess.size == 0:
        return Violation(name, 0.0, threshold, float(t[0]) if len(t) else 0.0, 0)
    per = excess.reshape(len(excess), -1).max(axis=1)
    i = int(np.argmax(per))
    return Violation(name, float(per[i]), threshold, float(t[i]), i)


def validate_trajectory(
    model: RobotModel,
    world: DenseEsdf | None,
    samples: list[StateSample],
    payload: Payload | None = None,
    goals: list[GoalSpec] | None = None,
    check_torque: bool = True,
) -> ViolationReport:
    """Worst violation per constraint over time-ordered samples.

    Limits use the model's nominal bounds.  Torques are recomputed with the
    payload attached.  Goal residuals are read at the last sample.
    """
    t = np.array([s.t for s in samples])
    X = np.stack([np.stack([s.theta, s.theta_dot, s.theta_ddot, s.theta_dddot]) for s in samples])
    checks = {}
    for order, (name, lim) in enumerate(zip(ORDERS, _limit_table(model))):
        x = X[:, order]
        excess = np.maximum(x - lim[:, 1], lim[:, 0] - x)
        checks[name] = _worst(name, np.maximum(excess, 0.0), t, LIMIT_TOL)
    state = forward_kinematics(model, X[:, 0])
    if model.n_spheres:
        sc = self_collision(model, state.sphere_centers)
        checks["self_collision"] = _worst("self_collision", np.maximum(sc.max_penetration, 0.0), t,
                                          VALIDATION_PENETRATION)
        if world is not None:
            rep = scene_collision(world, state.sphere_centers, state.sphere_radii)
            checks["scene_collision"] = _worst("scene_collision", np.maximum(rep.max_penetration, 0.0), t,
                                               VALIDATION_PENETRATION)
    rest = np.concatenate([np.abs(X[-1, 1]), np.abs(X[-1, 2])])
    checks["terminal_rest"] = Violation("terminal_rest", float(rest.max()), REST_TOL, float(t[-1]), len(t) - 1)
    if goals:
        excess = []
        for g in goals:
            link = model.link_index(g.link)
            pos, rot = pose_errors(state, g, link)
            excess.append(pos[-1] / g.position_tol)
            if g.weight_rot > 0:
                excess.append(rot[-1] / g.orientation_tol)
        checks["goal"] = Violation("goal", float(max(excess)), 1.0, float(t[-1]), len(t) - 1)
    tl = model.arrays.torque_limits
    if check_torque and np.any(np.isfinite(tl)):
        dyn = payload.attach(model) if payload is not None else model
        tau, _ = rnea(dyn, X[:, 0], X[:, 1], X[:, 2])
        excess = np.maximum(np.maximum(tau - tl[:, 1], tl[:, 0] - tau), 0.0)
        checks["torque"] = _worst("torque", excess, t, LIMIT_TOL)
    return ViolationReport(checks)


def validation_samples(spline: SplineTrajectory, density: int = 4) -> list[StateSample]:
    dense = SplineTrajectory(spline.control_points, spline.dt_u, spline.ghost_points, spline.terminal_clamped,
                             spline.n_interp * density)
    return bspline.sample_uniform(dense)


def sample_torques(model: RobotModel, samples: list[StateSample], payload: Payload | None = None) -> np.ndarray:
    dyn = payload.attach(model) if payload is not None else model
    q = np.stack([s.theta for s in samples])
    qd = np.stack([s.theta_dot for s in samples])
    qdd = np.stack([s.theta_ddot for s in samples])
    return rnea(dyn, q, qd, qdd)[0]


# --- planning --------------------------------------------------------------


def goal_configurations(model: RobotModel, problem: PlanProblem) -> np.ndarray:
    """Feasible IK solutions, nearest to the start configuration first."""
    th0 = problem.start_state(model.dof)[0]
    seeds = np.vstack([th0[None], random_seeds(model, problem.ik_seeds - 1, problem.rng_seed)])
    results = solve_ik_collision_free(model, problem.goals, seeds, problem.world, problem.ik)
    good = [r.q for r in results if r.converged and r.self_collision_free and r.scene_collision_free]
    if not good:
        raise PlanningError("IK found no collision-free goal configuration")
    good = np.array(good)
    return good[np.argsort(np.linalg.norm(good - th0, axis=1), kind="stable")]


def joint_range(model: RobotModel) -> np.ndarray:
    lim = model.arrays.pos_limits
    return np.where(np.all(np.isfinite(lim), axis=1), lim[:, 1] - lim[:, 0], 2 * np.pi)


def seed_control_points(model: RobotModel, problem: PlanProblem, goal_qs: np.ndarray) -> np.ndarray:
    """Straight lines from the start to the goal configurations with low-discrepancy offsets.

    Seed 0 is the unperturbed line to the nearest goal.  Offsets cover 5% of
    each joint's range and leave the final control point on the goal.
    """
    th0 = problem.start_state(model.dof)[0]
    K, S = problem.segments, problem.seed_count
    frac = np.arange(1, K + 1) / K
    offsets = halton(S, model.dof * (K - 1), problem.rng_seed).reshape(S, model.dof, K - 1) - 0.5
    offsets *= 0.05 * joint_range(model)[None, :, None]
    out = np.zeros((S, model.dof, K))
    for s in range(S):
        goal = goal_qs[s % len(goal_qs)]
        out[s] = th0[:, None] + (goal - th0)[:, None] * frac[None]
        if s > 0:
            out[s, :, :-1] += offsets[s]
    return out


def optimize(model: RobotModel, problem: PlanProblem, U0: np.ndarray):
    """Batched L-BFGS over seeds (S, d, K); returns (control points, costs, result)."""
    template = anchored_spline(model, problem, U0[0])
    ctx = _Context(model, problem, template)
    S, d, K = U0.shape

    def objective(Z):
        val, grad, _ = _cost_batch(ctx, Z.reshape(-1, d, K))
        return val, grad.reshape(len(Z), -1)

    res = lbfgs_minimize_batch(objective, U0.reshape(S, -1), problem.lbfgs)
    return res.q.reshape(S, d, K), res.value, res


def plan(model: RobotModel, problem: PlanProblem) -> PlanResult:
    th0 = problem.start_state(model.dof)[0]
    lim = model.arrays.pos_limits
    if np.any(th0 < lim[:, 0]) or np.any(th0 > lim[:, 1]):
        raise ValueError("start configuration outside position limits")
    goal_qs = goal_configurations(model, problem)
    U0 = seed_control_points(model, problem, goal_qs)
    U, costs, _ = optimize(model, problem, U0)
    candidates = []
    for s in range(len(U)):
        spline = anchored_spline(model, problem, U[s])
        report = validate_trajectory(model, problem.world, validation_samples(spline), problem.payload,
                                     problem.goals, check_torque=True)
        candidates.append((spline, report, float(costs[s]), goal_qs[s % len(goal_qs)]))

    def rank(c):
        spline, report, cost, _ = c
        feasible = report.kinematic_ok and (report.dynamics_ok or not problem.enable_dynamics)
        return (not feasible, report.total_excess if not feasible else 0.0, cost)

    spline, report, cost, goal = min(candidates, key=rank)
    _, _, breakdown = total_cost(model, problem, spline)
    samples = bspline.sample_uniform(spline)
    torques = sample_torques(model, samples, problem.payload) if problem.enable_dynamics else None
    feasible = report.kinematic_ok and (report.dynamics_ok or not problem.enable_dynamics)
    return PlanResult(spline, samples, torques, breakdown, feasible, report, cost, goal)


def energy(samples: list[StateSample], torques: np.ndarray, dt: float) -> float:
    qd = np.stack([s.theta_dot for s in samples])
    return float(np.sum((qd * torques * dt) ** 2))


def write_trajectory_csv(path, samples: list[StateSample], torques: np.ndarray | None = None) -> None:
    d = len(samples[0].theta)
    header = ["t"] + [f"q{i}" for i in range(d)] + [f"qd{i}" for i in range(d)] + [f"qdd{i}" for i in range(d)]
    if torques is not None:
        header += [f"tau{i}" for i in range(d)]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, s in enumerate(samples):
            row = [s.t, *s.theta, *s.theta_dot, *s.theta_ddot]
            if torques is not None:
                row += list(torques[k])
            w.writerow([repr(float(x)) for x in row])


def read_trajectory_csv(path) -> tuple[list[str], np.ndarray]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


__all__ = [
    "CostWeights",
    "Payload",
    "PlanProblem",
    "PlanResult",
    "PlanningError",
    "SampleMap",
    "Violation",
    "ViolationReport",
    "anchored_spline",
    "energy",
    "goal_configurations",
    "optimize",
    "plan",
    "read_trajectory_csv",
    "sample_torques",
    "seed_control_points",
    "total_cost",
    "validate_trajectory",
    "validation_samples",
    "write_trajectory_csv",
]
