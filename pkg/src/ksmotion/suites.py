"""Desk-scale benchmark suites: payload planning, obstacle planning, blocked-branch IK,
a sphere fixture for seeding comparisons and a depth-rendered cuboid room."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fixtures import load, planar_arm_doc
from .ik import GoalSpec
from .kinematics import forward_kinematics
from .robot_model import RobotModel
from .scene import cuboid
from .spatial import Pose
from .tsdf import Cuboid, DepthFrame, Sphere, render_depth
from .trajopt import Payload

PAYLOAD = Payload("tool", 3.0)
OBSTACLE_BOX = ([-1.0, -1.0, -0.06], [1.0, 1.0, 0.06])


@dataclass
class SuiteProblem:
    start: np.ndarray
    goal: GoalSpec
    goal_q: np.ndarray
    obstacles: list


def payload_arm() -> RobotModel:
    """Two links swinging in a vertical plane; torque limits too tight for a loaded straight-line swing."""
    return load(planar_arm_doc([0.4, 0.3], masses=[1.0, 1.0], radius=0.03, axis=(0, 1, 0),
                               position_limit=[np.pi, 2.8], torque=[18.0, 15.0]))


def payload_suite(model: RobotModel, n: int = 20, seed: int = 7) -> list[SuiteProblem]:
    """Swings from one side over the top to the other with a full tool-pose goal."""
    rng = np.random.default_rng(seed)
    tool = model.link_index("tool")
    out = []
    for _ in range(n):
        qs = np.array([rng.uniform(1.2, 1.9), rng.uniform(-0.3, 0.3)])
        qg = np.array([rng.uniform(-1.9, -1.2), rng.uniform(-0.3, 0.3)])
        st = forward_kinematics(model, qg[None])
        out.append(SuiteProblem(qs, GoalSpec("tool", Pose(st.R[0, tool], st.p[0, tool])), qg, []))
    return out


def obstacle_arm() -> RobotModel:
    return load(planar_arm_doc([0.4, 0.3, 0.2], radius=0.03, position_limit=[np.pi, 2.8, 2.8],
                               velocity=3.0, acceleration=20.0))


def obstacle_suite(model: RobotModel, n: int = 20, seed: int = 11, clearance: float = 0.08) -> list[SuiteProblem]:
    """Horizontal reaches with a post that cuts 1-4 cm into the straight-line tool sweep.

    The post sits at the tool position of the mid-configuration, pushed outward so
    it clips the sweep but leaves room for a local detour; start and goal keep
    ``clearance`` from it.
    """
    rng = np.random.default_rng(seed)
    tool = model.link_index("tool")
    half, radius = 0.05, 0.03
    out = []
    while len(out) < n:
        qs = rng.uniform([-1.5, -1.2, -1.2], [1.5, 1.2, 1.2])
        qg = qs + rng.uniform([-1.6, -0.8, -0.8], [1.6, 0.8, 0.8])
        if abs(qg[0] - qs[0]) < 0.8:
            continue
        mid = forward_kinematics(model, (0.5 * (qs + qg))[None]).p[0, tool]
        depth = rng.uniform(0.01, 0.04)
        out_dir = np.array([mid[0], mid[1], 0.0])
        out_dir /= np.linalg.norm(out_dir)
        post = cuboid(mid + out_dir * (radius + half - depth), [half, half, 0.1])
        ends = forward_kinematics(model, np.stack([qs, qg])).sphere_centers
        if np.min(post.sdf(ends.reshape(-1, 3))) - radius < clearance:
            continue
        goal_p = forward_kinematics(model, qg[None]).p[0, tool]
        out.append(SuiteProblem(qs, GoalSpec("tool", Pose(np.eye(3), goal_p), weight_rot=0.0), qg, [post]))
    return out


def blocked_branch():
    """Three-link arm whose elbow-down branch toward the goal is blocked by a block.

    The block hugs the base below the base-to-goal line, so the first link collides
    at every downward angle; every collision-free solution has its elbow above the line.

    Returns (model, shapes, esdf box (lo, hi), position-only goal).
    """
    model = load(planar_arm_doc([0.5, 0.4, 0.2], position_limit=None, radius=0.03))
    shapes = [cuboid([0.14, -0.15, 0.0], [0.12, 0.12, 0.1])]
    goal = GoalSpec("tool", Pose(np.eye(3), np.array([0.6, 0.0, 0.0])), position_tol=5e-3,
                    orientation_tol=0.05, weight_rot=0.0)
    return model, shapes, ([-0.4, -0.7, -0.06], [1.0, 0.7, 0.06]), goal


def sphere_fixture() -> Sphere:
    """Off-grid sphere used to compare the two seeding modes."""
    return Sphere(np.array([0.013, -0.007, 0.004]), 0.2)


def union_sdf(shapes):
    def sdf(points):
        return np.min([s.sdf(points) for s in shapes], axis=0)
    return sdf


# --- cuboid room -------------------------------------------------------------

ROOM_HALF = 0.5
ROOM_HEIGHT = 0.6
ROOM_BOX = ([-0.54, -0.54, -0.04], [0.54, 0.54, 0.6])  # the interior plus a margin; outer slab faces are never observed


def room_shapes(furnished: bool = False) -> list[Cuboid]:
    """Floor and four walls as 10 cm slabs; ``furnished`` adds two free-standing boxes."""
    h, t, z = ROOM_HALF, 0.05, ROOM_HEIGHT
    yaw = 0.5
    R = np.array([[np.cos(yaw), -np.sin(yaw), 0.0], [np.sin(yaw), np.cos(yaw), 0.0], [0.0, 0.0, 1.0]])
    shapes = [
        cuboid([0, 0, -t], [h + 2 * t, h + 2 * t, t]),
        cuboid([h + t, 0, z / 2], [t, h + 2 * t, z / 2]),
        cuboid([-h - t, 0, z / 2], [t, h + 2 * t, z / 2]),
        cuboid([0, h + t, z / 2], [h + 2 * t, t, z / 2]),
        cuboid([0, -h - t, z / 2], [h + 2 * t, t, z / 2]),
    ]
    if furnished:
        shapes += [
            cuboid([0.15, -0.12, 0.1], [0.1, 0.075, 0.1]),
            cuboid([-0.2, 0.18, 0.075], [0.06, 0.1, 0.075], R),
        ]
    return shapes


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose with +z along the view direction and +y pointing down in the image."""
    f = np.asarray(target, float) - np.asarray(eye, float)
    f /= np.linalg.norm(f)
    x = np.cross(f, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(f, (1.0, 0.0, 0.0))
    x /= np.linalg.norm(x)
    return Pose(np.stack([x, np.cross(f, x), f], axis=1), np.asarray(eye, float))


def room_frames(shapes=None, width: int = 160, height: int = 120, focal: float = 100.0,
                n_ring: int = 8) -> list[DepthFrame]:
    """Rendered views from three rings: level and downward views of the walls, and inward views of the floor."""
    shapes = room_shapes() if shapes is None else shapes
    sdf = union_sdf(shapes)
    poses = []
    for k in range(n_ring):
        a = 2 * np.pi * k / n_ring
        d = np.array([np.cos(a), np.sin(a), 0.0])
        poses.append(look_at(0.1 * d + [0, 0, 0.3], 0.5 * d + [0, 0, 0.45]))
        poses.append(look_at(0.15 * d + [0, 0, 0.45], 0.5 * d + [0, 0, 0.1]))
        poses.append(look_at(0.4 * d + [0, 0, 0.35], [0.0, 0.0, 0.05]))
    frames = []
    for pose in poses:
        f = DepthFrame(width, height, focal, focal, (width - 1) / 2, (height - 1) / 2, pose)
        f.depth = render_depth(f, sdf, max_range=3.0, tol=1e-7)
        frames.append(f)
    return frames


def near_surface_probes(rng: np.random.Generator, shapes, n: int, band=(0.0, 0.1)) -> np.ndarray:
    """Uniform points inside the room whose analytic distance lies in ``band``."""
    sdf = union_sdf(shapes)
    lo = np.array([-ROOM_HALF, -ROOM_HALF, 0.0])
    hi = np.array([ROOM_HALF, ROOM_HALF, ROOM_HEIGHT])
    out = []
    count = 0
    while count < n:
        p = rng.uniform(lo, hi, size=(4 * n, 3))
        d = sdf(p)
        keep = p[(d >= band[0]) & (d <= band[1])]
        out.append(keep)
        count += len(keep)
    return np.concatenate(out)[:n]


__all__ = [
    "OBSTACLE_BOX",
    "PAYLOAD",
    "ROOM_BOX",
    "SuiteProblem",
    "blocked_branch",
    "look_at",
    "near_surface_probes",
    "obstacle_arm",
    "obstacle_suite",
    "payload_arm",
    "payload_suite",
    "room_frames",
    "room_shapes",
    "sphere_fixture",
    "union_sdf",
]
