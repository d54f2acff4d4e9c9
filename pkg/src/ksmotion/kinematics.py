"""Batched forward kinematics, topology-cached gradient backprop and sparse Jacobians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robot_model import FIXED, PRISMATIC, REVOLUTE, RobotModel
from .spatial import Pose, axis_angle_matrix, cross


@dataclass(frozen=True)
class KinematicState:
    """World-frame link poses and derived quantities for a batch of configurations.

    Arrays carry a leading batch axis ``B``: ``R`` (B, L, 3, 3), ``p`` (B, L, 3),
    ``sphere_centers`` (B, S, 3), ``com`` (B, 3).
    """

    q: np.ndarray
    R: np.ndarray
    p: np.ndarray
    sphere_centers: np.ndarray
    sphere_radii: np.ndarray
    com: np.ndarray
    total_mass: float
    tool_links: tuple[int, ...]

    def link_pose(self, link: int, b: int = 0) -> Pose:
        return Pose(self.R[b, link], self.p[b, link])

    @property
    def tool_poses(self) -> list[list[Pose]]:
        return [[self.link_pose(t, b) for t in self.tool_links] for b in range(len(self.q))]


def joint_values(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Per-link joint coordinate (B, L), resolving mimic coupling; zero for fixed/root."""
    A = model.arrays
    qa = q[:, np.maximum(A.act, 0)]
    return np.where(A.act >= 0, A.mult * qa + A.offset, 0.0)


def local_transforms(model: RobotModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Parent-to-child transforms (B, L, 3, 3), (B, L, 3) in parent coordinates."""
    A = model.arrays
    B = len(q)
    L = model.n_links
    qj = joint_values(model, q)
    R = np.broadcast_to(A.origin_R, (B, L, 3, 3)).copy()
    p = np.broadcast_to(A.origin_p, (B, L, 3)).copy()
    for i in range(L):
        if A.kind[i] == REVOLUTE:
            R[:, i] = A.origin_R[i] @ axis_angle_matrix(A.axis[i], qj[:, i])
        elif A.kind[i] == PRISMATIC:
            p[:, i] = A.origin_p[i] + (qj[:, i, None] * A.axis[i]) @ A.origin_R[i].T
    return R, p


def _as_batch(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q[None]
    if q.ndim != 2 or q.shape[1] != model.dof:
        raise ValueError(f"expected configurations of size {model.dof}, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite joint configuration")
    return q


def forward_kinematics(model: RobotModel, q, base: Pose | None = None) -> KinematicState:
    q = _as_batch(model, q)
    A = model.arrays
    B, L = len(q), model.n_links
    R_loc, p_loc = local_transforms(model, q)
    R = np.empty((B, L, 3, 3))
    p = np.empty((B, L, 3))
    base = base or Pose.identity()
    for level in model.cache.level_order:
        for i in level:
            par = A.parent[i]
            if par < 0:
                R[:, i] = base.R
                p[:, i] = base.p
            else:
                R[:, i] = R[:, par] @ R_loc[:, i]
                p[:, i] = p[:, par] + np.einsum("bij,bj->bi", R[:, par], p_loc[:, i])
    sl = A.sphere_link
    centers = p[:, sl] + np.einsum("bsij,sj->bsi", R[:, sl], A.sphere_center)
    total = float(A.mass.sum())
    if total > 0:
        com_w = p + np.einsum("blij,lj->bli", R, A.com)
        com = np.einsum("l,bli->bi", A.mass, com_w) / total
    else:
        com = np.zeros((B, 3))
    tools = tuple(model.link_index(t) for t in model.tool_links)
    return KinematicState(q, R, p, centers, A.sphere_radius, com, total, tools)


def joint_axes_world(model: RobotModel, state: KinematicState) -> np.ndarray:
    """World-frame joint axes (B, L, 3); the axis is invariant under its own joint motion."""
    return np.einsum("blij,lj->bli", state.R, model.arrays.axis)


def _column(kind, omega, origin, point):
    if kind == REVOLUTE:
        return np.concatenate([cross(omega, point - origin), omega], axis=-1)
    return np.concatenate([omega, np.zeros_like(omega)], axis=-1)


def jacobian(
    model: RobotModel, state: KinematicState, target, point: np.ndarray | None = None
) -> np.ndarray:
    """Geometric Jacobian (B, 6, d) of ``target``; rows are [linear; angular].

    ``point`` (B, 3) overrides the reference point (defaults to the link origin).
    """
    e = model.link_index(target) if isinstance(target, str) else int(target)
    if not 0 <= e < model.n_links:
        raise KeyError(f"unknown target link {target!r}")
    A = model.arrays
    cache = model.cache
    B = len(state.q)
    J = np.zeros((B, 6, model.dof))
    pt = state.p[:, e] if point is None else point
    chain = set(cache.link_chain[e])
    omega = joint_axes_world(model, state)
    for j in range(model.dof):
        if not cache.affects[j, e]:
            continue
        col = np.zeros((B, 6))
        for l in cache.connected_links[j]:
            if l in chain:
                col += A.mult[l] * _column(A.kind[l], omega[:, l], state.p[:, l], pt)
        J[:, :, j] = col
    return J


def backprop_gradients(
    model: RobotModel, state: KinematicState, grad_pos: np.ndarray, grad_rot: np.ndarray | None = None
) -> np.ndarray:
    """Map per-link world gradients (position, axis-angle tangent) to joint gradients (B, d)."""
    A = model.arrays
    B, L = state.p.shape[:2]
    grad_pos = np.asarray(grad_pos, dtype=float).reshape(B, -1, 3)
    if grad_pos.shape[1] != L:
        raise ValueError(f"expected {L} link gradients, got {grad_pos.shape[1]}")
    if grad_rot is None:
        grad_rot = np.zeros_like(grad_pos)
    else:
        grad_rot = np.asarray(grad_rot, dtype=float).reshape(B, -1, 3)
        if grad_rot.shape[1] != L:
            raise ValueError(f"expected {L} orientation gradients, got {grad_rot.shape[1]}")
    out = np.zeros((B, model.dof))
    omega = joint_axes_world(model, state)
    active = np.any(grad_pos != 0, axis=(0, 2)) | np.any(grad_rot != 0, axis=(0, 2))
    for l in np.flatnonzero(active):
        gp, gr = grad_pos[:, l], grad_rot[:, l]
        for a in reversed(model.cache.link_chain[l]):
            j = model.cache.joint_map[a]
            if j < 0:
                continue
            w = omega[:, a]
            if A.kind[a] == REVOLUTE:
                g = np.einsum("bi,bi->b", gp, cross(w, state.p[:, l] - state.p[:, a]))
                g += np.einsum("bi,bi->b", gr, w)
            else:
                g = np.einsum("bi,bi->b", gp, w)
            out[:, j] += A.mult[a] * g
    return out


def sphere_grads_to_link_grads(
    model: RobotModel, state: KinematicState, grad_centers: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Turn gradients on world sphere centers (B, S, 3) into per-link (position, rotation) grads."""
    B, L = state.p.shape[:2]
    sl = model.arrays.sphere_link
    gp = np.zeros((B, L, 3))
    gr = np.zeros((B, L, 3))
    if len(sl) == 0:
        return gp, gr
    lever = state.sphere_centers - state.p[:, sl]
    np.add.at(gp, (slice(None), sl), grad_centers)
    np.add.at(gr, (slice(None), sl), cross(lever, grad_centers))
    return gp, gr


__all__ = [
    "FIXED",
    "KinematicState",
    "backprop_gradients",
    "forward_kinematics",
    "jacobian",
    "joint_values",
    "local_transforms",
    "sphere_grads_to_link_grads",
]
