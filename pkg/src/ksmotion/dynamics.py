"""Recursive Newton-Euler inverse dynamics and its adjoint (vector-Jacobian product).

Spatial vectors are ordered [angular; linear].  Transforms are kept in
factored form (R, p) and products are evaluated on the fly; nothing builds a
6x6 matrix.  All routines are batched over a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import local_transforms
from .robot_model import FIXED, PRISMATIC, REVOLUTE, RobotModel
from .spatial import cross

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class RneaCache:
    """Per-link spatial velocity, acceleration and accumulated force, each (B, L, 6)."""

    v: np.ndarray
    a: np.ndarray
    f: np.ndarray


@dataclass(frozen=True)
class RneaGradients:
    q_bar: np.ndarray
    qd_bar: np.ndarray
    qdd_bar: np.ndarray
    fext_bar: np.ndarray


# --- spatial helpers on (B, 6) arrays --------------------------------------


def _xm(R, p, m):
    """Parent->child motion transform: [R^T w; R^T (v + w x p)]."""
    w, v = m[:, :3], m[:, 3:]
    Rt = np.swapaxes(R, -1, -2)
    return np.concatenate(
        [np.einsum("bij,bj->bi", Rt, w), np.einsum("bij,bj->bi", Rt, v + cross(w, p))], axis=1
    )


def _xtf(R, p, f):
    """Child->parent force transform (X^T f): [R n + p x R f; R f]."""
    Rn = np.einsum("bij,bj->bi", R, f[:, :3])
    Rf = np.einsum("bij,bj->bi", R, f[:, 3:])
    return np.concatenate([Rn + cross(p, Rf), Rf], axis=1)


def _crm(v, u):
    w, v0 = v[..., :3], v[..., 3:]
    return np.concatenate([cross(w, u[..., :3]), cross(w, u[..., 3:]) + cross(v0, u[..., :3])], axis=-1)


def _crf(v, f):
    w, v0 = v[..., :3], v[..., 3:]
    return np.concatenate([cross(w, f[..., :3]) + cross(v0, f[..., 3:]), cross(w, f[..., 3:])], axis=-1)


def _inertia_mul(mass, com, Ic, m):
    """Spatial inertia about the link origin applied to a motion vector."""
    w, v = m[..., :3], m[..., 3:]
    lin = v - cross(com, w)
    n = np.einsum("ij,bj->bi", Ic, w) + mass * cross(com, lin)
    return np.concatenate([n, mass * lin], axis=-1)


def _subspace(kind: int, axis: np.ndarray) -> np.ndarray:
    s = np.zeros(6)
    if kind == REVOLUTE:
        s[:3] = axis
    elif kind == PRISMATIC:
        s[3:] = axis
    return s


def _prepare(model: RobotModel, *vectors):
    out = []
    for x in vectors:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None]
        if x.shape[-1] != model.dof:
            raise ValueError(f"expected {model.dof}-vectors, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input to inverse dynamics")
        out.append(x)
    B = max(len(x) for x in out)
    return [np.broadcast_to(x, (B, model.dof)) for x in out]


def _link_rates(model: RobotModel, x: np.ndarray) -> np.ndarray:
    A = model.arrays
    return np.where(A.act >= 0, A.mult * x[:, np.maximum(A.act, 0)], 0.0)


def world_wrench_to_link(R_world: np.ndarray, wrench: np.ndarray) -> np.ndarray:
    """Rotate world-aligned wrenches [n; f] acting at link origins into link coordinates."""
    Rt = np.swapaxes(R_world, -1, -2)
    return np.concatenate(
        [np.einsum("...ij,...j->...i", Rt, wrench[..., :3]), np.einsum("...ij,...j->...i", Rt, wrench[..., 3:])],
        axis=-1,
    )


def rnea(model: RobotModel, q, qd, qdd, f_ext=None, gravity=GRAVITY) -> tuple[np.ndarray, RneaCache]:
    """Joint torques (B, d) for the motion (q, qd, qdd) plus the {v, a, f} cache.

    ``f_ext`` is (B, L, 6) or (L, 6): wrenches on each link at its origin, in
    link coordinates (see ``world_wrench_to_link``).
    """
    q, qd, qdd = _prepare(model, q, qd, qdd)
    A = model.arrays
    B, L = len(q), model.n_links
    gravity = np.asarray(gravity, dtype=float)
    if f_ext is None:
        f_ext = np.zeros((B, L, 6))
    else:
        f_ext = np.broadcast_to(np.asarray(f_ext, dtype=float), (B, L, 6))
        if not np.all(np.isfinite(f_ext)):
            raise ValueError("non-finite external force")
    R, p = local_transforms(model, q)
    qd_l = _link_rates(model, qd)
    qdd_l = _link_rates(model, qdd)
    v = np.zeros((B, L, 6))
    a = np.zeros((B, L, 6))
    f = np.zeros((B, L, 6))
    base_acc = np.concatenate([np.zeros(3), -gravity])
    for level in model.cache.level_order:
        for k in level:
            par = A.parent[k]
            S = _subspace(A.kind[k], A.axis[k])
            if par < 0:
                a[:, k] = base_acc
                continue
            vJ = S * qd_l[:, k, None]
            v[:, k] = _xm(R[:, k], p[:, k], v[:, par]) + vJ
            a[:, k] = _xm(R[:, k], p[:, k], a[:, par]) + S * qdd_l[:, k, None] + _crm(v[:, k], vJ)
    for k in range(L):
        Iv = _inertia_mul(A.mass[k], A.com[k], A.inertia[k], v[:, k])
        f[:, k] = _inertia_mul(A.mass[k], A.com[k], A.inertia[k], a[:, k]) + _crf(v[:, k], Iv) - f_ext[:, k]
    tau = np.zeros((B, model.dof))
    for level in reversed(model.cache.level_order):
        for k in level:
            par = A.parent[k]
            j = A.act[k]
            if j >= 0:
                S = _subspace(A.kind[k], A.axis[k])
                tau[:, j] += A.mult[k] * (f[:, k] @ S)
            if par >= 0:
                f[:, par] += _xtf(R[:, k], p[:, k], f[:, k])
    return tau, RneaCache(v, a, f)


def rnea_vjp(model: RobotModel, q, qd, tau_bar, cache: RneaCache) -> RneaGradients:
    """Gradients of <tau_bar, tau> w.r.t. q, qd, qdd and f_ext in one adjoint sweep."""
    q, qd, tau_bar = _prepare(model, q, qd, tau_bar)
    A = model.arrays
    B, L = len(q), model.n_links
    if cache.v.shape != (B, L, 6) or cache.a.shape != (B, L, 6) or cache.f.shape != (B, L, 6):
        raise ValueError("RNEA cache does not match the inputs (stale cache?)")
    R, p = local_transforms(model, q)
    qd_l = _link_rates(model, qd)
    v, a, f = cache.v, cache.a, cache.f
    q_bar = np.zeros((B, model.dof))
    qd_bar = np.zeros((B, model.dof))
    qdd_bar = np.zeros((B, model.dof))
    f_bar = np.zeros((B, L, 6))

    # adjoint of the force accumulation, base -> tips
    for level in model.cache.level_order:
        for k in level:
            par = A.parent[k]
            j = A.act[k]
            S = _subspace(A.kind[k], A.axis[k])
            if j >= 0:
                f_bar[:, k] = S * (A.mult[k] * tau_bar[:, j])[:, None]
            if par >= 0:
                xf = _xm(R[:, k], p[:, k], f_bar[:, par])
                f_bar[:, k] += xf
                if j >= 0:
                    q_bar[:, j] += A.mult[k] * np.einsum("bi,bi->b", xf, _crf(S, f[:, k]))

    fext_bar = -f_bar

    # adjoint of the velocity/acceleration recursion, tips -> base
    a_bar = np.zeros((B, L, 6))
    v_bar = np.zeros((B, L, 6))
    for level in reversed(model.cache.level_order):
        for k in level:
            par = A.parent[k]
            if par < 0:
                continue
            j = A.act[k]
            S = _subspace(A.kind[k], A.axis[k])
            mass, com, Ic = A.mass[k], A.com[k], A.inertia[k]
            fb = f_bar[:, k]
            a_bar[:, k] += _inertia_mul(mass, com, Ic, fb)
            v_bar[:, k] -= _crf(fb, _inertia_mul(mass, com, Ic, v[:, k]))
            v_bar[:, k] -= _inertia_mul(mass, com, Ic, _crm(v[:, k], fb))
            vJ = S * qd_l[:, k, None]
            v_bar[:, k] += _crf(vJ, a_bar[:, k])
            if j >= 0:
                m = A.mult[k]
                qdd_bar[:, j] += m * (a_bar[:, k] @ S)
                qd_bar[:, j] += m * (v_bar[:, k] @ S) - m * (_crf(v[:, k], a_bar[:, k]) @ S)
                q_bar[:, j] -= m * np.einsum("bi,bi->b", a_bar[:, k], _crm(S, _xm(R[:, k], p[:, k], a[:, par])))
                q_bar[:, j] -= m * np.einsum("bi,bi->b", v_bar[:, k], _crm(S, _xm(R[:, k], p[:, k], v[:, par])))
            a_bar[:, par] += _xtf(R[:, k], p[:, k], a_bar[:, k])
            v_bar[:, par] += _xtf(R[:, k], p[:, k], v_bar[:, k])
    return RneaGradients(q_bar, qd_bar, qdd_bar, fext_bar)


__all__ = ["GRAVITY", "RneaCache", "RneaGradients", "rnea", "rnea_vjp", "world_wrench_to_link"]
