"""Collision costs on robot spheres: self-collision max-reduction and swept scene checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .esdf import DenseEsdf, query
from .robot_model import RobotModel

MARGIN = 0.025
CHUNK = 1024


def hinge(s: np.ndarray, eps: float = MARGIN) -> tuple[np.ndarray, np.ndarray]:
    """Smooth hinge on signed clearance ``s`` and its derivative.

    Zero for s >= eps, quadratic on [0, eps), linear below zero.
    """
    s = np.asarray(s, dtype=float)
    quad = (eps - s) ** 2 / (2 * eps)
    val = np.where(s >= eps, 0.0, np.where(s >= 0, quad, 0.5 * eps - s))
    der = np.where(s >= eps, 0.0, np.where(s >= 0, (s - eps) / eps, -1.0))
    return val, der


@dataclass(frozen=True)
class CollisionReport:
    """Batched report; ``max_penetration`` <= 0 means free, ``gradient`` is w.r.t. sphere centers."""

    max_penetration: np.ndarray
    worst: np.ndarray
    cost: np.ndarray
    gradient: np.ndarray
    velocity_gradient: np.ndarray | None = None
    sphere_cost: np.ndarray | None = None


# --- self collision --------------------------------------------------------


def pair_penetrations(centers: np.ndarray, radii: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    i, j = pairs[:, 0], pairs[:, 1]
    dist = np.linalg.norm(centers[:, i] - centers[:, j], axis=-1)
    return radii[i] + radii[j] - dist


def chunked_argmax(values: np.ndarray, chunk: int = CHUNK) -> tuple[np.ndarray, np.ndarray]:
    """Two-stage max over the last axis: per-chunk maxima, then a reduction over chunks."""
    B, P = values.shape
    n_chunks = -(-P // chunk)
    pad = n_chunks * chunk - P
    padded = np.concatenate([values, np.full((B, pad), -np.inf)], axis=1).reshape(B, n_chunks, chunk)
    local = np.argmax(padded, axis=2)
    local_max = np.take_along_axis(padded, local[..., None], axis=2)[..., 0]
    best_chunk = np.argmax(local_max, axis=1)
    idx = best_chunk * chunk + local[np.arange(B), best_chunk]
    return values[np.arange(B), idx], idx


def self_collision(
    model: RobotModel,
    sphere_centers: np.ndarray,
    margin: float = MARGIN,
    chunk: int = CHUNK,
    sum_pairs: bool = False,
) -> CollisionReport:
    """Most-penetrating sphere pair per configuration and its hinge cost.

    ``sphere_centers`` is (B, S, 3).  With ``sum_pairs`` the cost and gradient
    cover every pair instead of the argmax only.
    """
    c = np.asarray(sphere_centers, dtype=float)
    if c.ndim == 2:
        c = c[None]
    B, S = c.shape[:2]
    if S != model.n_spheres:
        raise ValueError(f"expected {model.n_spheres} sphere centers, got {S}")
    pairs = model.cache.self_collision_pairs
    radii = model.arrays.sphere_radius
    grad = np.zeros_like(c)
    if len(pairs) == 0:
        return CollisionReport(np.full(B, -np.inf), np.full(B, -1), np.zeros(B), grad)
    pen = pair_penetrations(c, radii, pairs)
    worst_val, worst = chunked_argmax(pen, chunk)
    use = np.arange(len(pairs))[None].repeat(B, 0) if sum_pairs else worst[:, None]
    p = np.take_along_axis(pen, use, axis=1)
    val, der = hinge(-p, margin)
    i, j = pairs[use, 0], pairs[use, 1]
    bidx = np.arange(B)[:, None]
    diff = c[bidx, i] - c[bidx, j]
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    n = diff / np.where(dist > 0, dist, 1.0)
    # clearance s = dist - ri - rj, so d cost / d c_i = h'(s) n
    g = der[..., None] * n
    for col in range(use.shape[1]):
        np.add.at(grad, (np.arange(B), i[:, col]), g[:, col])
        np.add.at(grad, (np.arange(B), j[:, col]), -g[:, col])
    return CollisionReport(worst_val, worst, val.sum(axis=1), grad)


def naive_max(model: RobotModel, sphere_centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-pass reference for the chunked reduction."""
    pen = pair_penetrations(np.asarray(sphere_centers, dtype=float), model.arrays.sphere_radius,
                            model.cache.self_collision_pairs)
    idx = np.argmax(pen, axis=1)
    return pen[np.arange(len(pen)), idx], idx


# --- scene collision -------------------------------------------------------


def _check_esdf(esdf: DenseEsdf):
    if not esdf.signed:
        raise ValueError("scene collision needs a signed ESDF (run recover_signs)")


def scene_collision(
    esdf: DenseEsdf,
    centers: np.ndarray,
    radii: np.ndarray,
    velocities: np.ndarray | None = None,
    dt: float = 1.0,
    margin: float = MARGIN,
    max_steps: int = 10_000,
) -> CollisionReport:
    """Per-timestep scene cost for spheres ``centers`` (T, S, 3).

    Without velocities every timestep is a static check with unit weight.
    With velocities, each sphere is swept from its center at t toward t+1,
    placing checks ``max(distance - radius, voxel)`` apart; each check is
    weighted by the fraction of the segment it covers times the arc length
    ``max(|v| dt, voxel)``.  The last timestep is a stationary sweep.  The
    gradient is exact, including the dependence of check placement on the
    centers.
    """
    _check_esdf(esdf)
    c = np.asarray(centers, dtype=float)
    T, S = c.shape[:2]
    r = np.broadcast_to(np.asarray(radii, dtype=float), (S,))
    vox = esdf.config.voxel_size
    if velocities is None:
        d, g, _ = query(esdf, c)
        val, der = hinge(d - r, margin)
        pen = r - d
        worst = np.argmax(pen, axis=1)
        return CollisionReport(pen.max(axis=1), worst, val.sum(axis=1), der[..., None] * g, None, val)

    vel = np.asarray(velocities, dtype=float)
    speed = np.linalg.norm(vel, axis=-1) * dt
    W = np.maximum(speed, vox)
    dW_dv = np.where(speed > vox, dt, 0.0)[..., None] * vel / np.where(speed > 0, speed / dt, 1.0)[..., None]

    start = c.reshape(-1, 3)
    end = np.concatenate([c[1:], c[-1:]], axis=0).reshape(-1, 3)
    delta = end - start
    L = np.linalg.norm(delta, axis=1)
    rr = np.broadcast_to(r, (T, S)).reshape(-1)
    Wf = W.reshape(-1)
    N = len(start)
    safeL = np.where(L > 1e-12, L, 1.0)

    lam = np.zeros(N)
    active = np.ones(N, dtype=bool)
    hist = []  # (lanes, lam_k, d_k, grad_k, lam_next, clamped, hval, hder)
    cost = np.zeros(N)
    max_pen = np.full(N, -np.inf)
    for _ in range(max_steps):
        lanes = np.flatnonzero(active)
        if len(lanes) == 0:
            break
        lk = lam[lanes]
        x = start[lanes] + lk[:, None] * delta[lanes]
        d, g, _ = query(esdf, x)
        clear = d - rr[lanes]
        hv, hd = hinge(clear, margin)
        step = np.where(L[lanes] > 1e-12, np.maximum(clear, vox) / safeL[lanes], np.inf)
        raw = lk + step
        clamped = raw >= 1.0
        nxt = np.where(clamped, 1.0, raw)
        cost[lanes] += hv * (nxt - lk) * Wf[lanes]
        max_pen[lanes] = np.maximum(max_pen[lanes], -clear)
        hist.append((lanes, lk, d, g, nxt, clamped, hv, hd, clear))
        lam[lanes] = nxt
        active[lanes] = ~clamped

    # reverse pass
    lam_bar = np.zeros(N)
    start_bar = np.zeros((N, 3))
    delta_bar = np.zeros((N, 3))
    L_bar = np.zeros(N)
    W_bar = np.zeros(N)
    for lanes, lk, d, g, nxt, clamped, hv, hd, clear in reversed(hist):
        w = Wf[lanes]
        nb = lam_bar[lanes] + hv * w  # adjoint of lambda_{k+1}
        lb = -hv * w
        d_bar = hd * (nxt - lk) * w
        W_bar[lanes] += hv * (nxt - lk)
        free = ~clamped
        lb = lb + np.where(free, nb, 0.0)
        step_bar = np.where(free, nb, 0.0)
        Ls = safeL[lanes]
        above = clear > vox
        d_bar = d_bar + np.where(above, step_bar / Ls, 0.0)
        L_bar[lanes] -= step_bar * np.maximum(clear, vox) / Ls**2
        xb = d_bar[:, None] * g
        start_bar[lanes] += xb
        delta_bar[lanes] += lk[:, None] * xb
        lb = lb + np.einsum("ni,ni->n", xb, delta[lanes])
        lam_bar[lanes] = lb
    moving = L > 1e-12
    delta_bar[moving] += L_bar[moving, None] * delta[moving] / L[moving, None]

    grad = start_bar - delta_bar
    end_bar = delta_bar.reshape(T, S, 3)
    grad = grad.reshape(T, S, 3)
    grad[1:] += end_bar[:-1]
    grad[-1] += end_bar[-1]
    vgrad = W_bar.reshape(T, S)[..., None] * dW_dv
    pen = max_pen.reshape(T, S)
    cost = cost.reshape(T, S)
    return CollisionReport(pen.max(axis=1), np.argmax(pen, axis=1), cost.sum(axis=1), grad, vgrad, cost)


def sweep_penetration(esdf: DenseEsdf, a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    """Worst penetration seen by the swept checks from ``a`` to ``b`` (N, 3), endpoint included."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    delta = b - a
    L = np.linalg.norm(delta, axis=1)
    safeL = np.where(L > 1e-12, L, 1.0)
    vox = esdf.config.voxel_size
    out = radius - query(esdf, b)[0]
    lam = np.zeros(len(a))
    active = L > 1e-12
    while np.any(active):
        lanes = np.flatnonzero(active)
        d = query(esdf, a[lanes] + lam[lanes, None] * delta[lanes])[0]
        out[lanes] = np.maximum(out[lanes], radius - d)
        lam[lanes] += np.maximum(d - radius, vox) / safeL[lanes]
        active[lanes[lam[lanes] >= 1.0]] = False
    return out


def swept_free(esdf: DenseEsdf, a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    return sweep_penetration(esdf, a, b, radius) <= 0.0


__all__ = [
    "CHUNK",
    "MARGIN",
    "CollisionReport",
    "chunked_argmax",
    "hinge",
    "naive_max",
    "pair_penetrations",
    "scene_collision",
    "self_collision",
    "sweep_penetration",
    "swept_free",
]
