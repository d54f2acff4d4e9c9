"""Uniform cubic B-spline trajectories with ghost-knot start and rest-clamped end.

Control points are stored joint-major, ``(d, K)``.  The evaluation sequence is
the optimized points, optionally preceded by ghost points that pin the start
state and followed by repeats of the last point that bring the robot to rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# rows: coefficients of 1, a, a^2, a^3 applied to [u_{k-1}, u_k, u_{k+1}, u_{k+2}]
_COEF = np.array(
    [
        [1.0, 4.0, 1.0, 0.0],
        [-3.0, 0.0, 3.0, 0.0],
        [3.0, -6.0, 3.0, 0.0],
        [-1.0, 3.0, -3.0, 1.0],
    ]
) / 6.0


def basis(alpha, dt: float) -> np.ndarray:
    """Weights (..., 4 derivative orders, 4 points) at local parameter ``alpha``."""
    a = np.asarray(alpha, dtype=float)[..., None]
    one = np.ones_like(a)
    zero = np.zeros_like(a)
    powers = np.stack(
        [
            np.concatenate([one, a, a**2, a**3], -1),
            np.concatenate([zero, one, 2 * a, 3 * a**2], -1) / dt,
            np.concatenate([zero, zero, 2 * one, 6 * a], -1) / dt**2,
            np.concatenate([zero, zero, zero, 6 * one], -1) / dt**3,
        ],
        axis=-2,
    )
    return powers @ _COEF


def ghost_points(theta0, theta_dot0, theta_ddot0, dt_u: float) -> np.ndarray:
    """Three points (d, 3) ahead of the first control point that pin the start state."""
    if dt_u <= 0:
        raise ValueError("knot interval must be positive")
    th = np.asarray(theta0, dtype=float)
    v = np.asarray(theta_dot0, dtype=float) * dt_u
    a = np.asarray(theta_ddot0, dtype=float) * dt_u**2
    return np.stack([th - a / 6.0, th + v + a / 3.0, th + 2.0 * v + 11.0 / 6.0 * a], axis=-1)


def _lead_point(ghost: np.ndarray) -> np.ndarray:
    # zero-jerk continuation of the ghost points; the start state is read off the
    # window that begins here
    return 3.0 * ghost[:, 0] - 3.0 * ghost[:, 1] + ghost[:, 2]


@dataclass(frozen=True)
class StateSample:
    t: float
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    theta_dddot: np.ndarray


@dataclass(frozen=True)
class SplineTrajectory:
    control_points: np.ndarray
    dt_u: float
    ghost_points: np.ndarray | None = None
    terminal_clamped: bool = True
    n_interp: int = 4
    _lead: int = field(init=False, repr=False)

    def __post_init__(self):
        U = np.asarray(self.control_points, dtype=float)
        if U.ndim == 1:
            U = U[None]
        object.__setattr__(self, "control_points", U)
        if not self.dt_u > 0:
            raise ValueError("knot interval must be positive")
        if self.n_interp < 1:
            raise ValueError("n_interp must be a positive integer")
        K = U.shape[1]
        if self.ghost_points is None:
            if K < 4:
                raise ValueError("need at least 4 control points without ghost points")
            object.__setattr__(self, "_lead", 0)
        else:
            g = np.asarray(self.ghost_points, dtype=float).reshape(U.shape[0], 3)
            object.__setattr__(self, "ghost_points", g)
            if K < 1:
                raise ValueError("need at least one control point")
            object.__setattr__(self, "_lead", 4)

    @property
    def dof(self) -> int:
        return self.control_points.shape[0]

    @property
    def n_control(self) -> int:
        return self.control_points.shape[1]

    def extended_points(self) -> np.ndarray:
        """Evaluation sequence (d, n_ext): lead + ghosts, control points, terminal repeats."""
        parts = []
        if self.ghost_points is not None:
            parts += [_lead_point(self.ghost_points)[:, None], self.ghost_points]
        parts.append(self.control_points)
        if self.terminal_clamped:
            # last point appears four times; the all-equal window is the rest state
            # itself and is not sampled
            parts.append(np.repeat(self.control_points[:, -1:], 2, axis=1))
        return np.concatenate(parts, axis=1)

    def extended_index(self) -> np.ndarray:
        """For every extended column, the control point it copies (-1 for fixed boundary data)."""
        K = self.n_control
        idx = [-1] * self._lead + list(range(K))
        if self.terminal_clamped:
            idx += [K - 1, K - 1]
        return np.array(idx)

    @property
    def n_segments(self) -> int:
        return self.extended_points().shape[1] - 3

    @property
    def duration(self) -> float:
        return self.n_segments * self.dt_u

    def with_control_points(self, U: np.ndarray) -> "SplineTrajectory":
        return SplineTrajectory(U, self.dt_u, self.ghost_points, self.terminal_clamped, self.n_interp)


def evaluate(spline: SplineTrajectory, segment: int, alpha: float) -> StateSample:
    if not 0 <= segment < spline.n_segments:
        raise IndexError(f"segment {segment} out of range [0, {spline.n_segments})")
    E = spline.extended_points()
    W = basis(alpha, spline.dt_u)
    out = E[:, segment : segment + 4] @ W.T
    t = (segment + float(alpha)) * spline.dt_u
    return StateSample(t, out[:, 0], out[:, 1], out[:, 2], out[:, 3])


def sample_grid(spline: SplineTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Segment index and alpha for every uniform sample (last endpoint included once)."""
    n, S = spline.n_interp, spline.n_segments
    seg = np.repeat(np.arange(S), n)
    alpha = np.tile(np.arange(n) / n, S)
    return np.append(seg, S - 1), np.append(alpha, 1.0)


def sample_states(spline: SplineTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Times (N,) and states (N, 4, d) ordered [theta, dot, ddot, dddot]."""
    seg, alpha = sample_grid(spline)
    E = spline.extended_points()
    W = basis(alpha, spline.dt_u)  # (N, 4, 4)
    windows = E[:, seg[:, None] + np.arange(4)]  # (d, N, 4)
    states = np.einsum("nrc,dnc->nrd", W, windows)
    return (seg + alpha) * spline.dt_u, states


def sample_uniform(spline: SplineTrajectory) -> list[StateSample]:
    t, X = sample_states(spline)
    return [StateSample(float(t[i]), X[i, 0], X[i, 1], X[i, 2], X[i, 3]) for i in range(len(t))]


def vjp(spline: SplineTrajectory, sample_grads: np.ndarray) -> np.ndarray:
    """Pull per-sample gradients back to the control points.

    ``sample_grads`` is (N, d, 4), aligned with ``sample_states``.  Repeats of
    the last control point pass their gradient on to it; ghost points are
    fixed data.
    """
    seg, alpha = sample_grid(spline)
    G = np.asarray(sample_grads, dtype=float)
    if G.shape != (len(seg), spline.dof, 4):
        raise ValueError(f"expected sample gradients of shape {(len(seg), spline.dof, 4)}, got {G.shape}")
    W = basis(alpha, spline.dt_u)
    contrib = np.einsum("nrc,ndr->dnc", W, G)  # (d, N, 4)
    n_ext = spline.n_segments + 3
    g_ext = np.zeros((spline.dof, n_ext))
    for c in range(4):
        np.add.at(g_ext.T, seg + c, contrib[:, :, c].T)
    idx = spline.extended_index()
    out = np.zeros_like(spline.control_points)
    live = idx >= 0
    np.add.at(out.T, idx[live], g_ext[:, live].T)
    return out


__all__ = [
    "SplineTrajectory",
    "StateSample",
    "basis",
    "evaluate",
    "ghost_points",
    "sample_grid",
    "sample_states",
    "sample_uniform",
    "vjp",
]
