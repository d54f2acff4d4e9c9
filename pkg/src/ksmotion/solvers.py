"""Levenberg-Marquardt with trust-region damping, and batched L-BFGS with Armijo backtracking.

Both solvers accept a leading batch axis so independent problems (IK seeds,
trajectory seeds) advance together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class LmConfig:
    lambda_init: float = 1e-2
    lambda_min: float = 1e-10
    lambda_max: float = 1e10
    gamma: float = 2.0
    rho_min: float = 1e-3
    epsilon: float = 1e-30  # only guards 0/0; larger values stall steps once E is tiny
    max_iters: int = 100
    position_tol: float = 1e-6
    orientation_tol: float = 1e-5

    def __post_init__(self):
        if not 0 < self.lambda_min <= self.lambda_init <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_init <= lambda_max")
        if self.gamma <= 1:
            raise ValueError("gamma must exceed 1")


@dataclass(frozen=True)
class LmState:
    """Batched solver state; ``q`` (B, n), ``lam`` (B,), ``r`` (B, m), ``J`` (B, m, n)."""

    q: np.ndarray
    lam: np.ndarray
    r: np.ndarray
    J: np.ndarray
    g: np.ndarray
    E: np.ndarray
    accepted: np.ndarray | None = None
    singular: np.ndarray | None = None


ResidualFn = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]


def lm_init(q, residual_fn: ResidualFn, config: LmConfig) -> LmState:
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r, J = residual_fn(q)
    g = np.einsum("bmi,bm->bi", J, r)
    E = 0.5 * np.einsum("bm,bm->b", r, r)
    return LmState(q, np.full(len(q), config.lambda_init), r, J, g, E)


def _solve_damped(J: np.ndarray, g: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = J.shape[-1]
    A = np.einsum("bmi,bmj->bij", J, J) + lam[:, None, None] * np.eye(n)
    delta = np.zeros_like(g)
    ok = np.ones(len(g), dtype=bool)
    try:
        Lc = np.linalg.cholesky(A)
        y = np.linalg.solve(Lc, -g[..., None])
        delta = np.linalg.solve(np.swapaxes(Lc, -1, -2), y)[..., 0]
    except np.linalg.LinAlgError:
        for b in range(len(g)):
            try:
                Lc = np.linalg.cholesky(A[b])
                delta[b] = np.linalg.solve(Lc.T, np.linalg.solve(Lc, -g[b]))
            except np.linalg.LinAlgError:
                ok[b] = False
    return delta, ok


def lm_step(
    state: LmState,
    residual_fn: ResidualFn,
    config: LmConfig,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    active: np.ndarray | None = None,
) -> LmState:
    """One damped Gauss-Newton step with trust-ratio accept/reject per batch entry.

    ``project`` maps candidate configurations back into the feasible box
    before they are evaluated.  A failed Cholesky factorization counts as a
    rejected step.  Lanes where ``active`` is False are left untouched.
    """
    B = len(state.q)
    active = np.ones(B, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    delta, ok = _solve_damped(state.J, state.g, state.lam)
    q_new = state.q + delta
    if project is not None:
        q_new = project(q_new)
    r_new, J_new = residual_fn(q_new)
    E_new = 0.5 * np.einsum("bm,bm->b", r_new, r_new)
    rho_pred = 0.5 * np.einsum("bi,bi->b", delta, state.lam[:, None] * delta - state.g)
    rho_trust = (state.E - E_new) / (rho_pred + config.epsilon)
    accept = active & ok & np.isfinite(E_new) & (rho_trust >= config.rho_min)
    reject = active & ~accept
    lam = state.lam.copy()
    lam[accept] = np.clip(lam[accept] / config.gamma, config.lambda_min, config.lambda_max)
    lam[reject] = np.clip(lam[reject] * config.gamma, config.lambda_min, config.lambda_max)
    sel = accept[:, None]
    q = np.where(sel, q_new, state.q)
    r = np.where(sel, r_new, state.r)
    J = np.where(accept[:, None, None], J_new, state.J)
    g = np.einsum("bmi,bm->bi", J, r)
    E = np.where(accept, E_new, state.E)
    return LmState(q, lam, r, J, g, E, accept, ~ok)


def lm_solve(
    q0,
    residual_fn: ResidualFn,
    config: LmConfig = LmConfig(),
    converged_fn: Callable[[LmState], np.ndarray] | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[LmState, np.ndarray, np.ndarray]:
    """Iterate ``lm_step`` until every lane converges or ``max_iters``; returns (state, converged, iterations)."""
    state = lm_init(q0, residual_fn, config)
    B = len(state.q)
    done = converged_fn(state) if converged_fn is not None else np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    for _ in range(config.max_iters):
        if np.all(done):
            break
        state = lm_step(state, residual_fn, config, project, active=~done)
        iters[~done] += 1
        if converged_fn is not None:
            done = done | converged_fn(state)
        stuck = (state.lam >= config.lambda_max) & ~state.accepted
        done = done | stuck
    conv = converged_fn(state) if converged_fn is not None else np.zeros(B, dtype=bool)
    return state, conv, iters


# --- L-BFGS ----------------------------------------------------------------


@dataclass(frozen=True)
class LbfgsConfig:
    history: int = 10
    max_iters: int = 200
    c1: float = 1e-4
    shrink: float = 0.5
    interpolate: bool = True  # backtrack to the minimizer of the quadratic through f(0), f'(0), f(alpha)
    refine: bool = True  # also try that minimizer when the first trial already passes
    max_backtracks: int = 40
    grad_tol: float = 1e-8
    first_step: float | None = None
    stall_tol: float = 0.0
    parallel_steps: tuple = ()

    def __post_init__(self):
        if self.history < 0:
            raise ValueError("history must be non-negative")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        steps = np.asarray(self.parallel_steps, dtype=float)
        if len(steps) and (np.any(steps <= 0) or np.any(np.diff(steps) >= 0)):
            raise ValueError("parallel_steps must be positive and strictly decreasing")


@dataclass(frozen=True)
class LbfgsResult:
    q: np.ndarray
    value: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    trace: list


Objective = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]


def _two_loop(g, S, Y, valid):
    """Apply the inverse-Hessian estimate to ``g``; pairs are stored newest first."""
    q = g.copy()
    m = S.shape[1]
    alphas = np.zeros((len(g), m))
    sy = np.einsum("bki,bki->bk", S, Y)
    rho = np.where(valid, 1.0 / np.where(valid, sy, 1.0), 0.0)
    for k in range(m):
        a = rho[:, k] * np.einsum("bi,bi->b", S[:, k], q)
        alphas[:, k] = a
        q -= a[:, None] * Y[:, k]
    yy = np.einsum("bi,bi->b", Y[:, 0], Y[:, 0]) if m else np.zeros(len(g))
    has = valid[:, 0] if m else np.zeros(len(g), dtype=bool)
    scale = np.where(has, sy[:, 0] / np.where(has, yy, 1.0), 1.0) if m else np.ones(len(g))
    r = scale[:, None] * q
    for k in range(m - 1, -1, -1):
        b = rho[:, k] * np.einsum("bi,bi->b", Y[:, k], r)
        r += S[:, k] * (alphas[:, k] - b)[:, None]
    return r


def lbfgs_minimize_batch(objective: Objective, q0, config: LbfgsConfig = LbfgsConfig()) -> LbfgsResult:
    x = np.atleast_2d(np.asarray(q0, dtype=float)).copy()
    B, n = x.shape
    f, g = objective(x)
    f = np.asarray(f, dtype=float).reshape(B)
    if not np.all(np.isfinite(f)) or not np.all(np.isfinite(g)):
        raise ValueError("objective is not finite at the initial point")
    m = config.history
    S = np.zeros((B, m, n))
    Y = np.zeros((B, m, n))
    valid = np.zeros((B, m), dtype=bool)
    iters = np.zeros(B, dtype=int)
    converged = np.max(np.abs(g), axis=1) < config.grad_tol
    stopped = converged.copy()
    trace = [f.copy()]
    for _ in range(config.max_iters):
        run = ~stopped
        if not np.any(run):
            break
        d = -_two_loop(g, S, Y, valid) if m else -g
        slope = np.einsum("bi,bi->b", d, g)
        bad = slope >= 0
        if np.any(bad):
            d[bad] = -g[bad]
            valid[bad] = False
            slope = np.einsum("bi,bi->b", d, g)
        alpha = np.ones(B)
        if config.first_step is not None:
            fresh = ~valid[:, 0] if m else np.ones(B, dtype=bool)
            cap = config.first_step / np.maximum(np.max(np.abs(d), axis=1), 1e-300)
            alpha = np.where(fresh, np.minimum(1.0, cap), 1.0)
        searching = run.copy()
        x_new, f_new, g_new = x.copy(), f.copy(), g.copy()
        if config.parallel_steps and np.any(searching):
            # one batched call over a fixed ladder of step sizes; take the longest that passes
            lanes = np.flatnonzero(searching)
            ladder = alpha[lanes, None] * np.asarray(config.parallel_steps)[None]
            trial = x[lanes, None] + ladder[..., None] * d[lanes, None]
            ft, gt = objective(trial.reshape(-1, n))
            ft = np.asarray(ft, dtype=float).reshape(ladder.shape)
            gt = np.asarray(gt, dtype=float).reshape(ladder.shape + (n,))
            ok = np.isfinite(ft) & (ft <= f[lanes, None] + config.c1 * ladder * slope[lanes, None])
            hit = ok.any(axis=1)
            pick = np.argmax(ok, axis=1)
            rows = np.arange(len(lanes))
            sel = lanes[hit]
            x_new[sel] = trial[rows, pick][hit]
            f_new[sel] = ft[rows, pick][hit]
            g_new[sel] = gt[rows, pick][hit]
            searching[sel] = False
            alpha[lanes] = ladder[:, -1] * config.shrink
        first_trial = True
        for _ in range(config.max_backtracks):
            if not np.any(searching):
                break
            lanes = np.flatnonzero(searching)
            trial = x[lanes] + alpha[lanes, None] * d[lanes]
            ft, gt = objective(trial)
            ft = np.asarray(ft, dtype=float).reshape(len(lanes))
            ok = np.isfinite(ft) & (ft <= f[lanes] + config.c1 * alpha[lanes] * slope[lanes])
            acc = lanes[ok]
            x_new[acc], f_new[acc], g_new[acc] = trial[ok], ft[ok], np.asarray(gt)[ok]
            searching[acc] = False
            if config.refine and first_trial and len(acc):
                # exact on quadratics, which keeps the quasi-Newton pairs conjugate
                a = alpha[acc]
                curv = ft[ok] - f[acc] - slope[acc] * a
                with np.errstate(divide="ignore", invalid="ignore"):
                    a_fit = -slope[acc] * a**2 / (2 * curv)
                try_fit = np.isfinite(a_fit) & (curv > 0) & (np.abs(a_fit / a - 1.0) > 1e-3)
                if np.any(try_fit):
                    rl = acc[try_fit]
                    t2 = x[rl] + a_fit[try_fit, None] * d[rl]
                    f2, g2 = objective(t2)
                    f2 = np.asarray(f2, dtype=float).reshape(len(rl))
                    better = np.isfinite(f2) & (f2 < f_new[rl]) & (f2 <= f[rl] + config.c1 * a_fit[try_fit] * slope[rl])
                    rb = rl[better]
                    x_new[rb], f_new[rb], g_new[rb] = t2[better], f2[better], np.asarray(g2)[better]
            first_trial = False
            factor = np.full(len(lanes), config.shrink)
            if config.interpolate:
                a = alpha[lanes]
                curv = ft - f[lanes] - slope[lanes] * a
                with np.errstate(divide="ignore", invalid="ignore"):
                    fit = -slope[lanes] * a / (2 * curv)
                factor = np.where(np.isfinite(fit) & (curv > 0), np.clip(fit, 0.1, 0.9), factor)
            alpha[lanes[~ok]] *= factor[~ok]
        failed = searching
        moved = run & ~failed
        s = x_new - x
        y = g_new - g
        sy = np.einsum("bi,bi->b", s, y)
        push = moved & (sy > 0) & (m > 0)
        # a rejected pair means the stored model no longer fits; restart it
        valid[moved & ~push] = False
        if m:
            for b in np.flatnonzero(push):
                S[b] = np.roll(S[b], 1, axis=0)
                Y[b] = np.roll(Y[b], 1, axis=0)
                valid[b] = np.roll(valid[b], 1)
                S[b, 0], Y[b, 0], valid[b, 0] = s[b], y[b], True
        f_prev = f.copy()
        x[moved], f[moved], g[moved] = x_new[moved], f_new[moved], g_new[moved]
        iters[run] += 1
        converged |= moved & (np.max(np.abs(g), axis=1) < config.grad_tol)
        # relative decrease this small means the lane has stalled (stopped, not converged)
        stalled = moved & (f_prev - f <= config.stall_tol * np.maximum(np.maximum(np.abs(f_prev), np.abs(f)), 1.0))
        stopped |= converged | failed | (stalled if config.stall_tol > 0 else False)
        trace.append(f.copy())
    return LbfgsResult(x, f, iters, converged, trace)


def lbfgs_minimize(objective, q0, config: LbfgsConfig = LbfgsConfig()) -> tuple[np.ndarray, float, int, bool]:
    """Single-problem wrapper; ``objective`` maps a 1-D vector to (value, gradient)."""

    def batched(X):
        vals, grads = zip(*(objective(x) for x in X))
        return np.array(vals, dtype=float), np.array(grads, dtype=float)

    res = lbfgs_minimize_batch(batched, np.asarray(q0, dtype=float)[None], config)
    return res.q[0], float(res.value[0]), int(res.iterations[0]), bool(res.converged[0])


__all__ = [
    "LbfgsConfig",
    "LbfgsResult",
    "LmConfig",
    "LmState",
    "lbfgs_minimize",
    "lbfgs_minimize_batch",
    "lm_init",
    "lm_solve",
    "lm_step",
]
