"""Dense Euclidean signed distance field rebuilt from the sparse TSDF.

Three stages: mark surface sites (scatter from TSDF voxels or gather by
probing the TSDF from every cell), run an exact separable distance transform
in integer squared voxel units, then recover interior signs from the geometry
channel next to each site.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .tsdf import SparseTsdf

SEED_FRACTION = 0.9
_INF = np.iinfo(np.int64).max // 4


@dataclass(frozen=True)
class EsdfConfig:
    origin: tuple = (0.0, 0.0, 0.0)
    dims: tuple = (32, 32, 32)
    voxel_size: float = 0.02
    seeding: str = "gather"

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError("dims must be three positive integers")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if not np.all(np.isfinite(self.origin)):
            raise ValueError("origin must be finite")
        if self.seeding not in ("scatter", "gather"):
            raise ValueError("seeding must be 'scatter' or 'gather'")

    @staticmethod
    def covering(lo, hi, voxel_size: float, seeding: str = "gather") -> "EsdfConfig":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        dims = np.maximum(np.ceil((hi - lo) / voxel_size - 1e-9).astype(int), 1)
        return EsdfConfig(tuple(lo), tuple(dims), voxel_size, seeding)

    def centers(self) -> np.ndarray:
        axes = [self.origin[i] + (np.arange(self.dims[i]) + 0.5) * self.voxel_size for i in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(points) - np.asarray(self.origin)) / self.voxel_size).astype(np.int64)


@dataclass(frozen=True)
class DenseEsdf:
    """Site per voxel (-1 when none), squared distance in voxel units, signed metric distance."""

    config: EsdfConfig
    site: np.ndarray
    sq_dist: np.ndarray
    distance: np.ndarray
    empty: bool = False
    signed: bool = False


# --- seeding ---------------------------------------------------------------


def seed_scatter(tsdf: SparseTsdf, config: EsdfConfig) -> np.ndarray:
    seeds = np.zeros(config.dims, dtype=bool)
    centers, values = tsdf.effective_values()
    surf = np.abs(values) < SEED_FRACTION * tsdf.config.voxel_size
    cells = config.cell_of(centers[surf])
    inside = np.all((cells >= 0) & (cells < np.asarray(config.dims)), axis=1)
    c = cells[inside]
    seeds[c[:, 0], c[:, 1], c[:, 2]] = True
    return seeds


def seed_gather(tsdf: SparseTsdf, config: EsdfConfig, chunk: int = 1 << 18) -> np.ndarray:
    centers = config.centers().reshape(-1, 3)
    h = 0.5 * config.voxel_size
    offsets = np.vstack([np.zeros(3), h * np.eye(3), -h * np.eye(3)])
    thr = SEED_FRACTION * tsdf.config.voxel_size
    seeds = np.zeros(len(centers), dtype=bool)
    for s in range(0, len(centers), chunk):
        c = centers[s : s + chunk]
        probes = (c[:, None, :] + offsets[None]).reshape(-1, 3)
        val = tsdf.query(probes).reshape(len(c), 7)
        with np.errstate(invalid="ignore"):
            seeds[s : s + chunk] = np.any(np.abs(val) < thr, axis=1)
    return seeds.reshape(config.dims)


def seed(tsdf: SparseTsdf, config: EsdfConfig) -> np.ndarray:
    return seed_scatter(tsdf, config) if config.seeding == "scatter" else seed_gather(tsdf, config)


# --- exact transform -------------------------------------------------------


@numba.njit(cache=True)
def _flood_lines(has_site, pos_out):
    """Nearest site index along each line (ties keep the lower index); -1 when the line is empty."""
    n_lines, n = has_site.shape
    for l in range(n_lines):
        last = -1
        for i in range(n):
            if has_site[l, i]:
                last = i
            pos_out[l, i] = last
        nxt = -1
        for i in range(n - 1, -1, -1):
            if has_site[l, i]:
                nxt = i
            if nxt >= 0:
                prev = pos_out[l, i]
                if prev < 0 or nxt - i < i - prev:
                    pos_out[l, i] = nxt


@numba.njit(cache=True)
def _envelope_lines(g, choice_out):
    """Lower envelope of parabolas g[j] + (i - j)^2 per line (Maurer dominance stack).

    ``g`` holds squared distances of the candidate at each position (huge when
    absent).  ``choice_out[l, i]`` is the winning candidate position or -1.
    """
    n_lines, n = g.shape
    stack = np.empty(n, dtype=np.int64)
    for l in range(n_lines):
        k = 0
        for w in range(n):
            gw = g[l, w]
            if gw >= _INF:
                continue
            while k >= 2:
                u = stack[k - 2]
                v = stack[k - 1]
                a = v - u
                b = w - v
                c = w - u
                # v is dominated when it never lies strictly below both neighbours
                if c * g[l, v] - b * g[l, u] - a * gw - a * b * c >= 0:
                    k -= 1
                else:
                    break
            stack[k] = w
            k += 1
        if k == 0:
            for i in range(n):
                choice_out[l, i] = -1
            continue
        j = 0
        for i in range(n):
            while j < k - 1:
                s0 = stack[j]
                s1 = stack[j + 1]
                if g[l, s1] + (i - s1) * (i - s1) < g[l, s0] + (i - s0) * (i - s0):
                    j += 1
                else:
                    break
            choice_out[l, i] = stack[j]


def _lines(a: np.ndarray, axis: int) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(a, axis, -1).reshape(-1, a.shape[axis]))


def _unlines(flat: np.ndarray, shape, axis: int) -> np.ndarray:
    moved = list(shape)
    n = moved.pop(axis)
    return np.moveaxis(flat.reshape(moved + [n]), -1, axis)


def exact_transform(seeds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-site coordinates (X, Y, Z, 3) and integer squared distances for a boolean grid."""
    seeds = np.asarray(seeds, dtype=bool)
    shape = seeds.shape
    idx = np.indices(shape)

    # z flood
    zpos = np.empty((int(np.prod(shape[:2])), shape[2]), dtype=np.int64)
    _flood_lines(_lines(seeds, 2), zpos)
    site_z = _unlines(zpos, shape, 2)

    # y sweep: candidate at (x, y', z) is the z-site of that column
    has = site_z >= 0
    g = np.where(has, (idx[2] - site_z) ** 2, _INF).astype(np.int64)
    choice = np.empty((int(np.prod(shape)) // shape[1], shape[1]), dtype=np.int64)
    _envelope_lines(_lines(g, 1), choice)
    yy = _unlines(choice, shape, 1)
    ok = yy >= 0
    ys = np.where(ok, yy, 0)
    site_y = np.where(ok, yy, -1)
    site_z2 = np.where(ok, site_z[idx[0], ys, idx[2]], -1)

    # x sweep
    has = site_y >= 0
    g = np.where(has, (idx[1] - site_y) ** 2 + (idx[2] - site_z2) ** 2, _INF).astype(np.int64)
    choice = np.empty((int(np.prod(shape)) // shape[0], shape[0]), dtype=np.int64)
    _envelope_lines(_lines(g, 0), choice)
    xx = _unlines(choice, shape, 0)
    ok = xx >= 0
    xs = np.where(ok, xx, 0)
    sy = site_y[xs, idx[1], idx[2]]
    sz = site_z2[xs, idx[1], idx[2]]
    site = np.stack([np.where(ok, xx, -1), np.where(ok, sy, -1), np.where(ok, sz, -1)], axis=-1)
    d2 = np.where(ok, (idx[0] - xx) ** 2 + (idx[1] - sy) ** 2 + (idx[2] - sz) ** 2, _INF)
    return site, d2.astype(np.int64)


def propagate(seeds: np.ndarray, config: EsdfConfig) -> DenseEsdf:
    if seeds.shape != config.dims:
        raise ValueError(f"seed grid {seeds.shape} does not match dims {config.dims}")
    if not np.any(seeds):
        site = np.full(config.dims + (3,), -1, dtype=np.int64)
        d2 = np.full(config.dims, _INF, dtype=np.int64)
        return DenseEsdf(config, site, d2, np.full(config.dims, np.inf), empty=True)
    site, d2 = exact_transform(seeds)
    dist = np.sqrt(d2.astype(float)) * config.voxel_size
    return DenseEsdf(config, site, d2, dist)


def recover_signs(esdf: DenseEsdf, tsdf: SparseTsdf) -> DenseEsdf:
    """Negate voxels whose neighbour-of-site geometry sample (or own TSDF value) is inside."""
    if esdf.empty:
        return DenseEsdf(esdf.config, esdf.site, esdf.sq_dist, esdf.distance, True, True)
    cfg = esdf.config
    origin = np.asarray(cfg.origin)
    q_idx = np.indices(cfg.dims).transpose(1, 2, 3, 0).reshape(-1, 3)
    s_idx = esdf.site.reshape(-1, 3)
    q = origin + (q_idx + 0.5) * cfg.voxel_size
    s = origin + (s_idx + 0.5) * cfg.voxel_size
    diff = q - s
    norm = np.linalg.norm(diff, axis=1)
    moved = norm > 0
    probe = s.copy()
    probe[moved] += cfg.voxel_size * diff[moved] / norm[moved, None]
    _, geom, _ = tsdf.channels(probe)
    geom[~moved] = np.nan
    own = tsdf.query(q)
    sample = np.where(np.isnan(geom), own, geom)
    negative = np.nan_to_num(sample, nan=1.0) < 0.0
    dist = esdf.distance.reshape(-1).copy()
    dist[negative] *= -1.0
    return DenseEsdf(cfg, esdf.site, esdf.sq_dist, dist.reshape(cfg.dims), False, True)


def build_esdf(tsdf: SparseTsdf, config: EsdfConfig) -> DenseEsdf:
    return recover_signs(propagate(seed(tsdf, config), config), tsdf)


# --- queries ---------------------------------------------------------------


def query(esdf: DenseEsdf, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trilinear distance (N,), its analytic gradient (N, 3) and an outside-the-box flag (N,).

    Outside the box the coordinates clamp to the boundary cell, whose slope is
    kept so the gradient still points back toward free space.
    """
    cfg = esdf.config
    pts = np.asarray(points, dtype=float)
    lead = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    dims = np.asarray(cfg.dims)
    rel = (pts - np.asarray(cfg.origin)) / cfg.voxel_size
    outside = np.any((rel < 0) | (rel > dims), axis=1)
    if esdf.empty:
        return (np.full(lead, np.inf), np.zeros(lead + (3,)), outside.reshape(lead))
    g = np.clip(rel - 0.5, 0.0, dims - 1.0)
    i0 = np.clip(np.floor(g).astype(np.int64), 0, np.maximum(dims - 2, 0))
    i1 = np.minimum(i0 + 1, dims - 1)
    f = np.where(dims > 1, g - i0, 0.0)
    D = esdf.distance
    c = np.empty((len(pts), 2, 2, 2))
    for a in range(2):
        xi = i1[:, 0] if a else i0[:, 0]
        for b in range(2):
            yi = i1[:, 1] if b else i0[:, 1]
            for e in range(2):
                zi = i1[:, 2] if e else i0[:, 2]
                c[:, a, b, e] = D[xi, yi, zi]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    cx = c[:, 0] * (1 - fx)[:, None, None] + c[:, 1] * fx[:, None, None]
    cxy = cx[:, 0] * (1 - fy)[:, None] + cx[:, 1] * fy[:, None]
    val = cxy[:, 0] * (1 - fz) + cxy[:, 1] * fz
    dx = c[:, 1] - c[:, 0]
    dxy = dx[:, 0] * (1 - fy)[:, None] + dx[:, 1] * fy[:, None]
    gx = dxy[:, 0] * (1 - fz) + dxy[:, 1] * fz
    dy = cx[:, 1] - cx[:, 0]
    gy = dy[:, 0] * (1 - fz) + dy[:, 1] * fz
    gz = cxy[:, 1] - cxy[:, 0]
    grad = np.stack([gx, gy, gz], axis=1) / cfg.voxel_size
    grad[:, dims <= 1] = 0.0
    return val.reshape(lead), grad.reshape(lead + (3,)), outside.reshape(lead)


def collision_recall(esdf: DenseEsdf, true_sdf, points: np.ndarray, radius: float) -> tuple[float, int]:
    """Fraction of probe spheres that truly collide (analytic distance < radius) and are flagged.

    Returns (recall, number of truly colliding probes); recall is 1.0 when none collide.
    """
    truth = np.asarray(true_sdf(points)) < radius
    flagged = query(esdf, points)[0] < radius
    n = int(truth.sum())
    return (float(np.mean(flagged[truth])) if n else 1.0), n


__all__ = [
    "DenseEsdf",
    "collision_recall",
    "EsdfConfig",
    "build_esdf",
    "exact_transform",
    "propagate",
    "query",
    "recover_signs",
    "seed",
    "seed_gather",
    "seed_scatter",
]
