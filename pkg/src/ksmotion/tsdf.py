"""Block-sparse TSDF world model.

Space is cut into 8x8x8-voxel blocks allocated on demand from a fixed pool.
Each voxel carries a fused depth channel (weighted running mean of projective
signed distance) and an analytic geometry channel written by primitive
stamping.  The effective distance is the minimum of the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .spatial import Pose

BLOCK = 8
_EMPTY = -1
_TOMB = -2
_P1, _P2, _P3 = 73856093, 19349663, 83492791


class PoolExhausted(RuntimeError):
    def __init__(self, required: int, available: int):
        super().__init__(f"block pool exhausted: {required} blocks required, {available} available")
        self.required = required
        self.available = available


@dataclass(frozen=True)
class TsdfConfig:
    voxel_size: float = 0.01
    truncation: float | None = None
    alpha_time: float = 0.99
    alpha_frustum: float = 0.5
    weight_threshold: float = 1e-2
    capacity: int = 4096

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.truncation is None:
            object.__setattr__(self, "truncation", 4.0 * self.voxel_size)
        if self.truncation < self.voxel_size:
            raise ValueError("truncation must be at least one voxel")
        for name in ("alpha_time", "alpha_frustum"):
            a = getattr(self, name)
            if not 0.0 < a <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.capacity < 1:
            raise ValueError("capacity must be positive")

    @property
    def block_size(self) -> float:
        return BLOCK * self.voxel_size


@dataclass
class DepthFrame:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pose: Pose
    depth: np.ndarray | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=float).reshape(self.height, self.width)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (points - self.pose.p) @ self.pose.R

    def project(self, cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest-pixel (column, row) of camera-frame points; z must be positive."""
        z = cam[..., 2]
        safe = np.where(z > 0, z, 1.0)
        u = np.rint(self.fx * cam[..., 0] / safe + self.cx).astype(np.int64)
        v = np.rint(self.fy * cam[..., 1] / safe + self.cy).astype(np.int64)
        return u, v


# --- hash table kernels ----------------------------------------------------


@numba.njit(cache=True)
def _hash(x, y, z, n_slots):
    h = (x * _P1) ^ (y * _P2) ^ (z * _P3)
    return h % n_slots


@numba.njit(cache=True)
def _lookup(slot_keys, slot_val, queries):
    n_slots = slot_val.shape[0]
    out = np.full(queries.shape[0], -1, dtype=np.int64)
    for i in range(queries.shape[0]):
        x, y, z = queries[i, 0], queries[i, 1], queries[i, 2]
        s = _hash(x, y, z, n_slots)
        for _ in range(n_slots):
            v = slot_val[s]
            if v == _EMPTY:
                break
            if v >= 0 and slot_keys[s, 0] == x and slot_keys[s, 1] == y and slot_keys[s, 2] == z:
                out[i] = v
                break
            s += 1
            if s == n_slots:
                s = 0
    return out


@numba.njit(cache=True)
def _insert(slot_keys, slot_val, key, pool_index):
    n_slots = slot_val.shape[0]
    s = _hash(key[0], key[1], key[2], n_slots)
    for _ in range(n_slots):
        if slot_val[s] < 0:
            slot_keys[s, 0] = key[0]
            slot_keys[s, 1] = key[1]
            slot_keys[s, 2] = key[2]
            slot_val[s] = pool_index
            return s
        s += 1
        if s == n_slots:
            s = 0
    return -1


@numba.njit(cache=True)
def _remove(slot_keys, slot_val, key):
    n_slots = slot_val.shape[0]
    s = _hash(key[0], key[1], key[2], n_slots)
    for _ in range(n_slots):
        v = slot_val[s]
        if v == _EMPTY:
            return -1
        if v >= 0 and slot_keys[s, 0] == key[0] and slot_keys[s, 1] == key[1] and slot_keys[s, 2] == key[2]:
            slot_val[s] = _TOMB
            return v
        s += 1
        if s == n_slots:
            s = 0
    return -1


@dataclass
class BlockHashTable:
    """Open-addressing map from block coordinates to pool indices, with tombstones."""

    capacity: int
    slot_keys: np.ndarray = field(init=False)
    slot_val: np.ndarray = field(init=False)
    free_list: list = field(init=False)
    n_fresh: int = field(init=False)
    n_tomb: int = field(init=False)

    def __post_init__(self):
        n_slots = max(16, 2 * self.capacity + 1)
        self.slot_keys = np.zeros((n_slots, 3), dtype=np.int64)
        self.slot_val = np.full(n_slots, _EMPTY, dtype=np.int64)
        self.free_list = []
        self.n_fresh = 0
        self.n_tomb = 0

    @property
    def n_live(self) -> int:
        return int(np.count_nonzero(self.slot_val >= 0))

    @property
    def available(self) -> int:
        return len(self.free_list) + self.capacity - self.n_fresh

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        keys = np.ascontiguousarray(keys, dtype=np.int64).reshape(-1, 3)
        return _lookup(self.slot_keys, self.slot_val, keys)

    def insert_many(self, keys: np.ndarray) -> np.ndarray:
        """Insert keys known to be absent; recycled pool indices are used first."""
        keys = np.ascontiguousarray(keys, dtype=np.int64).reshape(-1, 3)
        if len(keys) > self.available:
            raise PoolExhausted(len(keys), self.available)
        if self.n_live + self.n_tomb + len(keys) > 0.7 * len(self.slot_val):
            self._rehash()
        out = np.empty(len(keys), dtype=np.int64)
        for i, key in enumerate(keys):
            if self.free_list:
                idx = self.free_list.pop()
            else:
                idx = self.n_fresh
                self.n_fresh += 1
            s = _insert(self.slot_keys, self.slot_val, key, idx)
            if s < 0:
                raise RuntimeError("hash table full")
            out[i] = idx
        return out

    def remove(self, key) -> int:
        idx = int(_remove(self.slot_keys, self.slot_val, np.asarray(key, dtype=np.int64)))
        if idx >= 0:
            self.free_list.append(idx)
            self.n_tomb += 1
        return idx

    def _rehash(self):
        live = self.slot_val >= 0
        keys, vals = self.slot_keys[live].copy(), self.slot_val[live].copy()
        self.slot_keys[:] = 0
        self.slot_val[:] = _EMPTY
        self.n_tomb = 0
        for k, v in zip(keys, vals):
            _insert(self.slot_keys, self.slot_val, k, v)

    def items(self) -> tuple[np.ndarray, np.ndarray]:
        live = self.slot_val >= 0
        return self.slot_keys[live].copy(), self.slot_val[live].copy()

    def audit(self) -> None:
        """Raise AssertionError unless keys are unique and pool indices partition into live/free."""
        keys, vals = self.items()
        assert len({tuple(k) for k in keys}) == len(keys), "duplicate live keys"
        assert len(set(vals.tolist())) == len(vals), "pool index referenced twice"
        free = set(self.free_list)
        assert len(free) == len(self.free_list), "free list has duplicates"
        assert not free & set(vals.tolist()), "free and live sets overlap"
        assert free | set(vals.tolist()) == set(range(self.n_fresh)), "pool indices leaked"
        if len(keys):
            assert np.array_equal(self.lookup(keys), vals), "live key not reachable"


# --- primitives ------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - np.asarray(self.center, dtype=float), axis=-1) - self.radius

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Cuboid:
    pose: Pose
    half_extents: np.ndarray

    def sdf(self, points: np.ndarray) -> np.ndarray:
        local = np.abs((points - self.pose.p) @ self.pose.R)
        q = local - np.asarray(self.half_extents, dtype=float)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        ext = np.abs(self.pose.R) @ np.asarray(self.half_extents, dtype=float)
        return self.pose.p - ext, self.pose.p + ext


# --- the volume ------------------------------------------------------------

_LOCAL = np.stack(np.meshgrid(*[np.arange(BLOCK)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)


class SparseTsdf:
    def __init__(self, config: TsdfConfig | None = None):
        self.config = config or TsdfConfig()
        cap = self.config.capacity
        self.table = BlockHashTable(cap)
        self.depth_sum = np.zeros((cap, BLOCK**3))
        self.depth_wt = np.zeros((cap, BLOCK**3))
        self.geom_sdf = np.full((cap, BLOCK**3), np.inf)
        self.block_keys = np.zeros((cap, 3), dtype=np.int64)

    # geometry helpers
    def voxel_index(self, points: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(points) / self.config.voxel_size).astype(np.int64)

    def block_voxel_centers(self, keys: np.ndarray) -> np.ndarray:
        """Voxel centers (nb, 512, 3) of the given blocks, in local-index order."""
        idx = keys[:, None, :] * BLOCK + _LOCAL[None]
        return (idx + 0.5) * self.config.voxel_size

    @property
    def n_allocated(self) -> int:
        return self.table.n_live

    def live_blocks(self) -> tuple[np.ndarray, np.ndarray]:
        return self.table.items()

    def ensure_blocks(self, keys: np.ndarray) -> tuple[np.ndarray, int]:
        """Pool indices for ``keys`` (unique rows), allocating missing ones."""
        idx = self.table.lookup(keys)
        missing = idx < 0
        if np.any(missing):
            new = self.table.insert_many(keys[missing])
            self.depth_sum[new] = 0.0
            self.depth_wt[new] = 0.0
            self.geom_sdf[new] = np.inf
            self.block_keys[new] = keys[missing]
            idx[missing] = new
        return idx, int(np.count_nonzero(missing))

    def audit(self) -> None:
        self.table.audit()
        assert np.all(self.depth_wt >= 0.0), "negative weight"

    # queries
    def channels(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(depth, geom, allocated) at the voxels containing ``points``; unset channels are NaN."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        vox = self.voxel_index(points)
        keys = np.floor_divide(vox, BLOCK)
        local = vox - keys * BLOCK
        flat = (local[:, 0] * BLOCK + local[:, 1]) * BLOCK + local[:, 2]
        blk = self.table.lookup(keys)
        ok = blk >= 0
        depth = np.full(len(points), np.nan)
        geom = np.full(len(points), np.nan)
        b, f = blk[ok], flat[ok]
        wt = self.depth_wt[b, f]
        with np.errstate(invalid="ignore", divide="ignore"):
            depth[ok] = np.where(wt > 0, self.depth_sum[b, f] / np.where(wt > 0, wt, 1.0), np.nan)
        g = self.geom_sdf[b, f]
        geom[ok] = np.where(np.isfinite(g), g, np.nan)
        return depth, geom, ok

    def query(self, points: np.ndarray) -> np.ndarray:
        """Effective signed distance, NaN where unknown."""
        depth, geom, _ = self.channels(points)
        return np.fmin(depth, geom)

    def effective_values(self) -> tuple[np.ndarray, np.ndarray]:
        """Centers (M, 3) and effective sdf (M,) of every allocated voxel with a known value."""
        keys, idx = self.live_blocks()
        if len(keys) == 0:
            return np.zeros((0, 3)), np.zeros(0)
        wt = self.depth_wt[idx]
        with np.errstate(invalid="ignore", divide="ignore"):
            depth = np.where(wt > 0, self.depth_sum[idx] / np.where(wt > 0, wt, 1.0), np.nan)
        geom = np.where(np.isfinite(self.geom_sdf[idx]), self.geom_sdf[idx], np.nan)
        eff = np.fmin(depth, geom).reshape(-1)
        centers = self.block_voxel_centers(keys).reshape(-1, 3)
        known = ~np.isnan(eff)
        return centers[known], eff[known]


def query_tsdf(tsdf: SparseTsdf, point) -> float | None:
    """Signed distance at one point, or None when unknown."""
    value = tsdf.query(np.asarray(point, dtype=float)[None])[0]
    return None if np.isnan(value) else float(value)


def _valid_depth(frame: DepthFrame) -> np.ndarray:
    d = frame.depth
    return np.isfinite(d) & (d > 0)


def integrate_depth(tsdf: SparseTsdf, frame: DepthFrame) -> int:
    """Fuse one depth image; returns the number of blocks touched."""
    if frame.depth is None:
        raise ValueError("frame carries no depth image")
    cfg = tsdf.config
    v, T = cfg.voxel_size, cfg.truncation
    valid = _valid_depth(frame)
    if not np.any(valid):
        return 0
    rows, cols = np.nonzero(valid)
    z = frame.depth[rows, cols]
    ray = np.stack([(cols - frame.cx) / frame.fx, (rows - frame.cy) / frame.fy, np.ones_like(z)], axis=-1)
    ray_len = np.linalg.norm(ray, axis=-1)
    n_samples = max(3, int(np.ceil(2 * T / (4 * v))) + 1)
    offsets = np.linspace(-T, T, n_samples)
    # points at range (z * |ray| + offset) along each unit ray
    scale = z[:, None] + offsets[None] / ray_len[:, None]
    cam = ray[:, None, :] * scale[..., None]
    world = cam.reshape(-1, 3) @ frame.pose.R.T + frame.pose.p
    keys = np.unique(np.floor_divide(tsdf.voxel_index(world), BLOCK), axis=0)
    blocks, _ = tsdf.ensure_blocks(keys)

    centers = tsdf.block_voxel_centers(keys)
    pc = frame.to_camera(centers)
    zc = pc[..., 2]
    u, r = frame.project(pc)
    inside = (zc > 0) & (u >= 0) & (u < frame.width) & (r >= 0) & (r < frame.height)
    dpix = np.full(zc.shape, np.nan)
    dpix[inside] = frame.depth[r[inside], u[inside]]
    ok = inside & np.isfinite(dpix) & (dpix > 0)
    sdf = dpix - zc
    ok &= sdf >= -T
    sdf = np.clip(np.where(ok, sdf, 0.0), -T, T)
    with np.errstate(divide="ignore"):
        c = (frame.fx * v / zc) * (frame.fy * v / zc)
    w = np.where(ok, np.maximum(c, 1.0), 0.0)
    tsdf.depth_sum[blocks] += w * sdf
    tsdf.depth_wt[blocks] += w
    return len(keys)


def _block_range(tsdf: SparseTsdf, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    bs = tsdf.config.block_size
    a = np.floor(lo / bs).astype(np.int64)
    b = np.floor(hi / bs).astype(np.int64)
    axes = [np.arange(a[i], b[i] + 1) for i in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def stamp_primitive(tsdf: SparseTsdf, shape: Sphere | Cuboid) -> int:
    """Min-write the shape's analytic SDF into the geometry channel; returns blocks allocated.

    Blocks within the truncation band and those inside the shape are written.
    """
    cfg = tsdf.config
    T = cfg.truncation
    lo, hi = shape.bounds()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("shape must be finite")
    keys = _block_range(tsdf, lo - T, hi + T)
    half_diag = np.sqrt(3.0) * 0.5 * cfg.block_size
    centers = (keys + 0.5) * cfg.block_size
    # interior blocks are kept too so sign probes deeper than the band still
    # read the geometry channel
    band = shape.sdf(centers) <= T + half_diag
    existing = tsdf.table.lookup(keys) >= 0
    keys = keys[band | existing]
    if len(keys) == 0:
        return 0
    need = int(np.count_nonzero(tsdf.table.lookup(keys) < 0))
    if need > tsdf.table.available:
        raise PoolExhausted(need, tsdf.table.available)
    blocks, n_new = tsdf.ensure_blocks(keys)
    vals = shape.sdf(tsdf.block_voxel_centers(keys))
    tsdf.geom_sdf[blocks] = np.minimum(tsdf.geom_sdf[blocks], vals)
    return n_new


def in_frustum(frame: DepthFrame, centers: np.ndarray, radius: float, max_range: float = np.inf) -> np.ndarray:
    """Conservative bounding-sphere test against the camera's viewing pyramid."""
    pc = frame.to_camera(centers)
    planes = np.array(
        [
            [1.0, 0.0, frame.cx / frame.fx],
            [-1.0, 0.0, (frame.width - frame.cx) / frame.fx],
            [0.0, 1.0, frame.cy / frame.fy],
            [0.0, -1.0, (frame.height - frame.cy) / frame.fy],
        ]
    )
    planes /= np.linalg.norm(planes, axis=1, keepdims=True)
    ok = pc[:, 2] >= -radius
    ok &= pc[:, 2] <= max_range + radius
    ok &= np.all(pc @ planes.T >= -radius, axis=1)
    return ok


def decay_weights(tsdf: SparseTsdf, camera: DepthFrame | None = None, max_range: float = np.inf) -> None:
    """Time decay on every block and extra frustum decay on blocks the camera sees.

    The accumulated distance is scaled with the weight, so the stored mean is
    unchanged and only its confidence drops.
    """
    keys, idx = tsdf.live_blocks()
    if len(keys) == 0:
        return
    cfg = tsdf.config
    factor = np.full(len(idx), cfg.alpha_time)
    if camera is not None:
        centers = (keys + 0.5) * cfg.block_size
        seen = in_frustum(camera, centers, np.sqrt(3.0) * 0.5 * cfg.block_size, max_range)
        factor[seen] *= cfg.alpha_frustum
    tsdf.depth_wt[idx] *= factor[:, None]
    tsdf.depth_sum[idx] *= factor[:, None]


def recycle_blocks(tsdf: SparseTsdf) -> int:
    keys, idx = tsdf.live_blocks()
    if len(keys) == 0:
        return 0
    light = tsdf.depth_wt[idx].sum(axis=1) < tsdf.config.weight_threshold
    no_geom = ~np.any(np.isfinite(tsdf.geom_sdf[idx]), axis=1)
    drop = light & no_geom
    for k, i in zip(keys[drop], idx[drop]):
        tsdf.table.remove(k)
        tsdf.depth_sum[i] = 0.0
        tsdf.depth_wt[i] = 0.0
        tsdf.geom_sdf[i] = np.inf
    return int(np.count_nonzero(drop))


def render_depth(frame: DepthFrame, sdf, max_range: float = 10.0, tol: float = 1e-6, max_steps: int = 256) -> np.ndarray:
    """Sphere-trace an analytic SDF into a depth image (z along the optical axis)."""
    cols, rows = np.meshgrid(np.arange(frame.width), np.arange(frame.height))
    ray = np.stack([(cols - frame.cx) / frame.fx, (rows - frame.cy) / frame.fy, np.ones(cols.shape)], -1)
    ray = ray.reshape(-1, 3)
    unit = ray / np.linalg.norm(ray, axis=1, keepdims=True)
    dirs = unit @ frame.pose.R.T
    s = np.zeros(len(dirs))
    active = np.ones(len(dirs), dtype=bool)
    hit = np.zeros(len(dirs), dtype=bool)
    for _ in range(max_steps):
        if not np.any(active):
            break
        pts = frame.pose.p + dirs[active] * s[active, None]
        d = sdf(pts)
        idx = np.flatnonzero(active)
        done = d < tol
        hit[idx[done]] = True
        s[idx] += np.where(done, 0.0, d)
        far = s[idx] > max_range
        active[idx[done | far]] = False
    depth = np.where(hit, s * unit[:, 2], 0.0)
    return depth.reshape(frame.height, frame.width)


__all__ = [
    "BLOCK",
    "BlockHashTable",
    "Cuboid",
    "DepthFrame",
    "PoolExhausted",
    "SparseTsdf",
    "Sphere",
    "TsdfConfig",
    "decay_weights",
    "in_frustum",
    "integrate_depth",
    "query_tsdf",
    "recycle_blocks",
    "render_depth",
    "stamp_primitive",
]
