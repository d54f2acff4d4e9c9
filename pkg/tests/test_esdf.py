import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import distance_transform_edt

from ksmotion.esdf import (
    EsdfConfig, build_esdf, collision_recall, propagate, query, recover_signs, seed, seed_gather, seed_scatter,
)
from ksmotion.spatial import Pose
from ksmotion.tsdf import DepthFrame, SparseTsdf, Sphere, TsdfConfig, integrate_depth, stamp_primitive


def brute_force(seeds):
    """Squared distance from every cell to its nearest seed, by exhaustive search."""
    sites = np.argwhere(seeds)
    cells = np.indices(seeds.shape).reshape(3, -1).T
    d2 = ((cells[:, None, :] - sites[None]) ** 2).sum(-1)
    return d2.min(1).reshape(seeds.shape)


def _grid(shape, voxel=0.1):
    return EsdfConfig((0.0, 0.0, 0.0), shape, voxel)


def test_single_seed():
    seeds = np.zeros((9, 9, 9), dtype=bool)
    seeds[4, 4, 4] = True
    e = propagate(seeds, _grid((9, 9, 9)))
    cells = np.indices((9, 9, 9)).transpose(1, 2, 3, 0)
    np.testing.assert_array_equal(e.sq_dist, ((cells - 4) ** 2).sum(-1))
    np.testing.assert_array_equal(e.site, np.broadcast_to([4, 4, 4], (9, 9, 9, 3)))


def test_random_seeds_match_brute_force(rng):
    seeds = np.zeros((32, 32, 32), dtype=bool)
    seeds[tuple(rng.integers(0, 32, (3, 100)))] = True
    e = propagate(seeds, _grid((32, 32, 32)))
    np.testing.assert_array_equal(e.sq_dist, brute_force(seeds))
    # every assigned site is a seed at exactly the stored distance
    site = e.site.reshape(-1, 3)
    assert np.all(seeds[tuple(site.T)])
    cells = np.indices(seeds.shape).reshape(3, -1).T
    np.testing.assert_array_equal(((cells - site) ** 2).sum(1), e.sq_dist.reshape(-1))
    np.testing.assert_allclose(e.distance, np.sqrt(e.sq_dist) * 0.1, rtol=1e-12)


def test_matches_scipy_transform(rng):
    seeds = rng.random((20, 17, 23)) < 0.01
    e = propagate(seeds, _grid(seeds.shape))
    reference = distance_transform_edt(~seeds)
    np.testing.assert_allclose(np.sqrt(e.sq_dist), reference, atol=1e-12)


def test_tie_is_deterministic():
    seeds = np.zeros((7, 1, 1), dtype=bool)
    seeds[1, 0, 0] = seeds[5, 0, 0] = True
    a = propagate(seeds, _grid((7, 1, 1)))
    b = propagate(seeds.copy(), _grid((7, 1, 1)))
    assert a.sq_dist[3, 0, 0] == 4
    np.testing.assert_array_equal(a.site, b.site)
    assert tuple(a.site[3, 0, 0]) in {(1, 0, 0), (5, 0, 0)}


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9)), st.integers(0, 2**32 - 1),
       st.integers(1, 12))
def test_transform_is_exact(shape, seed_value, n_seeds):
    r = np.random.default_rng(seed_value)
    seeds = np.zeros(shape, dtype=bool)
    seeds[tuple(r.integers(0, shape, (n_seeds, 3)).T)] = True
    np.testing.assert_array_equal(propagate(seeds, _grid(shape)).sq_dist, brute_force(seeds))


def test_empty_volume():
    tsdf = SparseTsdf(TsdfConfig(voxel_size=0.02))
    cfg = EsdfConfig.covering([-0.2] * 3, [0.2] * 3, 0.02)
    for fn in (seed_scatter, seed_gather):
        assert not fn(tsdf, cfg).any()
    e = build_esdf(tsdf, cfg)
    assert e.empty and np.all(np.isinf(query(e, np.zeros((1, 3)))[0]))


def _sphere_tsdf(radius=0.2, voxel=0.01):
    tsdf = SparseTsdf(TsdfConfig(voxel_size=voxel, capacity=1 << 14))
    stamp_primitive(tsdf, Sphere(np.array([0.013, -0.007, 0.004]), radius))
    return tsdf


def test_scatter_shell_is_thin_and_gather_thicker():
    tsdf = _sphere_tsdf()
    cfg = EsdfConfig.covering([-0.3] * 3, [0.3] * 3, 0.01)
    s, g = seed_scatter(tsdf, cfg), seed_gather(tsdf, cfg)
    centers = cfg.centers()
    r = np.linalg.norm(centers - [0.013, -0.007, 0.004], axis=-1) - 0.2
    assert np.max(np.abs(r[s])) <= 0.01
    # shell thickness: seeded cells per unit area, in voxels
    assert np.max(np.abs(r[g])) <= 0.02
    assert np.all(g[s])
    assert 1.3 < g.sum() / s.sum() < 1.9


def test_seeds_clip_to_box():
    tsdf = _sphere_tsdf()
    cfg = EsdfConfig((0.0, 0.0, 0.0), (10, 10, 10), 0.01)
    for fn in (seed_scatter, seed_gather):
        assert not fn(tsdf, cfg).any()
    far = EsdfConfig((5.0, 5.0, 5.0), (4, 4, 4), 0.01)
    assert not seed_gather(tsdf, far).any()


@pytest.mark.parametrize("voxel", [0.01, 0.02])
def test_sphere_signs_and_accuracy(rng, voxel):
    tsdf = _sphere_tsdf()
    center = np.array([0.013, -0.007, 0.004])
    p = center + rng.uniform(-0.28, 0.28, (40_000, 3))
    p = p[np.abs(np.linalg.norm(p - center, axis=1) - 0.2) < 0.06][:10_000]
    truth = np.linalg.norm(p - center, axis=1) - 0.2
    # the thin scatter band meets one voxel; gather's thicker band shifts sites off the surface
    for mode, bound, inner_bound in (("scatter", voxel, 1.5 * voxel), ("gather", 2 * voxel, 2 * voxel)):
        cfg = EsdfConfig.covering([-0.32] * 3, [0.32] * 3, voxel, mode)
        e = build_esdf(tsdf, cfg)
        r = np.linalg.norm(cfg.centers() - center, axis=-1)
        inner = r < 0.2 - voxel
        assert np.all(e.distance[inner] <= 0)
        np.testing.assert_array_less(np.abs(e.distance[inner] + (0.2 - r[inner])), inner_bound)
        assert np.abs(query(e, p)[0] - truth).max() <= bound


def test_depth_wall_back_side_is_positive():
    tsdf = SparseTsdf(TsdfConfig(voxel_size=0.01))
    depth = np.full((40, 40), 0.5)
    integrate_depth(tsdf, DepthFrame(40, 40, 60.0, 60.0, 19.5, 19.5, Pose.identity(), depth))
    cfg = EsdfConfig.covering([-0.1, -0.1, 0.3], [0.1, 0.1, 0.7], 0.01)
    e = build_esdf(tsdf, cfg)
    z = cfg.origin[2] + (np.arange(cfg.dims[2]) + 0.5) * 0.01
    column = e.distance[10, 10]
    behind = z > 0.5 + tsdf.config.truncation + 0.01
    assert np.all(column[behind] > 0)
    assert np.all(column[(z < 0.5) & (z > 0.35)] >= 0)


def test_unobserved_default_positive():
    tsdf = SparseTsdf(TsdfConfig(voxel_size=0.01))
    cfg = EsdfConfig((0.0, 0.0, 0.0), (8, 8, 8), 0.01)
    seeds = np.zeros(cfg.dims, dtype=bool)
    seeds[0, 0, 0] = True
    e = recover_signs(propagate(seeds, cfg), tsdf)
    assert np.all(e.distance >= 0)


def test_query_interpolation(rng):
    cfg = EsdfConfig((0.0, 0.0, 0.0), (6, 5, 4), 0.1)
    seeds = rng.random(cfg.dims) < 0.1
    seeds[0, 0, 0] = True
    e = propagate(seeds, cfg)
    c = cfg.centers()
    val, _, out = query(e, c.reshape(-1, 3))
    np.testing.assert_allclose(val, e.distance.reshape(-1), atol=1e-12)
    assert not out.any()
    mid = 0.5 * (c[1, 2, 2] + c[2, 2, 2])
    assert query(e, mid[None])[0][0] == pytest.approx(0.5 * (e.distance[1, 2, 2] + e.distance[2, 2, 2]))
    assert query(e, np.array([[-1.0, 0.2, 0.2]]))[2][0]


def test_query_gradient_matches_fd(rng):
    tsdf = _sphere_tsdf()
    e = build_esdf(tsdf, EsdfConfig.covering([-0.3] * 3, [0.3] * 3, 0.02))
    p = rng.uniform(-0.25, 0.25, (50, 3))
    _, grad, _ = query(e, p)
    h = 1e-6
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h
        fd = (query(e, p + dp)[0] - query(e, p - dp)[0]) / (2 * h)
        # skip points sitting on a cell boundary where the trilinear slope jumps
        g = (p[:, k] - e.config.origin[k]) / e.config.voxel_size - 0.5
        smooth = np.abs(g - np.round(g)) > 1e-3
        np.testing.assert_allclose(grad[smooth, k], fd[smooth], atol=1e-5)


def test_collision_recall_definition():
    cfg = EsdfConfig((0.0, 0.0, 0.0), (4, 1, 1), 1.0)
    seeds = np.zeros(cfg.dims, dtype=bool)
    seeds[0] = True
    e = propagate(seeds, cfg)
    truth = lambda p: p[:, 0] - 0.5  # noqa: E731
    pts = np.array([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5], [3.5, 0.5, 0.5]])
    rec, n = collision_recall(e, truth, pts, 1.2)
    assert n == 2 and rec == 1.0
    rec, n = collision_recall(e, truth, pts[2:], 1.2)
    assert n == 0 and rec == 1.0


def test_config_validation():
    for kw in ({"dims": (0, 1, 1)}, {"voxel_size": 0.0}, {"seeding": "both"}, {"origin": (np.nan, 0, 0)}):
        with pytest.raises(ValueError):
            EsdfConfig(**kw)
    with pytest.raises(ValueError):
        propagate(np.zeros((2, 2, 2), dtype=bool), EsdfConfig(dims=(3, 3, 3)))
    assert seed(SparseTsdf(), EsdfConfig(dims=(2, 2, 2))).shape == (2, 2, 2)
