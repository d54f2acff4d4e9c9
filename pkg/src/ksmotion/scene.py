"""Build signed ESDF worlds from analytic primitives or depth frames."""

from __future__ import annotations

import numpy as np

from .esdf import DenseEsdf, EsdfConfig, build_esdf
from .spatial import Pose
from .tsdf import Cuboid, DepthFrame, SparseTsdf, Sphere, TsdfConfig, integrate_depth, stamp_primitive


def cuboid(center, half_extents, R=None) -> Cuboid:
    return Cuboid(Pose(np.eye(3) if R is None else np.asarray(R, float), np.asarray(center, float)),
                  np.asarray(half_extents, float))


def fuse(shapes=(), frames=(), tsdf_voxel: float = 0.01, capacity: int = 4096) -> SparseTsdf:
    tsdf = SparseTsdf(TsdfConfig(voxel_size=tsdf_voxel, capacity=capacity))
    for s in shapes:
        stamp_primitive(tsdf, s)
    for f in frames:
        integrate_depth(tsdf, f)
    return tsdf


def world_from_primitives(
    shapes: list[Sphere | Cuboid],
    lo,
    hi,
    esdf_voxel: float = 0.02,
    tsdf_voxel: float = 0.01,
    seeding: str = "gather",
) -> DenseEsdf:
    """Stamp ``shapes`` into a TSDF, then build the signed ESDF over the box [lo, hi]."""
    tsdf = fuse(shapes, tsdf_voxel=tsdf_voxel, capacity=1 << 14)
    return build_esdf(tsdf, EsdfConfig.covering(lo, hi, esdf_voxel, seeding))


__all__ = ["cuboid", "fuse", "world_from_primitives"]
