"""Binary depth-frame and ESDF files, and the JSON scenario format used by the CLI.

Binary layout: magic bytes, a little-endian uint32 header length, the UTF-8
JSON header, then row-major little-endian float32 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .esdf import DenseEsdf, EsdfConfig
from .ik import GoalSpec
from .spatial import Pose
from .trajopt import CostWeights, Payload
from .tsdf import Cuboid, DepthFrame, Sphere

DEPTH_MAGIC = b"KSDEPTH1"
ESDF_MAGIC = b"KSESDF1"


class FormatError(ValueError):
    pass


def pose_to_doc(pose: Pose) -> dict:
    return {"xyz": [float(x) for x in pose.p], "rpy": [float(x) for x in Rotation.from_matrix(pose.R).as_euler("xyz")]}


def pose_from_doc(doc: dict | None) -> Pose:
    doc = doc or {}
    return Pose.from_xyz_rpy(doc.get("xyz", [0.0, 0.0, 0.0]), doc.get("rpy", [0.0, 0.0, 0.0]))


def _write_blob(path, magic: bytes, header: dict, data: np.ndarray) -> None:
    head = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_blob(path, magic: bytes) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    off = len(magic)
    if len(raw) < off + 4:
        raise FormatError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", raw[off : off + 4])
    try:
        header = json.loads(raw[off + 4 : off + 4 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    body = raw[off + 4 + n :]
    if len(body) % 4:
        raise FormatError(f"{path}: payload is not a whole number of float32 values")
    return header, np.frombuffer(body, dtype="<f4").astype(float)


def write_depth(path, frame: DepthFrame) -> None:
    header = {
        "width": frame.width, "height": frame.height,
        "fx": frame.fx, "fy": frame.fy, "cx": frame.cx, "cy": frame.cy,
        "pose": pose_to_doc(frame.pose),
    }
    _write_blob(path, DEPTH_MAGIC, header, np.asarray(frame.depth).reshape(-1))


def read_depth(path) -> DepthFrame:
    h, data = _read_blob(path, DEPTH_MAGIC)
    try:
        w, hgt = int(h["width"]), int(h["height"])
        if data.size != w * hgt:
            raise FormatError(f"{path}: expected {w * hgt} depths, found {data.size}")
        return DepthFrame(w, hgt, float(h["fx"]), float(h["fy"]), float(h["cx"]), float(h["cy"]),
                          pose_from_doc(h.get("pose")), data.reshape(hgt, w))
    except KeyError as exc:
        raise FormatError(f"{path}: header missing {exc}") from exc


def write_esdf(path, esdf: DenseEsdf) -> None:
    cfg = esdf.config
    header = {"origin": list(cfg.origin), "dims": list(cfg.dims), "voxel_size": cfg.voxel_size}
    _write_blob(path, ESDF_MAGIC, header, esdf.distance.reshape(-1))


def read_esdf(path) -> tuple[EsdfConfig, np.ndarray]:
    """Config and the (D, H, W) float distances stored in an export."""
    h, data = _read_blob(path, ESDF_MAGIC)
    cfg = EsdfConfig(tuple(h["origin"]), tuple(h["dims"]), float(h["voxel_size"]))
    if data.size != int(np.prod(cfg.dims)):
        raise FormatError(f"{path}: expected {int(np.prod(cfg.dims))} distances, found {data.size}")
    return cfg, data.reshape(cfg.dims)


# --- scenarios -------------------------------------------------------------


@dataclass
class ProblemSpec:
    start: np.ndarray
    goals: list[GoalSpec]
    start_velocity: np.ndarray | None = None
    start_acceleration: np.ndarray | None = None
    weights: CostWeights = field(default_factory=CostWeights)
    payload: Payload | None = None
    enable_dynamics: bool = True
    segments: int = 8
    dt_u: float = 0.2


@dataclass
class Scenario:
    robot: Path
    cuboids: list[Cuboid]
    spheres: list[Sphere]
    depth_frames: list[Path]
    esdf: EsdfConfig | None
    tsdf_voxel: float
    problems: list[ProblemSpec]
    seed: int = 0
    reference: list = field(default_factory=list)

    @property
    def primitives(self) -> list:
        return [*self.cuboids, *self.spheres]

    @property
    def has_world(self) -> bool:
        return bool(self.cuboids or self.spheres or self.depth_frames)


def _goal(doc: dict) -> GoalSpec:
    return GoalSpec(
        link=doc["link"],
        target=pose_from_doc(doc),
        position_tol=float(doc.get("position_tol", 5e-3)),
        orientation_tol=float(doc.get("orientation_tol", 0.05)),
        weight_pos=float(doc.get("weight_pos", 1.0)),
        weight_rot=float(doc.get("weight_rot", 0.5)),
    )


def _problem(doc: dict) -> ProblemSpec:
    pay = doc.get("payload")
    payload = None
    if pay is not None:
        inertia = np.asarray(pay.get("inertia", [0.0] * 6), dtype=float)
        if inertia.shape == (6,):
            ixx, iyy, izz, ixy, ixz, iyz = inertia
            inertia = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
        payload = Payload(pay["link"], float(pay["mass"]), tuple(pay.get("com", [0.0, 0.0, 0.0])),
                          tuple(map(tuple, inertia)))
    opt = lambda k: None if doc.get(k) is None else np.asarray(doc[k], dtype=float)  # noqa: E731
    return ProblemSpec(
        start=np.asarray(doc["start"], dtype=float),
        goals=[_goal(g) for g in doc.get("goals", [])],
        start_velocity=opt("start_velocity"),
        start_acceleration=opt("start_acceleration"),
        weights=CostWeights(**doc.get("weights", {})),
        payload=payload,
        enable_dynamics=bool(doc.get("enable_dynamics", True)),
        segments=int(doc.get("segments", 8)),
        dt_u=float(doc.get("dt_u", 0.2)),
    )


def _shapes(doc: dict) -> tuple[list[Cuboid], list[Sphere]]:
    cuboids = [Cuboid(pose_from_doc(c), np.asarray(c["half_extents"], dtype=float)) for c in doc.get("cuboids", [])]
    spheres = [Sphere(np.asarray(s["center"], dtype=float), float(s["radius"])) for s in doc.get("spheres", [])]
    return cuboids, spheres


def load_scenario(path) -> Scenario:
    """Parse a scenario JSON file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read scenario {path}: {exc}") from exc
    base = path.parent
    try:
        robot = base / doc["robot"]
        world = doc.get("world", {})
        cuboids, spheres = _shapes(world)
        # ground-truth geometry used only for scoring depth-built maps
        reference = [*sum(_shapes(world.get("reference", {})), [])]
        frames = [base / f for f in world.get("depth_frames", [])]
        e = doc.get("esdf")
        esdf = None
        if e is not None:
            esdf = EsdfConfig(tuple(e["origin"]), tuple(e["dims"]), float(e.get("voxel_size", 0.02)),
                              e.get("seeding", "gather"))
        problems = [_problem(p) for p in doc.get("problems", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid scenario {path}: {exc!r}") from exc
    for p in [robot, *frames]:
        if not p.exists():
            raise FormatError(f"scenario {path} references missing file {p}")
    if (cuboids or spheres or frames) and esdf is None:
        raise FormatError(f"scenario {path} has world geometry but no esdf box")
    return Scenario(robot, cuboids, spheres, frames, esdf, float(world.get("tsdf_voxel", 0.01)), problems,
                    int(doc.get("seed", 0)), reference)


__all__ = [
    "DEPTH_MAGIC",
    "ESDF_MAGIC",
    "FormatError",
    "ProblemSpec",
    "Scenario",
    "load_scenario",
    "pose_from_doc",
    "pose_to_doc",
    "read_depth",
    "read_esdf",
    "write_depth",
    "write_esdf",
]
