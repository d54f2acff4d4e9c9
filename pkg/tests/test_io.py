import json

import numpy as np
import pytest

from ksmotion.esdf import EsdfConfig, propagate
from ksmotion.io import (
    DEPTH_MAGIC, ESDF_MAGIC, FormatError, load_scenario, pose_from_doc, pose_to_doc, read_depth, read_esdf,
    write_depth, write_esdf,
)
from ksmotion.spatial import Pose
from ksmotion.tsdf import DepthFrame


def test_pose_doc_round_trip(rng):
    for _ in range(20):
        rpy = rng.uniform(-1.5, 1.5, 3)
        pose = Pose.from_xyz_rpy(rng.normal(size=3), rpy)
        back = pose_from_doc(pose_to_doc(pose))
        np.testing.assert_allclose(back.R, pose.R, atol=1e-12)
        np.testing.assert_allclose(back.p, pose.p, atol=0)


def test_depth_round_trip(tmp_path, rng):
    depth = rng.uniform(0.2, 3.0, (4, 6)).astype(np.float32).astype(float)
    depth[1, 2] = np.nan
    frame = DepthFrame(6, 4, 50.0, 51.0, 2.5, 1.5, Pose.from_xyz_rpy([0.1, 0.2, 0.3], [0.0, 0.4, 0.0]), depth)
    write_depth(tmp_path / "f.bin", frame)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw.startswith(DEPTH_MAGIC)
    back = read_depth(tmp_path / "f.bin")
    np.testing.assert_array_equal(back.depth, depth)
    assert (back.width, back.height, back.fx, back.fy, back.cx, back.cy) == (6, 4, 50.0, 51.0, 2.5, 1.5)
    np.testing.assert_allclose(back.pose.R, frame.pose.R, atol=1e-12)


def test_esdf_round_trip(tmp_path, rng):
    cfg = EsdfConfig((0.1, -0.2, 0.0), (3, 4, 5), 0.05)
    seeds = rng.random(cfg.dims) < 0.2
    seeds[0, 0, 0] = True
    field = propagate(seeds, cfg)
    write_esdf(tmp_path / "e.bin", field)
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw[:7] == ESDF_MAGIC == b"KSESDF1"
    header_len = int.from_bytes(raw[7:11], "little")
    assert json.loads(raw[11 : 11 + header_len])["dims"] == [3, 4, 5]
    assert len(raw) == 11 + header_len + 4 * 60
    back_cfg, dist = read_esdf(tmp_path / "e.bin")
    assert back_cfg == cfg
    np.testing.assert_array_equal(dist, field.distance.astype(np.float32))


def test_bad_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTMAGIC....")
    with pytest.raises(FormatError, match="magic"):
        read_depth(tmp_path / "x.bin")
    (tmp_path / "t.bin").write_bytes(DEPTH_MAGIC + b"\x01")
    with pytest.raises(FormatError):
        read_depth(tmp_path / "t.bin")
    header = json.dumps({"width": 2, "height": 2, "fx": 1, "fy": 1, "cx": 0, "cy": 0}).encode()
    (tmp_path / "s.bin").write_bytes(DEPTH_MAGIC + len(header).to_bytes(4, "little") + header + b"\0" * 12)
    with pytest.raises(FormatError, match="expected 4"):
        read_depth(tmp_path / "s.bin")


def test_scenario_parsing(tmp_path):
    (tmp_path / "robot.json").write_text("{}")
    doc = {
        "robot": "robot.json",
        "world": {"cuboids": [{"xyz": [0, 0, 0.1], "half_extents": [0.1, 0.1, 0.1]}],
                  "spheres": [{"center": [0.3, 0, 0], "radius": 0.05}],
                  "reference": {"spheres": [{"center": [0, 0, 0], "radius": 0.2}]}},
        "esdf": {"origin": [-0.5, -0.5, -0.5], "dims": [50, 50, 50], "voxel_size": 0.02},
        "problems": [{"start": [0.0, 0.1], "goals": [{"link": "tool", "xyz": [0.5, 0, 0], "weight_rot": 0.0}],
                      "payload": {"link": "tool", "mass": 2.0, "inertia": [1, 2, 3, 0, 0, 0]},
                      "enable_dynamics": False, "segments": 6}],
        "seed": 3,
    }
    (tmp_path / "s.json").write_text(json.dumps(doc))
    sc = load_scenario(tmp_path / "s.json")
    assert len(sc.cuboids) == 1 and len(sc.spheres) == 1 and len(sc.reference) == 1
    assert sc.seed == 3 and sc.esdf.dims == (50, 50, 50) and sc.has_world
    p = sc.problems[0]
    assert not p.enable_dynamics and p.segments == 6 and p.goals[0].weight_rot == 0.0
    np.testing.assert_array_equal(np.array(p.payload.inertia), np.diag([1.0, 2.0, 3.0]))


def test_scenario_errors(tmp_path):
    (tmp_path / "robot.json").write_text("{}")
    cases = {
        "missing_robot.json": {"robot": "nowhere.json"},
        "missing_frame.json": {"robot": "robot.json", "world": {"depth_frames": ["f.bin"]},
                               "esdf": {"origin": [0, 0, 0], "dims": [1, 1, 1]}},
        "no_box.json": {"robot": "robot.json", "world": {"spheres": [{"center": [0, 0, 0], "radius": 0.1}]}},
        "no_robot_key.json": {"problems": []},
    }
    for name, doc in cases.items():
        (tmp_path / name).write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            load_scenario(tmp_path / name)
    with pytest.raises(FormatError):
        load_scenario(tmp_path / "absent.json")
