import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ksmotion.cli import brute_force_sq_dist, main
from ksmotion.fixtures import joint, link, mimic_gripper_doc, planar_arm_doc

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def scenarios(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenarios")
    subprocess.run([sys.executable, str(ROOT / "scripts/make_scenarios.py"), "-o", str(out), "--problems", "1"],
                   check=True, capture_output=True)
    return out


def read_outputs(folder: Path) -> dict:
    """Parse every emitted JSON and CSV file; fails on anything malformed."""
    parsed = {}
    for f in sorted(folder.iterdir()):
        if f.suffix == ".json":
            parsed[f.name] = json.loads(f.read_text())
        elif f.suffix == ".csv":
            with open(f, newline="") as fh:
                rows = list(csv.DictReader(fh))
            assert rows, f
            parsed[f.name] = rows
    return parsed


def _write(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc))
    return path


def test_robot_validate(tmp_path, capsys):
    assert main(["robot", "validate", str(_write(tmp_path / "arm.json", planar_arm_doc([0.4, 0.3])))]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 7


def test_robot_validate_cycle(tmp_path, capsys):
    doc = {"links": [link("root"), link("a"), link("b"), link("c")],
           "joints": [joint("ra", "root", "a"), joint("bc", "b", "c"), joint("cb", "c", "b")]}
    assert main(["robot", "validate", str(_write(tmp_path / "cyc.json", doc))]) == 1
    out = capsys.readouterr().out
    assert "cycle" in out and ("b -> c" in out or "c -> b" in out)


def test_robot_validate_mimic_chain(tmp_path, capsys):
    doc = mimic_gripper_doc()
    doc["links"].append(link("extra", 0.1, (0, 0, 0), (1e-4, 1e-4, 1e-4, 0, 0, 0)))
    doc["joints"].append(joint("extra_joint", "finger_r", "extra", kind="prismatic", axis=(0, 1, 0),
                               mimic={"source": "finger_r_joint", "multiplier": 1.0, "offset": 0.0}))
    assert main(["robot", "validate", str(_write(tmp_path / "mm.json", doc))]) == 1
    assert "extra_joint" in capsys.readouterr().out


def test_usage_errors(tmp_path, scenarios):
    assert main(["robot", "validate", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["plan", str(tmp_path / "broken.json"), "-o", str(tmp_path / "o")]) == 2
    doc = json.loads((scenarios / "empty.json").read_text())
    doc["robot"] = "robots/nowhere.json"
    assert main(["plan", str(_write(scenarios / "bad_robot.json", doc)), "-o", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["teleport"])
    assert exc.value.code == 2


def test_plan_empty(scenarios, tmp_path):
    assert main(["plan", str(scenarios / "empty.json"), "-o", str(tmp_path), "--json"]) == 0
    summary = read_outputs(tmp_path)["summary.json"]
    assert summary["problems"] == 0 and summary["feasible"] == 0


def test_plan_payload_contrast(scenarios, tmp_path):
    on, off = tmp_path / "on", tmp_path / "off"
    assert main(["plan", str(scenarios / "payload.json"), "-o", str(on)]) == 0
    assert main(["plan", str(scenarios / "payload.json"), "-o", str(off), "--no-dynamics"]) == 1
    a, b = read_outputs(on), read_outputs(off)
    assert a["summary.json"]["dynamics_ok"] == 1 and a["metrics_000.json"]["dynamics_ok"]
    m = b["metrics_000.json"]
    assert m["kinematic_ok"] and not m["dynamics_ok"] and m["violations"]["torque"]["worst"] > 0
    assert b["summary.json"]["dynamics_ok"] == 0
    assert set(a["trajectory_000.csv"][0]) >= {"t", "q0", "qd1", "qdd0", "tau1"}
    assert "tau0" not in b["trajectory_000.csv"][0]
    for key in ("feasible", "kinematic_ok", "dynamics_ok", "cost_breakdown", "solve_time", "energy"):
        assert key in m


def test_plan_obstacle_is_deterministic(scenarios, tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / str(k)
        assert main(["plan", str(scenarios / "obstacle_00.json"), "-o", str(out)]) == 0
        runs.append(read_outputs(out))
    assert runs[0]["trajectory_000.csv"] == runs[1]["trajectory_000.csv"]
    assert runs[0]["summary.json"]["rng_seed"] == 0


def test_ik_command(scenarios, tmp_path):
    assert main(["ik", str(scenarios / "obstacle_00.json"), "-o", str(tmp_path), "--seeds", "8"]) == 0
    out = read_outputs(tmp_path)
    assert out["summary.json"]["solved"] == 1
    best = out["ik_000.json"]["results"][0]
    assert best["converged"] and best["scene_collision_free"]


def test_esdf_bench_sphere_exact(scenarios, tmp_path, capsys):
    args = ["esdf-bench", str(scenarios / "sphere.json"), "-o", str(tmp_path), "--brute-force",
            "--warmup", "0", "--repeats", "1"]
    assert main(args) == 0
    out = read_outputs(tmp_path)
    for row in out["recall.csv"]:
        assert float(row["recall"]) == 1.0
        assert int(row["max_sq_dist_diff_voxels"]) == 0
    stages = {(r["seeding"], r["stage"]) for r in out["timings.csv"]}
    assert len(stages) == 6
    assert out["summary.json"]["allocated_blocks"] > 0
    assert "recall=1.0000" in capsys.readouterr().out


def test_esdf_bench_ordering_at_ratio_four(scenarios, tmp_path):
    assert main(["esdf-bench", str(scenarios / "sphere_r4.json"), "-o", str(tmp_path), "--warmup", "0",
                 "--repeats", "1"]) == 0
    rows = {r["seeding"]: float(r["recall"]) for r in read_outputs(tmp_path)["recall.csv"]}
    assert rows["scatter"] >= rows["gather"]


def test_esdf_bench_empty_scene(scenarios, tmp_path, capsys):
    doc = {"robot": "robots/arm3.json", "esdf": {"origin": [0, 0, 0], "dims": [8, 8, 8], "voxel_size": 0.02}}
    path = _write(scenarios / "nothing.json", doc)
    assert main(["esdf-bench", str(path), "-o", str(tmp_path), "--warmup", "0", "--repeats", "1"]) == 0
    assert "no seeds" in capsys.readouterr().out
    out = read_outputs(tmp_path)
    assert out["summary.json"]["empty"] and all(r["note"] == "no seeds" for r in out["recall.csv"])


def test_brute_force_helper(rng):
    seeds = rng.random((6, 7, 5)) < 0.05
    seeds[0, 0, 0] = True
    d = brute_force_sq_dist(seeds, chunk=13)
    cells = np.indices(seeds.shape).reshape(3, -1).T
    sites = np.argwhere(seeds)
    expected = np.array([min(int(((c - s) ** 2).sum()) for s in sites) for c in cells]).reshape(seeds.shape)
    np.testing.assert_array_equal(d, expected)
