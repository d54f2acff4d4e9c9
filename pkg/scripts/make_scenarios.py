"""Write robot descriptions, depth frames and scenario files for the CLI.

    python scripts/make_scenarios.py -o scenarios
"""

import argparse
import json
from pathlib import Path

import numpy as np

from ksmotion import suites
from ksmotion.fixtures import planar_arm_doc
from ksmotion.io import pose_to_doc, write_depth


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, default=float) + "\n")


def goal_doc(goal) -> dict:
    return {"link": goal.link, **pose_to_doc(goal.target), "position_tol": goal.position_tol,
            "orientation_tol": goal.orientation_tol, "weight_pos": goal.weight_pos, "weight_rot": goal.weight_rot}


def cuboid_doc(c) -> dict:
    return {**pose_to_doc(c.pose), "half_extents": [float(h) for h in c.half_extents]}


def box_doc(lo, hi, voxel) -> dict:
    lo, hi = np.asarray(lo), np.asarray(hi)
    dims = np.ceil((hi - lo) / voxel - 1e-9).astype(int)
    return {"origin": lo.tolist(), "dims": dims.tolist(), "voxel_size": voxel}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", default="scenarios")
    ap.add_argument("--problems", type=int, default=3, help="problems per planning scenario")
    args = ap.parse_args()
    out = Path(args.out)
    (out / "robots").mkdir(parents=True, exist_ok=True)
    (out / "frames").mkdir(exist_ok=True)

    payload_doc = planar_arm_doc([0.4, 0.3], masses=[1.0, 1.0], radius=0.03, axis=(0, 1, 0),
                                 position_limit=[np.pi, 2.8], torque=[18.0, 15.0])
    arm3_doc = planar_arm_doc([0.4, 0.3, 0.2], radius=0.03, position_limit=[np.pi, 2.8, 2.8],
                              velocity=3.0, acceleration=20.0)
    _dump(out / "robots/payload_arm.json", payload_doc)
    _dump(out / "robots/arm3.json", arm3_doc)

    model = suites.payload_arm()
    pay = suites.PAYLOAD
    problems = [{
        "start": p.start.tolist(),
        "goals": [goal_doc(p.goal)],
        "payload": {"link": pay.link, "mass": pay.mass, "com": list(pay.com), "inertia": [list(r) for r in pay.inertia]},
        "segments": 8, "dt_u": 0.4,
    } for p in suites.payload_suite(model, args.problems)]
    _dump(out / "payload.json", {"robot": "robots/payload_arm.json", "problems": problems})
    _dump(out / "empty.json", {"robot": "robots/payload_arm.json", "problems": []})

    model = suites.obstacle_arm()
    for i, p in enumerate(suites.obstacle_suite(model, args.problems)):
        _dump(out / f"obstacle_{i:02d}.json", {
            "robot": "robots/arm3.json",
            "world": {"cuboids": [cuboid_doc(c) for c in p.obstacles]},
            "esdf": box_doc(*suites.OBSTACLE_BOX, 0.02),
            "problems": [{"start": p.start.tolist(), "goals": [goal_doc(p.goal)], "enable_dynamics": False}],
        })

    shapes = suites.room_shapes()
    names = []
    for k, frame in enumerate(suites.room_frames(shapes)):
        name = f"frames/room_{k:02d}.bin"
        write_depth(out / name, frame)
        names.append(name)
    _dump(out / "room.json", {
        "robot": "robots/arm3.json",
        "world": {"depth_frames": names, "tsdf_voxel": 0.005,
                  "reference": {"cuboids": [cuboid_doc(c) for c in shapes]}},
        "esdf": box_doc(*suites.ROOM_BOX, 0.01),
    })
    # sphere scenes at ESDF/TSDF voxel ratios 1 and 4 for the seeding comparison
    s = suites.sphere_fixture()
    for name, tsdf_voxel, esdf_voxel in (("sphere.json", 0.02, 0.02), ("sphere_r4.json", 0.01, 0.04)):
        _dump(out / name, {
            "robot": "robots/arm3.json",
            "world": {"spheres": [{"center": s.center.tolist(), "radius": s.radius}], "tsdf_voxel": tsdf_voxel},
            "esdf": box_doc([-0.32] * 3, [0.32] * 3, esdf_voxel),
        })
    print(f"wrote scenarios to {out}")


if __name__ == "__main__":
    main()
