"""Small robot descriptions used by the test-suite, scripts and CLI demos.

Every builder returns a JSON-compatible document so fixtures go through the
same ``load_robot`` path as user files.
"""

from __future__ import annotations

import numpy as np

from .robot_model import RobotModel, load_robot


def link(name, mass=0.0, com=(0, 0, 0), inertia=(0, 0, 0, 0, 0, 0), spheres=()):
    return {
        "name": name,
        "mass": float(mass),
        "com": [float(c) for c in com],
        "inertia": [float(i) for i in inertia],
        "spheres": [{"center": [float(c) for c in ctr], "radius": float(r)} for ctr, r in spheres],
    }


def joint(name, parent, child, kind="revolute", axis=(0, 0, 1), xyz=(0, 0, 0), rpy=(0, 0, 0),
          limits=None, mimic=None):
    out = {
        "name": name,
        "kind": kind,
        "parent": parent,
        "child": child,
        "axis": [float(a) for a in axis],
        "origin": {"xyz": [float(v) for v in xyz], "rpy": [float(v) for v in rpy]},
        "limits": limits or {},
    }
    if mimic is not None:
        out["mimic"] = mimic
    return out


def rod(length, mass, axis="x"):
    """Inertia (ixx, iyy, izz, 0, 0, 0) of a thin rod about its center."""
    i = mass * length**2 / 12.0
    small = 1e-4 * mass
    if axis == "x":
        return (small, i, i, 0, 0, 0)
    return (i, i, small, 0, 0, 0)


def rod_spheres(length, radius, count, start=0.0):
    xs = np.linspace(start, length, count)
    return [((x, 0.0, 0.0), radius) for x in xs]


def pendulum_doc(mass=1.0, length=0.5, izz=0.0):
    return {
        "links": [
            link("base"),
            link("arm", mass, (length, 0, 0), (0, 0, izz, 0, 0, 0)),
        ],
        "joints": [joint("j0", "base", "arm", axis=(0, 0, 1))],
        "tool_links": ["arm"],
        "configurations": {"retract": [0.0]},
    }


def planar_arm_doc(lengths, masses=None, radius=0.04, spheres_per_link=3, axis=(0, 0, 1),
                   position_limit=np.pi, velocity=None, acceleration=None, jerk=None, torque=None):
    """Serial planar arm; link ``k`` spans x in [0, lengths[k]] of its own frame.

    ``position_limit`` None leaves the joints continuous.
    """
    n = len(lengths)
    masses = masses if masses is not None else [1.0] * n
    links = [link("base")]
    joints = []
    prev, prev_len = "base", 0.0
    for k, (l, m) in enumerate(zip(lengths, masses)):
        name = f"link{k + 1}"
        sph = rod_spheres(l, radius, spheres_per_link, start=l / (2 * spheres_per_link))
        links.append(link(name, m, (l / 2, 0, 0), rod(l, m), sph))
        lim = {}
        if position_limit is not None:
            pl = position_limit[k] if isinstance(position_limit, (list, tuple)) else position_limit
            lim["position"] = [-pl, pl]
        for label, v in (("velocity", velocity), ("acceleration", acceleration), ("jerk", jerk),
                         ("torque", torque)):
            if v is not None:
                lim[label] = v[k] if isinstance(v, (list, tuple)) else v
        joints.append(joint(f"j{k + 1}", prev, name, axis=axis, xyz=(prev_len, 0, 0), limits=lim))
        prev, prev_len = name, l
    links.append(link("tool"))
    joints.append(joint("tool_joint", prev, "tool", kind="fixed", xyz=(prev_len, 0, 0)))
    return {
        "links": links,
        "joints": joints,
        "tool_links": ["tool"],
        "configurations": {"retract": [0.0] * n},
    }


def mimic_gripper_doc():
    """3-link planar arm with a 2-finger gripper driven by one actuated joint."""
    doc = planar_arm_doc([0.4, 0.3, 0.2], masses=[1.0, 0.8, 0.5], spheres_per_link=2)
    doc["links"].append(link("finger_l", 0.05, (0.03, 0, 0), rod(0.06, 0.05),
                             [((0.04, 0, 0), 0.01)]))
    doc["links"].append(link("finger_r", 0.05, (0.03, 0, 0), rod(0.06, 0.05),
                             [((0.04, 0, 0), 0.01)]))
    grip = {"position": [0.0, 0.04]}
    doc["joints"].append(joint("finger_l_joint", "tool", "finger_l", kind="prismatic",
                               axis=(0, 1, 0), limits=grip))
    doc["joints"].append(joint("finger_r_joint", "tool", "finger_r", kind="prismatic",
                               axis=(0, 1, 0), limits=grip,
                               mimic={"source": "finger_l_joint", "multiplier": -1.0, "offset": 0.0}))
    doc["tool_links"] = ["tool", "finger_l", "finger_r"]
    doc["configurations"] = {"retract": [0.0, 0.0, 0.0, 0.0]}
    return doc


def branched_tree_doc(with_mimic=True):
    """Torso with two 2-link arms and a head; 6 actuated joints (+1 mimic)."""
    links = [
        link("base"),
        link("torso", 3.0, (0, 0, 0.2), (0.05, 0.05, 0.02, 0.001, 0.0, 0.002),
             [((0, 0, 0.1), 0.1), ((0, 0, 0.3), 0.1)]),
        link("l_upper", 1.0, (0.15, 0.01, 0), (0.002, 0.01, 0.011, 0.0005, 0.0, 0.0),
             [((0.1, 0, 0), 0.05), ((0.2, 0, 0), 0.05)]),
        link("l_lower", 0.7, (0.12, 0, 0.01), (0.001, 0.006, 0.007, 0.0, 0.0003, 0.0),
             [((0.1, 0, 0), 0.04), ((0.2, 0, 0), 0.04)]),
        link("r_upper", 1.0, (0.15, -0.01, 0), (0.002, 0.01, 0.011, -0.0005, 0.0, 0.0),
             [((0.1, 0, 0), 0.05), ((0.2, 0, 0), 0.05)]),
        link("r_lower", 0.7, (0.12, 0, -0.01), (0.001, 0.006, 0.007, 0.0, -0.0003, 0.0),
             [((0.1, 0, 0), 0.04), ((0.2, 0, 0), 0.04)]),
        link("head", 0.5, (0, 0, 0.05), (0.001, 0.001, 0.001, 0, 0, 0), [((0, 0, 0.05), 0.06)]),
        link("l_hand"),
        link("r_hand"),
    ]
    joints = [
        joint("waist", "base", "torso", axis=(0, 0, 1), xyz=(0, 0, 0.1)),
        joint("l_shoulder", "torso", "l_upper", axis=(0, 1, 0), xyz=(0, 0.2, 0.35), rpy=(0.1, 0, 0.3)),
        joint("l_elbow", "l_upper", "l_lower", axis=(0, 0.6, 0.8), xyz=(0.3, 0, 0)),
        joint("r_shoulder", "torso", "r_upper", axis=(0, 1, 0), xyz=(0, -0.2, 0.35), rpy=(-0.1, 0, -0.3)),
        joint("r_elbow", "r_upper", "r_lower", axis=(0, 0, 1), xyz=(0.3, 0, 0)),
        joint("neck", "torso", "head", kind="prismatic", axis=(0, 0, 1), xyz=(0, 0, 0.45)),
        joint("l_wrist", "l_lower", "l_hand", kind="fixed", xyz=(0.25, 0, 0)),
        joint("r_wrist", "r_lower", "r_hand", kind="fixed", xyz=(0.25, 0, 0)),
    ]
    tools = ["l_hand", "r_hand", "head"]
    if with_mimic:
        links.append(link("antenna", 0.2, (0, 0.02, 0.05), (0.0005, 0.0004, 0.0002, 0, 0, 0.0001),
                          [((0, 0, 0.06), 0.02)]))
        joints.append(joint("antenna_joint", "head", "antenna", axis=(1, 0, 0), xyz=(0, 0, 0.1),
                            mimic={"source": "l_elbow", "multiplier": -0.7, "offset": 0.2}))
        tools.append("antenna")
    return {
        "links": links,
        "joints": joints,
        "tool_links": tools,
        "configurations": {"retract": [0.0] * 6},
    }


def random_tree_doc(rng: np.random.Generator, n_links: int = 10, max_branches: int = 3,
                    mimic_prob: float = 0.15):
    """Random kinematic tree with revolute/prismatic/fixed joints and random inertias."""
    links = [link("l0", *_random_inertial(rng))]
    joints = []
    children = {0: 0}
    leaves_started = 0
    for k in range(1, n_links):
        candidates = [i for i in range(k) if children.get(i, 0) < 1 or
                      (children.get(i, 0) < 2 and leaves_started < max_branches - 1)]
        par = int(rng.choice(candidates))
        if children.get(par, 0) >= 1:
            leaves_started += 1
        children[par] = children.get(par, 0) + 1
        name = f"l{k}"
        links.append(link(name, *_random_inertial(rng)))
        kind = rng.choice(["revolute", "revolute", "revolute", "prismatic", "fixed"])
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        mimic = None
        actuated = [j for j in joints if j["kind"] != "fixed" and "mimic" not in j]
        if kind != "fixed" and actuated and rng.random() < mimic_prob:
            src = actuated[int(rng.integers(len(actuated)))]
            kind = src["kind"]
            mimic = {"source": src["name"], "multiplier": float(rng.uniform(-1.5, 1.5)),
                     "offset": float(rng.uniform(-0.3, 0.3))}
        joints.append(joint(f"j{k}", f"l{par}", name, kind=str(kind), axis=axis,
                            xyz=rng.uniform(-0.3, 0.3, 3), rpy=rng.uniform(-np.pi, np.pi, 3),
                            mimic=mimic))
    dof = sum(1 for j in joints if j["kind"] != "fixed" and "mimic" not in j)
    leaves = [l["name"] for i, l in enumerate(links) if children.get(i, 0) == 0]
    return {
        "links": links,
        "joints": joints,
        "tool_links": leaves,
        "configurations": {"retract": [0.0] * dof},
    }


def _random_inertial(rng):
    mass = float(rng.uniform(0.2, 2.0))
    com = rng.uniform(-0.1, 0.1, 3)
    A = rng.normal(size=(3, 3)) * 0.05
    I = A @ A.T + 0.01 * np.eye(3)
    inertia = (I[0, 0], I[1, 1], I[2, 2], I[0, 1], I[0, 2], I[1, 2])
    spheres = [(tuple(rng.uniform(-0.1, 0.1, 3)), float(rng.uniform(0.02, 0.06)))]
    return mass, com, inertia, spheres


def load(doc) -> RobotModel:
    return load_robot(doc)
