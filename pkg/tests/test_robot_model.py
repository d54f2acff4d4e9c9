import json

import numpy as np
import pytest

from ksmotion.fixtures import (
    branched_tree_doc, joint, link, load, mimic_gripper_doc, pendulum_doc, planar_arm_doc, random_tree_doc,
)
from ksmotion.kinematics import forward_kinematics
from ksmotion.robot_model import (
    RobotParseError, RobotValidationError, build_self_collision_pairs, dump_robot, load_robot, set_payload,
)


def test_pendulum_is_smallest_tree():
    m = load(pendulum_doc())
    assert m.dof == 1
    tip = m.link_index("arm")
    assert m.cache.link_chain[tip] == (m.link_index("base"), tip)


def test_gripper_counts(gripper):
    assert gripper.dof == 4
    assert len(gripper.cache.connected_links[3]) == 2


def test_undeclared_parent_names_joint():
    doc = pendulum_doc()
    doc["joints"][0]["parent"] = "ghost"
    with pytest.raises(RobotValidationError) as exc:
        load(doc)
    assert exc.value.element == "j0"


def test_cycle_names_links():
    doc = {
        "links": [link("root"), link("a"), link("b"), link("c")],
        "joints": [joint("ra", "root", "a"), joint("bc", "b", "c"), joint("cb", "c", "b")],
    }
    with pytest.raises(RobotValidationError, match="cycle through links b -> c -> b|cycle through links c -> b -> c"):
        load(doc)


def test_mimic_of_mimic_rejected():
    doc = mimic_gripper_doc()
    doc["links"].append(link("extra", 0.1, (0, 0, 0), (1e-4, 1e-4, 1e-4, 0, 0, 0)))
    doc["joints"].append(joint("extra_joint", "finger_r", "extra", kind="prismatic", axis=(0, 1, 0),
                               mimic={"source": "finger_r_joint", "multiplier": 1.0, "offset": 0.0}))
    with pytest.raises(RobotValidationError) as exc:
        load(doc)
    assert exc.value.element == "extra_joint"


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d["links"][1].update(mass=-1.0), "negative mass"),
    (lambda d: d["links"][1].update(inertia=[1, 1, 1, 0]), None),
    (lambda d: d["links"][1].update(inertia=[-1, 1, 1, 0, 0, 0]), "positive semidefinite"),
    (lambda d: d["joints"][0].update(axis=[0, 0, 2]), "unit length"),
    (lambda d: d["joints"][0].update(limits={"position": [1, -1]}), "empty position"),
    (lambda d: d["links"][1]["spheres"].append({"center": [0, 0, 0], "radius": 0.0}), "radius"),
])
def test_invariant_violations(mutate, message):
    doc = planar_arm_doc([0.4, 0.3])
    mutate(doc)
    if message is None:
        with pytest.raises((RobotParseError, RobotValidationError)):
            load(doc)
    else:
        with pytest.raises(RobotValidationError, match=message):
            load(doc)


def test_malformed_text():
    with pytest.raises(RobotParseError):
        load_robot("{not json")
    with pytest.raises(RobotParseError):
        load_robot(json.dumps({"links": []}))


def test_two_roots_rejected():
    doc = pendulum_doc()
    doc["links"].append(link("floating"))
    with pytest.raises(RobotValidationError, match="one root"):
        load(doc)


def test_level_order_is_topological(branched):
    parent = branched.arrays.parent
    seen = set()
    for level in branched.cache.level_order:
        for i in level:
            assert parent[i] < 0 or parent[i] in seen
        seen.update(level)
    assert len(seen) == branched.n_links


def test_affects_matches_chain_walk(rng):
    for _ in range(10):
        m = load(random_tree_doc(rng, n_links=12))
        act = m.arrays.act
        for e, chain in enumerate(m.cache.link_chain):
            expected = {int(act[l]) for l in chain if act[l] >= 0}
            assert set(np.flatnonzero(m.cache.affects[:, e])) == expected


def test_round_trip(branched):
    again = load_robot(dump_robot(branched))
    assert [l.name for l in again.links] == [l.name for l in branched.links]
    assert again.dof == branched.dof
    np.testing.assert_array_equal(again.cache.self_collision_pairs, branched.cache.self_collision_pairs)
    for field in ("origin_p", "origin_R", "axis", "mass", "com", "inertia", "sphere_center", "pos_limits"):
        np.testing.assert_allclose(getattr(again.arrays, field), getattr(branched.arrays, field), atol=1e-12)


def test_neighbor_rule_drops_adjacent_pairs(planar3):
    A = planar3.arrays
    pairs = planar3.cache.self_collision_pairs
    la, lb = A.sphere_link[pairs[:, 0]], A.sphere_link[pairs[:, 1]]
    assert np.all(la != lb)
    assert not np.any(A.parent[la] == lb) and not np.any(A.parent[lb] == la)


def test_pairs_empty_when_links_never_touch():
    doc = planar_arm_doc([0.3, 0.1], radius=0.02, position_limit=[0.5, 0.5])
    doc["links"].append(link("tip", 0.1, (0, 0, 0), (1e-4,) * 3 + (0, 0, 0), [((0, 0, 0), 0.02)]))
    doc["joints"].append(joint("tip_joint", "link2", "tip", xyz=(0.1, 0, 0), limits={"position": [-0.5, 0.5]}))
    doc["configurations"]["retract"] = [0.0, 0.0, 0.0]
    m = build_self_collision_pairs(load(doc), 512, seed=0)
    # exhaustive grid over the joint box: no non-adjacent sphere pair ever overlaps
    g = np.linspace(-0.5, 0.5, 21)
    qs = np.stack(np.meshgrid(g, g, g), -1).reshape(-1, 3)
    c = forward_kinematics(m, qs).sphere_centers
    A = m.arrays
    base = load(doc).cache.self_collision_pairs
    d = np.linalg.norm(c[:, base[:, 0]] - c[:, base[:, 1]], axis=-1)
    assert not np.any(d < A.sphere_radius[base[:, 0]] + A.sphere_radius[base[:, 1]])
    assert len(m.cache.self_collision_pairs) == 0


def test_folding_pair_retained():
    doc = planar_arm_doc([0.4, 0.4, 0.4], radius=0.05, position_limit=np.pi)
    m = build_self_collision_pairs(load(doc), 4096, seed=3)
    link1, link3 = m.link_index("link1"), m.link_index("link3")
    A = m.arrays
    la, lb = A.sphere_link[m.cache.self_collision_pairs].T
    assert np.any((la == link1) & (lb == link3) | (la == link3) & (lb == link1))
    # a folded configuration really does collide
    c = forward_kinematics(m, np.array([[0.0, 2.6, 2.6]])).sphere_centers[0]
    s1, s3 = np.flatnonzero(A.sphere_link == link1), np.flatnonzero(A.sphere_link == link3)
    d = np.linalg.norm(c[s1][:, None] - c[s3][None], axis=-1)
    assert d.min() < 0.1


def test_payload_zero_mass_is_identity(planar2):
    m = set_payload(planar2, "link2", 0.0, (0.1, 0, 0), np.zeros((3, 3)))
    for f in ("mass", "com", "inertia"):
        np.testing.assert_allclose(getattr(m.arrays, f), getattr(planar2.arrays, f), atol=1e-15)


def test_payload_at_com(planar2):
    i = planar2.link_index("link2")
    com = planar2.arrays.com[i]
    m = set_payload(planar2, "link2", 2.0, com, np.zeros((3, 3)))
    assert m.arrays.mass[i] == pytest.approx(planar2.arrays.mass[i] + 2.0)
    np.testing.assert_allclose(m.arrays.com[i], com)
    np.testing.assert_allclose(m.arrays.inertia[i], planar2.arrays.inertia[i], atol=1e-15)


def test_payload_point_masses_compose():
    # two point masses: the link itself and a 3 kg payload at the tool offset
    doc = pendulum_doc(mass=1.0, length=0.5)
    m = set_payload(load(doc), "arm", 3.0, (0.8, 0.1, 0.0), np.zeros((3, 3)))
    i = m.link_index("arm")
    pts = np.array([[0.5, 0, 0], [0.8, 0.1, 0.0]])
    ms = np.array([1.0, 3.0])
    c = ms @ pts / ms.sum()
    I = np.zeros((3, 3))
    for mk, p in zip(ms, pts):
        r = p - c
        I += mk * (r @ r * np.eye(3) - np.outer(r, r))
    np.testing.assert_allclose(m.arrays.com[i], c, atol=1e-14)
    np.testing.assert_allclose(m.arrays.inertia[i], I, atol=1e-14)


def test_payload_rejects_bad_inertia(planar2):
    with pytest.raises(RobotValidationError, match="positive semidefinite"):
        set_payload(planar2, "tool", 1.0, (0, 0, 0), -np.eye(3))
    with pytest.raises(ValueError):
        set_payload(planar2, "tool", -1.0, (0, 0, 0), np.zeros((3, 3)))
    with pytest.raises(KeyError):
        set_payload(planar2, "nowhere", 1.0, (0, 0, 0), np.zeros((3, 3)))


def test_branched_fixture_shape():
    m = load(branched_tree_doc())
    assert m.dof == 6
    ant = m.link_index("antenna")
    assert m.arrays.act[ant] == m.actuated_joints.index("l_elbow")
