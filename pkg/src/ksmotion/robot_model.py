"""Robot description loading, validation and topology caches.

The description is a JSON document with ``links``, ``joints``, ``tool_links``
and ``configurations``.  Loading validates every structural and inertial
invariant and precomputes the ancestor chains / joint-affects-link tables
that the gradient and Jacobian routines walk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .spatial import Pose, rpy_to_matrix

FIXED, REVOLUTE, PRISMATIC = 0, 1, 2
_KIND_CODES = {"fixed": FIXED, "revolute": REVOLUTE, "prismatic": PRISMATIC}
_INF = float("inf")


class RobotParseError(ValueError):
    """The document is not well-formed JSON or misses required keys."""


class RobotValidationError(ValueError):
    """The document parses but violates a structural or inertial invariant."""

    def __init__(self, message: str, element: str | None = None):
        super().__init__(message)
        self.element = element


@dataclass(frozen=True)
class Mimic:
    source: str
    multiplier: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class Limits:
    position: tuple[float, float] = (-_INF, _INF)
    velocity: tuple[float, float] = (-_INF, _INF)
    acceleration: tuple[float, float] = (-_INF, _INF)
    jerk: tuple[float, float] = (-_INF, _INF)
    torque: tuple[float, float] = (-_INF, _INF)


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str
    parent: str
    child: str
    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray
    limits: Limits = Limits()
    mimic: Mimic | None = None

    @property
    def origin(self) -> Pose:
        return Pose.from_xyz_rpy(self.origin_xyz, self.origin_rpy)

    @property
    def actuated(self) -> bool:
        return self.kind != "fixed" and self.mimic is None


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float = 0.0
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    spheres: tuple[Sphere, ...] = ()


@dataclass(frozen=True)
class TopologyCache:
    link_chain: tuple[tuple[int, ...], ...]
    affects: np.ndarray  # (dof, n_links) bool
    connected_links: tuple[tuple[int, ...], ...]
    joint_map: np.ndarray  # link -> actuated index, -1 when unactuated
    level_order: tuple[tuple[int, ...], ...]
    self_collision_pairs: np.ndarray  # (P, 2) global sphere indices


@dataclass(frozen=True)
class ModelArrays:
    """Flat per-link arrays consumed by the numeric kernels."""

    parent: np.ndarray
    kind: np.ndarray
    axis: np.ndarray
    origin_R: np.ndarray
    origin_p: np.ndarray
    act: np.ndarray
    mult: np.ndarray
    offset: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    sphere_link: np.ndarray
    sphere_center: np.ndarray
    sphere_radius: np.ndarray
    pos_limits: np.ndarray  # (dof, 2)
    vel_limits: np.ndarray
    acc_limits: np.ndarray
    jerk_limits: np.ndarray
    torque_limits: np.ndarray


@dataclass(frozen=True)
class RobotModel:
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    dof: int
    cache: TopologyCache
    tool_links: tuple[str, ...]
    named_configurations: dict[str, np.ndarray]
    arrays: ModelArrays
    actuated_joints: tuple[str, ...]

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_spheres(self) -> int:
        return len(self.arrays.sphere_radius)

    def link_index(self, name: str) -> int:
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise KeyError(f"unknown link {name!r}")

    def clamp(self, q: np.ndarray) -> np.ndarray:
        lim = self.arrays.pos_limits
        return np.clip(q, lim[:, 0], lim[:, 1])


# ---------------------------------------------------------------------------
# parsing


def _vec(value, n: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise RobotParseError(f"{what}: expected {n} numbers, got {value!r}")
    return arr


def _interval(value, what: str, default=(-_INF, _INF)) -> tuple[float, float]:
    if value is None:
        return default
    if np.isscalar(value):
        v = float(value)
        return (-v, v)
    lo, hi = value
    return (float(lo), float(hi))


def _inertia_matrix(six) -> np.ndarray:
    ixx, iyy, izz, ixy, ixz, iyz = (float(x) for x in six)
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def _parse_link(raw: dict) -> LinkSpec:
    try:
        name = str(raw["name"])
    except (KeyError, TypeError) as exc:
        raise RobotParseError(f"link entry without name: {raw!r}") from exc
    inertia = _inertia_matrix(_vec(raw.get("inertia", [0.0] * 6), 6, f"link {name} inertia"))
    spheres = tuple(
        Sphere(_vec(s["center"], 3, f"link {name} sphere"), float(s["radius"]))
        for s in raw.get("spheres", [])
    )
    return LinkSpec(
        name=name,
        mass=float(raw.get("mass", 0.0)),
        com=_vec(raw.get("com", [0.0, 0.0, 0.0]), 3, f"link {name} com"),
        inertia=inertia,
        spheres=spheres,
    )


def _parse_joint(raw: dict) -> JointSpec:
    try:
        name = str(raw["name"])
        kind = str(raw["kind"])
        parent = str(raw["parent"])
        child = str(raw["child"])
    except (KeyError, TypeError) as exc:
        raise RobotParseError(f"joint entry missing name/kind/parent/child: {raw!r}") from exc
    if kind not in _KIND_CODES:
        raise RobotValidationError(f"joint {name}: unknown kind {kind!r}", name)
    origin = raw.get("origin", {}) or {}
    lim = raw.get("limits", {}) or {}
    limits = Limits(
        position=_interval(lim.get("position"), "position"),
        velocity=_interval(lim.get("velocity"), "velocity"),
        acceleration=_interval(lim.get("acceleration"), "acceleration"),
        jerk=_interval(lim.get("jerk"), "jerk"),
        torque=_interval(lim.get("torque"), "torque"),
    )
    mimic = None
    if raw.get("mimic") is not None:
        m = raw["mimic"]
        mimic = Mimic(str(m["source"]), float(m.get("multiplier", 1.0)), float(m.get("offset", 0.0)))
    return JointSpec(
        name=name,
        kind=kind,
        parent=parent,
        child=child,
        axis=_vec(raw.get("axis", [0.0, 0.0, 1.0]), 3, f"joint {name} axis"),
        origin_xyz=_vec(origin.get("xyz", [0.0, 0.0, 0.0]), 3, f"joint {name} origin xyz"),
        origin_rpy=_vec(origin.get("rpy", [0.0, 0.0, 0.0]), 3, f"joint {name} origin rpy"),
        limits=limits,
        mimic=mimic,
    )


def load_robot(document: str | dict) -> RobotModel:
    """Parse and validate a robot description (JSON text or already-decoded dict)."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise RobotParseError(f"malformed robot document: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict) or "links" not in doc or "joints" not in doc:
        raise RobotParseError("robot document needs top-level 'links' and 'joints'")
    links = [_parse_link(r) for r in doc["links"]]
    joints = [_parse_joint(r) for r in doc["joints"]]
    pairs = None
    if doc.get("self_collision") is not None:
        pairs = np.asarray(doc["self_collision"].get("pairs", []), dtype=np.int64).reshape(-1, 2)
    return build_model(
        links,
        joints,
        tool_links=doc.get("tool_links", []),
        configurations=doc.get("configurations", {}),
        self_collision_pairs=pairs,
    )


def load_robot_file(path) -> RobotModel:
    with open(path, "r", encoding="utf-8") as fh:
        return load_robot(fh.read())


# ---------------------------------------------------------------------------
# validation + compilation


def _check_tree(links: list[LinkSpec], joints: list[JointSpec]) -> tuple[dict, str]:
    names = [l.name for l in links]
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise RobotValidationError(f"duplicate link name {n!r}", n)
        seen.add(n)
    jseen: set[str] = set()
    parent_of: dict[str, JointSpec] = {}
    for j in joints:
        if j.name in jseen:
            raise RobotValidationError(f"duplicate joint name {j.name!r}", j.name)
        jseen.add(j.name)
        for end, role in ((j.parent, "parent"), (j.child, "child")):
            if end not in seen:
                raise RobotValidationError(
                    f"joint {j.name}: {role} link {end!r} is not declared", j.name
                )
        if j.child in parent_of:
            raise RobotValidationError(
                f"joint {j.name}: link {j.child!r} already has parent joint "
                f"{parent_of[j.child].name!r}",
                j.name,
            )
        parent_of[j.child] = j
    roots = [n for n in names if n not in parent_of]
    # every link has at most one parent, so any link not reachable from a root sits on a cycle
    reachable: set[str] = set()
    children: dict[str, list[str]] = {n: [] for n in names}
    for j in joints:
        children[j.parent].append(j.child)
    stack = list(roots)
    while stack:
        n = stack.pop()
        reachable.add(n)
        stack.extend(children[n])
    stray = [n for n in names if n not in reachable]
    if stray:
        cur, path = stray[0], []
        while cur not in path:
            path.append(cur)
            cur = parent_of[cur].parent
        cycle = path[path.index(cur):]
        raise RobotValidationError(
            "kinematic cycle through links " + " -> ".join(cycle + [cur]),
            parent_of[cur].name,
        )
    if len(roots) != 1:
        raise RobotValidationError(f"expected exactly one root link, found {roots}", None)
    return parent_of, roots[0]


def _check_joint(j: JointSpec, by_name: dict[str, JointSpec]) -> None:
    if j.kind != "fixed" and abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
        raise RobotValidationError(f"joint {j.name}: axis is not unit length", j.name)
    for label in ("position", "velocity", "acceleration", "jerk", "torque"):
        lo, hi = getattr(j.limits, label)
        if not lo <= hi:
            raise RobotValidationError(f"joint {j.name}: empty {label} limit [{lo}, {hi}]", j.name)
    if j.mimic is not None:
        if j.kind == "fixed":
            raise RobotValidationError(f"joint {j.name}: fixed joint cannot mimic", j.name)
        src = by_name.get(j.mimic.source)
        if src is None:
            raise RobotValidationError(
                f"joint {j.name}: mimic source {j.mimic.source!r} does not exist", j.name
            )
        if src.kind == "fixed" or src.mimic is not None:
            raise RobotValidationError(
                f"joint {j.name}: mimic source {src.name!r} is not an actuated joint", j.name
            )


def _check_link(link: LinkSpec) -> None:
    if link.mass < 0:
        raise RobotValidationError(f"link {link.name}: negative mass", link.name)
    I = link.inertia
    if np.max(np.abs(I - I.T)) > 1e-12:
        raise RobotValidationError(f"link {link.name}: inertia not symmetric", link.name)
    if np.min(np.linalg.eigvalsh(I)) < -1e-9:
        raise RobotValidationError(f"link {link.name}: inertia not positive semidefinite", link.name)
    for s in link.spheres:
        if not s.radius > 0:
            raise RobotValidationError(f"link {link.name}: sphere radius must be > 0", link.name)


def _rigid_groups(links: list[LinkSpec], parent_idx: np.ndarray, kind: np.ndarray) -> np.ndarray:
    group = np.arange(len(links))
    for i in range(len(links)):  # topological order: parent group is final already
        if parent_idx[i] >= 0 and kind[i] == FIXED:
            group[i] = group[parent_idx[i]]
    return group


def neighbor_ignore(model_links, parent_idx, kind) -> np.ndarray:
    """Boolean (L, L) table of link pairs that are the same rigid body or adjacent."""
    n = len(model_links)
    group = _rigid_groups(model_links, parent_idx, kind)
    same = group[:, None] == group[None, :]
    adj_group = np.zeros((n, n), dtype=bool)
    for i in range(n):
        p = parent_idx[i]
        if p >= 0 and kind[i] != FIXED:
            adj_group[group[i], group[p]] = adj_group[group[p], group[i]] = True
    return same | adj_group[group[:, None], group[None, :]]


def build_model(
    links: list[LinkSpec],
    joints: list[JointSpec],
    tool_links=(),
    configurations=None,
    self_collision_pairs: np.ndarray | None = None,
) -> RobotModel:
    """Validate raw specs and assemble a RobotModel with its topology cache."""
    links = list(links)
    joints = list(joints)
    parent_of, root = _check_tree(links, joints)
    by_name = {j.name: j for j in joints}
    for j in joints:
        _check_joint(j, by_name)
    for l in links:
        _check_link(l)

    # topological order: by depth, ties by document order
    doc_index = {l.name: i for i, l in enumerate(links)}
    depth: dict[str, int] = {}

    def _depth(n: str) -> int:
        if n not in depth:
            depth[n] = 0 if n == root else _depth(parent_of[n].parent) + 1
        return depth[n]

    order = sorted(links, key=lambda l: (_depth(l.name), doc_index[l.name]))
    idx = {l.name: i for i, l in enumerate(order)}
    n = len(order)

    actuated = [j for j in joints if j.actuated]
    act_index = {j.name: i for i, j in enumerate(actuated)}
    dof = len(actuated)

    parent = np.full(n, -1, dtype=np.int64)
    kind = np.zeros(n, dtype=np.int64)
    axis = np.zeros((n, 3))
    origin_R = np.tile(np.eye(3), (n, 1, 1))
    origin_p = np.zeros((n, 3))
    act = np.full(n, -1, dtype=np.int64)
    mult = np.zeros(n)
    offset = np.zeros(n)
    for i, link in enumerate(order):
        j = parent_of.get(link.name)
        if j is None:
            continue
        parent[i] = idx[j.parent]
        kind[i] = _KIND_CODES[j.kind]
        axis[i] = j.axis
        origin_R[i] = rpy_to_matrix(j.origin_rpy)
        origin_p[i] = j.origin_xyz
        if j.kind == "fixed":
            continue
        if j.mimic is None:
            act[i], mult[i] = act_index[j.name], 1.0
        else:
            act[i] = act_index[j.mimic.source]
            mult[i], offset[i] = j.mimic.multiplier, j.mimic.offset

    chains = []
    for i in range(n):
        chain, cur = [], i
        while cur >= 0:
            chain.append(int(cur))
            cur = parent[cur]
        chains.append(tuple(reversed(chain)))
    connected = tuple(tuple(int(i) for i in np.flatnonzero(act == a)) for a in range(dof))
    affects = np.zeros((dof, n), dtype=bool)
    for e in range(n):
        for l in chains[e]:
            if act[l] >= 0:
                affects[act[l], e] = True
    max_depth = max((len(c) for c in chains), default=1)
    levels = tuple(tuple(i for i in range(n) if len(chains[i]) == d + 1) for d in range(max_depth))

    sphere_link, sphere_center, sphere_radius = [], [], []
    for i, link in enumerate(order):
        for s in link.spheres:
            sphere_link.append(i)
            sphere_center.append(s.center)
            sphere_radius.append(s.radius)
    sphere_link = np.asarray(sphere_link, dtype=np.int64)
    sphere_center = np.asarray(sphere_center, dtype=float).reshape(-1, 3)
    sphere_radius = np.asarray(sphere_radius, dtype=float)

    if self_collision_pairs is None:
        ignore = neighbor_ignore(order, parent, kind)
        ii, jj = np.triu_indices(len(sphere_link), k=1)
        keep = ~ignore[sphere_link[ii], sphere_link[jj]]
        self_collision_pairs = np.stack([ii[keep], jj[keep]], axis=1).astype(np.int64)
    else:
        self_collision_pairs = np.asarray(self_collision_pairs, dtype=np.int64).reshape(-1, 2)
        if len(self_collision_pairs) and (
            self_collision_pairs.min() < 0 or self_collision_pairs.max() >= len(sphere_link)
        ):
            raise RobotValidationError("self-collision pair references unknown sphere", None)

    def lim(label):
        return np.array([getattr(j.limits, label) for j in actuated], dtype=float).reshape(dof, 2)

    arrays = ModelArrays(
        parent=parent,
        kind=kind,
        axis=axis,
        origin_R=origin_R,
        origin_p=origin_p,
        act=act,
        mult=mult,
        offset=offset,
        mass=np.array([l.mass for l in order]),
        com=np.array([l.com for l in order]).reshape(n, 3),
        inertia=np.array([l.inertia for l in order]).reshape(n, 3, 3),
        sphere_link=sphere_link,
        sphere_center=sphere_center,
        sphere_radius=sphere_radius,
        pos_limits=lim("position"),
        vel_limits=lim("velocity"),
        acc_limits=lim("acceleration"),
        jerk_limits=lim("jerk"),
        torque_limits=lim("torque"),
    )
    for name in tool_links:
        if name not in idx:
            raise RobotValidationError(f"tool link {name!r} is not declared", name)
    configs = {}
    for name, value in (configurations or {}).items():
        q = np.asarray(value, dtype=float)
        if q.shape != (dof,):
            raise RobotValidationError(
                f"configuration {name!r} has {q.size} values, robot has {dof} dof", name
            )
        configs[str(name)] = q
    cache = TopologyCache(
        link_chain=tuple(chains),
        affects=affects,
        connected_links=connected,
        joint_map=act.copy(),
        level_order=levels,
        self_collision_pairs=self_collision_pairs,
    )
    return RobotModel(
        links=tuple(order),
        joints=tuple(joints),
        dof=dof,
        cache=cache,
        tool_links=tuple(str(t) for t in tool_links),
        named_configurations=configs,
        arrays=arrays,
        actuated_joints=tuple(j.name for j in actuated),
    )


# ---------------------------------------------------------------------------
# serialization


def _interval_doc(iv: tuple[float, float]):
    lo, hi = iv
    if lo == -_INF and hi == _INF:
        return None
    return [lo, hi]


def robot_to_document(model: RobotModel, include_pairs: bool = True) -> dict[str, Any]:
    links = []
    for l in model.links:
        I = l.inertia
        links.append(
            {
                "name": l.name,
                "mass": l.mass,
                "com": l.com.tolist(),
                "inertia": [I[0, 0], I[1, 1], I[2, 2], I[0, 1], I[0, 2], I[1, 2]],
                "spheres": [{"center": s.center.tolist(), "radius": s.radius} for s in l.spheres],
            }
        )
    joints = []
    for j in model.joints:
        limits = {}
        for label in ("position", "velocity", "acceleration", "jerk", "torque"):
            iv = _interval_doc(getattr(j.limits, label))
            if iv is not None:
                limits[label] = iv
        entry = {
            "name": j.name,
            "kind": j.kind,
            "parent": j.parent,
            "child": j.child,
            "axis": j.axis.tolist(),
            "origin": {"xyz": j.origin_xyz.tolist(), "rpy": j.origin_rpy.tolist()},
            "limits": limits,
        }
        if j.mimic is not None:
            entry["mimic"] = {
                "source": j.mimic.source,
                "multiplier": j.mimic.multiplier,
                "offset": j.mimic.offset,
            }
        joints.append(entry)
    doc = {
        "links": links,
        "joints": joints,
        "tool_links": list(model.tool_links),
        "configurations": {k: v.tolist() for k, v in model.named_configurations.items()},
    }
    if include_pairs:
        doc["self_collision"] = {"pairs": model.cache.self_collision_pairs.tolist()}
    return doc


def dump_robot(model: RobotModel, include_pairs: bool = True) -> str:
    return json.dumps(robot_to_document(model, include_pairs), indent=1)


# ---------------------------------------------------------------------------
# runtime modifications


def set_payload(model: RobotModel, link: str, mass: float, com, inertia) -> RobotModel:
    """Rigidly attach a payload (mass, com in link frame, inertia about its com) to ``link``."""
    if mass < 0:
        raise ValueError(f"payload mass must be non-negative, got {mass}")
    i = model.link_index(link)
    com = np.asarray(com, dtype=float)
    inertia = np.asarray(inertia, dtype=float)
    if inertia.shape == (6,):
        inertia = _inertia_matrix(inertia)
    _check_link(LinkSpec("payload", float(mass), com, inertia, ()))
    old = model.links[i]
    total = old.mass + mass
    if total > 0:
        c = (old.mass * old.com + mass * com) / total
    else:
        c = old.com.copy()

    def shifted(I, m, d):
        return I + m * (np.dot(d, d) * np.eye(3) - np.outer(d, d))

    I_new = shifted(old.inertia, old.mass, old.com - c) + shifted(inertia, mass, com - c)
    new_link = replace(old, mass=total, com=c, inertia=I_new)
    links = list(model.links)
    links[i] = new_link
    arrays = replace(
        model.arrays,
        mass=model.arrays.mass.copy(),
        com=model.arrays.com.copy(),
        inertia=model.arrays.inertia.copy(),
    )
    arrays.mass[i], arrays.com[i], arrays.inertia[i] = total, c, I_new
    return replace(model, links=tuple(links), arrays=arrays)


def halton(n: int, dim: int, seed: int) -> np.ndarray:
    """Scrambled Halton points in [0, 1)^dim, deterministic given ``seed``."""
    from scipy.stats import qmc

    if dim == 0:
        return np.zeros((n, 0))
    return qmc.Halton(d=dim, scramble=True, seed=seed).random(n)


def build_self_collision_pairs(
    model: RobotModel,
    sample_count: int,
    seed: int,
    use_default_configuration: bool = True,
    batch_size: int = 4096,
) -> RobotModel:
    """Prune the sphere-pair list with the neighbor, retract and sampling passes."""
    from .kinematics import forward_kinematics

    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    A = model.arrays
    ignore_links = neighbor_ignore(model.links, A.parent, A.kind)
    ii, jj = np.triu_indices(model.n_spheres, k=1)
    keep = ~ignore_links[A.sphere_link[ii], A.sphere_link[jj]]
    pairs = np.stack([ii[keep], jj[keep]], axis=1)
    rsum = A.sphere_radius[pairs[:, 0]] + A.sphere_radius[pairs[:, 1]]

    def colliding(qs: np.ndarray) -> np.ndarray:
        hit = np.zeros(len(pairs), dtype=bool)
        for start in range(0, len(qs), batch_size):
            c = forward_kinematics(model, qs[start : start + batch_size]).sphere_centers
            d = np.linalg.norm(c[:, pairs[:, 0]] - c[:, pairs[:, 1]], axis=-1)
            hit |= np.any(d < rsum, axis=0)
        return hit

    if use_default_configuration:
        if "retract" not in model.named_configurations:
            raise KeyError("default-configuration pass needs a 'retract' configuration")
        at_retract = colliding(model.named_configurations["retract"][None])
        pairs, rsum = pairs[~at_retract], rsum[~at_retract]

    lo = A.pos_limits[:, 0].copy()
    hi = A.pos_limits[:, 1].copy()
    lo[~np.isfinite(lo)] = -np.pi
    hi[~np.isfinite(hi)] = np.pi
    qs = lo + halton(sample_count, model.dof, seed) * (hi - lo)
    ever = colliding(qs)
    pairs = pairs[ever]
    cache = replace(model.cache, self_collision_pairs=pairs.astype(np.int64))
    return replace(model, cache=cache)
