"""Robot model description: links, joints, loading and validation.

A model file is a YAML document (see ``assets/cassie_like.model``) listing the
physical links and the 20 joints of the biped.  The six floating-base joints
connect the world to the pelvis; the loader synthesizes massless intermediate
bodies for them so the kinematics/dynamics code sees a uniform tree of
single-DoF joints.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import layout

MODEL_FORMAT = "animbiped-model/1"

BASE_JOINT_LAYOUT = (
    # name, kind, axis, q_index
    ("base_x", "base-translation", (1, 0, 0), 0),
    ("base_y", "base-translation", (0, 1, 0), 1),
    ("base_z", "base-translation", (0, 0, 1), 2),
    ("base_yaw", "base-rotation", (0, 0, 1), 5),
    ("base_pitch", "base-rotation", (0, 1, 0), 4),
    ("base_roll", "base-rotation", (1, 0, 0), 3),
)


class ModelError(ValueError):
    """Raised when a model file is malformed or violates an invariant."""


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float
    com: np.ndarray            # (3,) in link frame, m
    inertia: np.ndarray        # (3,3) about the CoM, link frame, kg m^2


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str                  # revolute | base-translation | base-rotation
    axis: np.ndarray           # (3,) unit vector in the joint frame
    q_index: int
    parent: str                # parent link name ("world" for base joints)
    child: str
    origin_xyz: np.ndarray     # (3,) fixed offset in parent frame
    origin_rpy: np.ndarray     # (3,) fixed rotation (roll,pitch,yaw) in parent frame
    limits: tuple[float, float]
    actuated: bool = False
    effort: float = 0.0        # motor-side torque bound, N m (actuated only)
    gear: float = 1.0          # joint torque = gear * commanded torque


@dataclass(frozen=True)
class FootSpec:
    link: str
    endpoints: np.ndarray      # (2,3) contact endpoints in the foot link frame
    pivot: np.ndarray          # (3,) ankle pivot in the foot link frame


@dataclass
class RobotModel:
    name: str
    links: list[LinkSpec]
    joints: list[JointSpec]          # in kinematic-tree order, 20 entries
    feet: dict[str, FootSpec]        # keys "left", "right"
    spring_constants: np.ndarray     # (4,) N m/rad for [q5L q6L q5R q6R]
    spring_damping: np.ndarray       # (4,) N m s/rad

    # ---- compiled arrays (filled by _compile) ----
    nb: int = 0
    parent: np.ndarray = field(default=None, repr=False)        # (nb,) int
    axes: np.ndarray = field(default=None, repr=False)          # (nb,3)
    prismatic: np.ndarray = field(default=None, repr=False)     # (nb,) bool
    q_index: np.ndarray = field(default=None, repr=False)       # (nb,) int
    X_rot: np.ndarray = field(default=None, repr=False)         # (nb,3,3) fixed rotation
    X_trans: np.ndarray = field(default=None, repr=False)       # (nb,3) fixed offset
    body_mass: np.ndarray = field(default=None, repr=False)     # (nb,)
    body_com: np.ndarray = field(default=None, repr=False)      # (nb,3)
    body_inertia: np.ndarray = field(default=None, repr=False)  # (nb,3,3)
    body_names: list[str] = field(default=None, repr=False)
    q_min: np.ndarray = field(default=None, repr=False)         # (20,)
    q_max: np.ndarray = field(default=None, repr=False)
    u_max: np.ndarray = field(default=None, repr=False)         # (10,) motor side
    gear: np.ndarray = field(default=None, repr=False)          # (10,)
    B: np.ndarray = field(default=None, repr=False)             # (20,10), geared
    foot_body: dict[str, int] = field(default=None, repr=False)
    hip_pivot_body: dict[str, int] = field(default=None, repr=False)

    @property
    def total_mass(self) -> float:
        return float(sum(l.mass for l in self.links))

    def body_index(self, name: str) -> int:
        return self.body_names.index(name)


def _as_vec3(x, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise ModelError(f"{what} must be a 3-vector, got {x!r}")
    return v


def _inertia_matrix(spec, what: str) -> np.ndarray:
    # [ixx, iyy, izz, ixy, ixz, iyz]
    v = np.asarray(spec, dtype=float)
    if v.shape != (6,):
        raise ModelError(f"{what}: inertia must be [ixx, iyy, izz, ixy, ixz, iyz]")
    ixx, iyy, izz, ixy, ixz, iyz = v
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def _rpy_matrix(rpy: np.ndarray) -> np.ndarray:
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def default_model_path() -> Path:
    return Path(importlib.resources.files("animbiped") / "assets" / "cassie_like.model")


def load_model(path: str | Path | None = None) -> RobotModel:
    """Load and validate a robot model file.

    Raises :class:`ModelError` with a descriptive message on schema
    violations, non-tree topology, non-positive masses, non-SPD inertias, or
    a wrong actuation count.
    """
    path = Path(path) if path is not None else default_model_path()
    if not path.exists():
        raise ModelError(f"model file not found: {path}")
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ModelError("model file is not a mapping")
    if doc.get("format") != MODEL_FORMAT:
        raise ModelError(f"unsupported model format {doc.get('format')!r}, "
                         f"expected {MODEL_FORMAT!r}")

    links = []
    for i, ld in enumerate(doc.get("links", [])):
        what = f"links[{i}] ({ld.get('name', '?')})"
        mass = float(ld.get("mass", 0.0))
        if mass <= 0.0:
            raise ModelError(f"{what}: mass must be > 0, got {mass}")
        inertia = _inertia_matrix(ld.get("inertia"), what)
        if not np.allclose(inertia, inertia.T):
            raise ModelError(f"{what}: inertia not symmetric")
        eigs = np.linalg.eigvalsh(inertia)
        if np.any(eigs <= 0.0):
            raise ModelError(f"{what}: inertia not positive definite "
                             f"(eigenvalues {eigs})")
        links.append(LinkSpec(name=str(ld["name"]), mass=mass,
                              com=_as_vec3(ld.get("com", (0, 0, 0)), what),
                              inertia=inertia))
    link_names = [l.name for l in links]
    if len(set(link_names)) != len(link_names):
        raise ModelError("duplicate link names")

    joints = []
    for i, jd in enumerate(doc.get("joints", [])):
        what = f"joints[{i}] ({jd.get('name', '?')})"
        kind = jd.get("kind")
        if kind not in ("revolute", "base-translation", "base-rotation"):
            raise ModelError(f"{what}: unknown kind {kind!r}")
        axis = _as_vec3(jd.get("axis"), what)
        n = np.linalg.norm(axis)
        if abs(n - 1.0) > 1e-9:
            raise ModelError(f"{what}: axis must be unit-norm, |axis| = {n}")
        lo, hi = (float(v) for v in jd.get("limits", (np.nan, np.nan)))
        if not lo < hi:
            raise ModelError(f"{what}: limits must satisfy q_min < q_max")
        actuated = bool(jd.get("actuated", False))
        effort = float(jd.get("effort", 0.0))
        if actuated and effort <= 0.0:
            raise ModelError(f"{what}: actuated joint needs a positive effort bound")
        origin = jd.get("origin", {})
        joints.append(JointSpec(
            name=str(jd["name"]), kind=kind, axis=axis,
            q_index=int(jd["q_index"]),
            parent=str(jd.get("parent", "world")), child=str(jd["child"]),
            origin_xyz=_as_vec3(origin.get("xyz", (0, 0, 0)), what),
            origin_rpy=_as_vec3(origin.get("rpy", (0, 0, 0)), what),
            limits=(lo, hi), actuated=actuated, effort=effort,
            gear=float(jd.get("gear", 1.0))))

    _validate_structure(links, joints)

    feet = {}
    for side in ("left", "right"):
        fd = doc.get("feet", {}).get(side)
        if fd is None:
            raise ModelError(f"missing feet.{side}")
        eps = np.asarray(fd.get("endpoints"), dtype=float)
        if eps.shape != (2, 3):
            raise ModelError(f"feet.{side}: endpoints must be 2x3")
        if fd.get("link") not in link_names:
            raise ModelError(f"feet.{side}: unknown link {fd.get('link')!r}")
        feet[side] = FootSpec(link=str(fd["link"]), endpoints=eps,
                              pivot=_as_vec3(fd.get("pivot", (0, 0, 0)),
                                             f"feet.{side}.pivot"))

    springs = doc.get("springs", {})
    k = np.zeros(4)
    c = np.zeros(4)
    for i, nm in enumerate(layout.SPRING_NAMES):
        sd = springs.get(nm)
        if sd is None:
            raise ModelError(f"missing springs.{nm}")
        k[i] = float(sd["stiffness"])
        c[i] = float(sd.get("damping", 0.0))
        if k[i] <= 0:
            raise ModelError(f"springs.{nm}: stiffness must be > 0")

    model = RobotModel(name=str(doc.get("name", path.stem)), links=links,
                       joints=joints, feet=feet, spring_constants=k,
                       spring_damping=c)
    _compile(model)
    return model


def _validate_structure(links: list[LinkSpec], joints: list[JointSpec]) -> None:
    if len(joints) != layout.NQ:
        raise ModelError(f"expected {layout.NQ} joints, got {len(joints)}")
    for i, (name, kind, axis, qi) in enumerate(BASE_JOINT_LAYOUT):
        j = joints[i]
        if (j.name, j.kind, j.q_index) != (name, kind, qi) or \
                not np.array_equal(j.axis, np.asarray(axis, dtype=float)):
            raise ModelError(
                f"joints[{i}] must be the canonical floating-base joint "
                f"{name!r} (kind={kind}, axis={axis}, q_index={qi})")
    for j in joints[6:]:
        if j.kind != "revolute":
            raise ModelError(f"{j.name}: only the first six joints may be "
                             "floating-base joints")
    q_indices = sorted(j.q_index for j in joints)
    if q_indices != list(range(layout.NQ)):
        raise ModelError("joint q_index values must be a permutation of 0..19")

    actuated = [j for j in joints if j.actuated]
    if len(actuated) != 10:
        raise ModelError(f"expected exactly 10 actuated joints, got {len(actuated)}")
    if sorted(j.q_index for j in actuated) != list(range(6, 16)):
        raise ModelError("actuated joints must occupy q indices 6..15")
    passive = [j for j in joints[6:] if not j.actuated]
    if len(passive) != 4 or sorted(j.q_index for j in passive) != [16, 17, 18, 19]:
        raise ModelError("expected exactly 4 passive spring joints at q indices 16..19")

    # tree check over physical links: each link has exactly one parent joint
    link_names = {l.name for l in links}
    seen_children = set()
    for j in joints:
        if j.child == "__base__":
            continue  # massless floating-base intermediates
        if j.child not in link_names:
            raise ModelError(f"{j.name}: unknown child link {j.child!r}")
        if j.child in seen_children:
            raise ModelError(f"link {j.child!r} has more than one parent joint "
                             "(not a tree)")
        seen_children.add(j.child)
    # reachability from pelvis
    unparented = link_names - seen_children
    if unparented:
        raise ModelError(f"links without a parent joint: {sorted(unparented)}")


def _compile(m: RobotModel) -> None:
    """Flatten the link/joint lists into arrays for the dynamics algorithms.

    Bodies are the 5 massless floating-base intermediates followed by the
    physical links in joint order; body i is driven by joint i.
    """
    link_by_name = {l.name: l for l in m.links}
    nb = len(m.joints)
    m.nb = nb
    m.parent = np.full(nb, -1, dtype=int)
    m.axes = np.zeros((nb, 3))
    m.prismatic = np.zeros(nb, dtype=bool)
    m.q_index = np.zeros(nb, dtype=int)
    m.X_rot = np.zeros((nb, 3, 3))
    m.X_trans = np.zeros((nb, 3))
    m.body_mass = np.zeros(nb)
    m.body_com = np.zeros((nb, 3))
    m.body_inertia = np.zeros((nb, 3, 3))
    m.body_names = []

    body_of_link: dict[str, int] = {}
    for i, j in enumerate(m.joints):
        m.axes[i] = j.axis
        m.prismatic[i] = j.kind == "base-translation"
        m.q_index[i] = j.q_index
        m.X_rot[i] = _rpy_matrix(j.origin_rpy)
        m.X_trans[i] = j.origin_xyz
        if i < 6:
            m.parent[i] = i - 1
        else:
            if j.parent not in body_of_link:
                raise ModelError(f"{j.name}: parent link {j.parent!r} not yet "
                                 "defined; joints must be listed parent-first")
            m.parent[i] = body_of_link[j.parent]
        if i < 5:
            m.body_names.append(f"__{j.name}__")   # massless intermediate
        else:
            link = link_by_name.get(j.child)
            if link is None:
                raise ModelError(f"{j.name}: child {j.child!r} is not a link")
            m.body_mass[i] = link.mass
            m.body_com[i] = link.com
            m.body_inertia[i] = link.inertia
            m.body_names.append(link.name)
            body_of_link[link.name] = i

    if len(body_of_link) != len(m.links):
        raise ModelError("some links are not connected to the tree")

    m.q_min = np.zeros(layout.NQ)
    m.q_max = np.zeros(layout.NQ)
    u_max = np.zeros(layout.NQ)
    for j in m.joints:
        m.q_min[j.q_index], m.q_max[j.q_index] = j.limits
        if j.actuated:
            u_max[j.q_index] = j.effort
    m.u_max = u_max[layout.MOTORS]
    gear = np.ones(layout.NQ)
    for j in m.joints:
        if j.actuated:
            gear[j.q_index] = j.gear
    m.gear = gear[layout.MOTORS]
    m.B = np.zeros((layout.NQ, 10))
    for col, qi in enumerate(range(6, 16)):
        m.B[qi, col] = gear[qi]

    m.foot_body = {s: body_of_link[m.feet[s].link] for s in ("left", "right")}
    # hip pivot = origin of the hip pitch joint frame
    m.hip_pivot_body = {}
    for s, suffix in (("left", "L"), ("right", "R")):
        name = f"hip_pitch_{suffix}"
        idx = [i for i, j in enumerate(m.joints) if j.name == name]
        if not idx:
            raise ModelError(f"model must define joint {name!r}")
        m.hip_pivot_body[s] = idx[0]
