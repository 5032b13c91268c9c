"""Articulated rigid-body model: link tree, humanoid templates, FK/velocity/IK.

Every non-root joint is a 3-DoF ball joint. A joint quaternion is the child
orientation relative to its parent (``Q_child = Q_parent * q_joint``), and a
joint angular velocity is expressed in the parent-link frame. Link frames sit
at the link's centre of mass; ``anchor_p``/``anchor_c`` locate the joint in the
parent and child frames. At rest (all joint quaternions identity) every link
frame is aligned with the world axes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .mathcore import InertiaSpec, cross, quat_conj, quat_mul, quat_rotate, shape_inertia, shape_volume
from .shapes import Box, Capsule, Shape, Sphere, encode_shape, shape_from_dict, shape_to_dict

DEFAULT_DENSITY = 1000.0  # kg/m^3
TEMPLATES = ("humanoid22", "humanoid55", "chain3")


class BodySpecError(ValueError):
    pass


@dataclass
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


@dataclass
class SpatialVelocity:
    linear: np.ndarray
    angular: np.ndarray

    @classmethod
    def zero(cls) -> "SpatialVelocity":
        return cls(np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class LinkSpec:
    name: str
    parent: Optional[int]
    anchor_p: np.ndarray
    anchor_c: np.ndarray
    shape: Shape
    inertia: InertiaSpec
    collision_enabled: bool = True
    friction: float = 1.0
    restitution: float = 0.0


@dataclass(frozen=True)
class ArticulatedBodySpec:
    name: str
    links: tuple[LinkSpec, ...]

    def __post_init__(self):
        if not self.links:
            raise BodySpecError("body needs at least one link")
        if self.links[0].parent is not None:
            raise BodySpecError("link 0 must be the root")
        for i, link in enumerate(self.links[1:], start=1):
            if link.parent is None:
                raise BodySpecError(f"link {i} ({link.name}) is a second root")
            if not 0 <= link.parent < i:
                raise BodySpecError(f"link {i} ({link.name}): parent {link.parent} must precede it")
            if not (np.all(np.isfinite(link.anchor_p)) and np.all(np.isfinite(link.anchor_c))):
                raise BodySpecError(f"link {i} ({link.name}): non-finite anchor")
        for link in self.links:
            if link.inertia.mass <= 0:
                raise BodySpecError(f"link {link.name}: mass must be positive")

    @property
    def link_count(self) -> int:
        return len(self.links)

    @property
    def joint_count(self) -> int:
        return len(self.links) - 1

    @property
    def total_mass(self) -> float:
        return float(sum(l.inertia.mass for l in self.links))

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KeyError(name)

    @cached_property
    def arrays(self) -> "BodyArrays":
        return BodyArrays.from_spec(self)


@dataclass
class BodyArrays:
    """Flat numpy view of a body spec, as consumed by the kernels."""

    parent: np.ndarray
    anchor_p: np.ndarray
    anchor_c: np.ndarray
    mass: np.ndarray
    inertia: np.ndarray
    com: np.ndarray
    shape_type: np.ndarray
    shape_params: np.ndarray
    collide: np.ndarray
    friction: np.ndarray
    restitution: np.ndarray

    @classmethod
    def from_spec(cls, spec: ArticulatedBodySpec) -> "BodyArrays":
        links = spec.links
        enc = [encode_shape(l.shape) for l in links]
        return cls(
            parent=np.array([-1 if l.parent is None else l.parent for l in links], dtype=np.int64),
            anchor_p=np.array([l.anchor_p for l in links], dtype=float),
            anchor_c=np.array([l.anchor_c for l in links], dtype=float),
            mass=np.array([l.inertia.mass for l in links], dtype=float),
            inertia=np.array([l.inertia.principal for l in links], dtype=float),
            com=np.array([l.inertia.com for l in links], dtype=float),
            shape_type=np.array([e[0] for e in enc], dtype=np.int64),
            shape_params=np.array([e[1] for e in enc], dtype=float),
            collide=np.array([l.collision_enabled for l in links], dtype=np.bool_),
            friction=np.array([l.friction for l in links], dtype=float),
            restitution=np.array([l.restitution for l in links], dtype=float),
        )


@dataclass
class JointSpaceState:
    root_pose: Pose
    joint_quats: np.ndarray  # (J, 4), child relative to parent
    anchor_residual: float = 0.0

    def copy(self) -> "JointSpaceState":
        return JointSpaceState(
            Pose(self.root_pose.position.copy(), self.root_pose.orientation.copy()),
            self.joint_quats.copy(),
            self.anchor_residual,
        )


@dataclass
class LinkSpaceState:
    poses: list[Pose]
    velocities: list[SpatialVelocity]


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def fk_kernel(parent, anchor_p, anchor_c, root_pos, root_quat, joint_quats):
    n = parent.shape[0]
    pos = np.empty((n, 3))
    quat = np.empty((n, 4))
    pos[0] = root_pos
    quat[0] = root_quat
    for i in range(1, n):
        p = parent[i]
        quat[i] = quat_mul(quat[p], joint_quats[i - 1])
        pos[i] = pos[p] + quat_rotate(quat[p], anchor_p[i]) - quat_rotate(quat[i], anchor_c[i])
    return pos, quat


@njit(cache=True)
def velocity_kernel(parent, anchor_p, anchor_c, quat, gen_vel):
    """Link (linear, angular) world velocities from generalized velocity.

    ``gen_vel`` = [root linear (3), root angular world (3), joint omegas in parent frame (3 each)].
    """
    n = parent.shape[0]
    lin = np.empty((n, 3))
    ang = np.empty((n, 3))
    lin[0] = gen_vel[0:3]
    ang[0] = gen_vel[3:6]
    for i in range(1, n):
        p = parent[i]
        wj = gen_vel[6 + 3 * (i - 1): 9 + 3 * (i - 1)]
        ang[i] = ang[p] + quat_rotate(quat[p], wj)
        rp = quat_rotate(quat[p], anchor_p[i])
        rc = quat_rotate(quat[i], anchor_c[i])
        lin[i] = lin[p] + cross(ang[p], rp) - cross(ang[i], rc)
    return lin, ang


@njit(cache=True)
def ik_kernel(parent, anchor_p, anchor_c, pos, quat):
    n = parent.shape[0]
    jq = np.empty((max(n - 1, 0), 4))
    residual = 0.0
    for i in range(1, n):
        p = parent[i]
        q = quat_mul(quat_conj(quat[p]), quat[i])
        if q[0] < 0.0:
            q = -q
        jq[i - 1] = q
        expect = pos[p] + quat_rotate(quat[p], anchor_p[i]) - quat_rotate(quat[i], anchor_c[i])
        d = pos[i] - expect
        r = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if r > residual:
            residual = r
    return jq, residual


# ---------------------------------------------------------------------------
# public API


def _check_js(spec: ArticulatedBodySpec, js: JointSpaceState) -> None:
    if js.joint_quats.shape != (spec.joint_count, 4):
        raise BodySpecError(f"expected {spec.joint_count} joint quaternions, got {js.joint_quats.shape[0]}")


def forward_kinematics_arrays(spec: ArticulatedBodySpec, js: JointSpaceState) -> tuple[np.ndarray, np.ndarray]:
    _check_js(spec, js)
    a = spec.arrays
    return fk_kernel(
        a.parent,
        a.anchor_p,
        a.anchor_c,
        np.asarray(js.root_pose.position, dtype=float),
        np.asarray(js.root_pose.orientation, dtype=float),
        np.ascontiguousarray(js.joint_quats, dtype=float).reshape(-1, 4),
    )


def forward_kinematics(spec: ArticulatedBodySpec, js: JointSpaceState) -> list[Pose]:
    pos, quat = forward_kinematics_arrays(spec, js)
    return [Pose(pos[i], quat[i]) for i in range(spec.link_count)]


def pack_generalized_velocity(root_vel: SpatialVelocity, joint_omegas: np.ndarray) -> np.ndarray:
    return np.concatenate([root_vel.linear, root_vel.angular, np.asarray(joint_omegas, dtype=float).reshape(-1)])


def forward_velocity(
    spec: ArticulatedBodySpec, poses: Sequence[Pose], root_vel: SpatialVelocity, joint_omegas: np.ndarray
) -> list[SpatialVelocity]:
    """Propagate root velocity and parent-frame joint omegas down the tree."""
    joint_omegas = np.asarray(joint_omegas, dtype=float).reshape(-1, 3)
    if joint_omegas.shape[0] != spec.joint_count:
        raise BodySpecError(f"expected {spec.joint_count} joint omegas, got {joint_omegas.shape[0]}")
    a = spec.arrays
    quat = np.array([p.orientation for p in poses], dtype=float)
    lin, ang = velocity_kernel(a.parent, a.anchor_p, a.anchor_c, quat, pack_generalized_velocity(root_vel, joint_omegas))
    return [SpatialVelocity(lin[i], ang[i]) for i in range(spec.link_count)]


def joint_state_from_links(spec: ArticulatedBodySpec, poses: Sequence[Pose]) -> JointSpaceState:
    """Closed-form recovery of joint rotations from link orientations.

    Link positions other than the root's are not used: the returned state is the
    projection onto the joint constraints, and ``anchor_residual`` reports the
    largest positional mismatch of the input at any joint.
    """
    if len(poses) != spec.link_count:
        raise BodySpecError(f"expected {spec.link_count} poses, got {len(poses)}")
    a = spec.arrays
    pos = np.array([p.position for p in poses], dtype=float)
    quat = np.array([p.orientation for p in poses], dtype=float)
    jq, residual = ik_kernel(a.parent, a.anchor_p, a.anchor_c, pos, quat)
    root = Pose(pos[0].copy(), quat[0].copy())
    return JointSpaceState(root, jq, float(residual))


def rest_state(spec: ArticulatedBodySpec, root_position=(0.0, 0.0, 0.0)) -> JointSpaceState:
    jq = np.zeros((spec.joint_count, 4))
    jq[:, 0] = 1.0
    return JointSpaceState(Pose(np.asarray(root_position, dtype=float), np.array([1.0, 0, 0, 0])), jq)


def center_of_mass(spec: ArticulatedBodySpec, poses: Sequence[Pose]) -> np.ndarray:
    total = np.zeros(3)
    for link, pose in zip(spec.links, poses):
        total += link.inertia.mass * (pose.position + quat_rotate(pose.orientation, link.inertia.com))
    return total / spec.total_mass


# ---------------------------------------------------------------------------
# templates

# (name, parent, joint position at rest, shape centre at rest, shape, mass fraction)
# body coordinates: pelvis centre at origin, x forward, y left, z up
_H22 = [
    ("pelvis", None, None, (0.0, 0.0, 0.0), Box(np.array([0.09, 0.14, 0.07])), 0.142),
    ("spine1", "pelvis", (0.0, 0.0, 0.07), (0.0, 0.0, 0.13), Box(np.array([0.08, 0.13, 0.06])), 0.09),
    ("spine2", "spine1", (0.0, 0.0, 0.19), (0.0, 0.0, 0.25), Box(np.array([0.09, 0.14, 0.06])), 0.09),
    ("spine3", "spine2", (0.0, 0.0, 0.31), (0.0, 0.0, 0.39), Box(np.array([0.09, 0.16, 0.08])), 0.12),
    ("neck", "spine3", (0.0, 0.0, 0.47), (0.0, 0.0, 0.52), Capsule(0.05, 0.02), 0.02),
    ("head", "neck", (0.0, 0.0, 0.57), (0.0, 0.0, 0.67), Sphere(0.10), 0.07),
]
for _side, _s in (("l", 1.0), ("r", -1.0)):
    _H22 += [
        (f"{_side}_clavicle", "spine3", (0.0, 0.03 * _s, 0.44), (0.0, 0.11 * _s, 0.44), Box(np.array([0.04, 0.08, 0.03])), 0.02),
        (f"{_side}_upperarm", f"{_side}_clavicle", (0.0, 0.21 * _s, 0.44), (0.0, 0.21 * _s, 0.30), Capsule(0.045, 0.10), 0.028),
        (f"{_side}_forearm", f"{_side}_upperarm", (0.0, 0.21 * _s, 0.16), (0.0, 0.21 * _s, 0.03), Capsule(0.04, 0.09), 0.016),
        (f"{_side}_hand", f"{_side}_forearm", (0.0, 0.21 * _s, -0.09), (0.0, 0.21 * _s, -0.16), Box(np.array([0.045, 0.02, 0.07])), 0.006),
    ]
for _side, _s in (("l", 1.0), ("r", -1.0)):
    _H22 += [
        (f"{_side}_thigh", "pelvis", (0.0, 0.09 * _s, -0.06), (0.0, 0.09 * _s, -0.27), Capsule(0.07, 0.14), 0.10),
        (f"{_side}_shin", f"{_side}_thigh", (0.0, 0.09 * _s, -0.48), (0.0, 0.09 * _s, -0.69), Capsule(0.05, 0.16), 0.0465),
        (f"{_side}_foot", f"{_side}_shin", (0.0, 0.09 * _s, -0.90), (0.04, 0.09 * _s, -0.94), Box(np.array([0.08, 0.045, 0.035])), 0.0115),
        (f"{_side}_toe", f"{_side}_foot", (0.12, 0.09 * _s, -0.95), (0.16, 0.09 * _s, -0.955), Box(np.array([0.04, 0.045, 0.02])), 0.006),
    ]

# humanoid22 rest-pose lowest point (toe/foot underside) relative to the pelvis centre
HUMANOID_FOOT_DEPTH = 0.975
HUMANOID_BASE_MASS = 70.0


def _h55_rows():
    rows = [list(r) for r in _H22]
    idx = {r[0]: i for i, r in enumerate(rows)}
    # head keeps most of its share; jaw and eyes split the rest
    rows[idx["head"]][5] = 0.066
    rows += [
        ["jaw", "head", (0.04, 0.0, 0.62), (0.07, 0.0, 0.60), Box(np.array([0.03, 0.04, 0.02])), 0.003],
        ["l_eye", "head", (0.07, 0.035, 0.69), (0.085, 0.035, 0.69), Sphere(0.012), 0.0005],
        ["r_eye", "head", (0.07, -0.035, 0.69), (0.085, -0.035, 0.69), Sphere(0.012), 0.0005],
    ]
    for side, s in (("l", 1.0), ("r", -1.0)):
        rows[idx[f"{side}_hand"]][5] = 0.0036
        # five fingers spread along x under the palm, three phalanges each
        for f, fx in enumerate((0.04, 0.02, 0.0, -0.02, -0.035)):
            parent = f"{side}_hand"
            top = -0.23
            for k in range(3):
                name = f"{side}_finger{f}_{k}"
                joint = (fx, 0.21 * s, top)
                centre = (fx, 0.21 * s, top - 0.018)
                rows.append([name, parent, joint, centre, Capsule(0.008, 0.01), 0.00016])
                parent = name
                top -= 0.036
    return rows


def _chain3_links() -> tuple[LinkSpec, ...]:
    shape = Box(np.array([0.5, 0.05, 0.05]))
    inertia = shape_inertia(shape, 1.0)
    links = [LinkSpec("link0", None, np.zeros(3), np.zeros(3), shape, inertia)]
    for i in (1, 2):
        links.append(LinkSpec(f"link{i}", i - 1, np.array([0.5, 0.0, 0.0]), np.array([-0.5, 0.0, 0.0]), shape, inertia))
    return tuple(links)


def _links_from_rows(rows, scale: float, base_mass: float) -> tuple[LinkSpec, ...]:
    centres = {r[0]: np.asarray(r[3], dtype=float) * scale for r in rows}
    names = [r[0] for r in rows]
    links = []
    for name, parent, joint, centre, shape, frac in rows:
        shape = _scale_shape(shape, scale)
        inertia = shape_inertia(shape, frac * base_mass * scale**3)
        c = centres[name]
        if parent is None:
            links.append(LinkSpec(name, None, np.zeros(3), np.zeros(3), shape, inertia))
            continue
        j = np.asarray(joint, dtype=float) * scale
        links.append(
            LinkSpec(name, names.index(parent), j - centres[parent], j - c, shape, inertia)
        )
    return tuple(links)


def _scale_shape(shape: Shape, s: float) -> Shape:
    if isinstance(shape, Sphere):
        return Sphere(shape.radius * s)
    if isinstance(shape, Capsule):
        return Capsule(shape.radius * s, shape.half_length * s)
    if isinstance(shape, Box):
        return Box(shape.half_extents * s)
    raise BodySpecError(f"cannot scale {type(shape).__name__}")


def build_humanoid(template_name: str, scale: float = 1.0) -> ArticulatedBodySpec:
    """Build one of the bundled templates: humanoid22, humanoid55 or chain3."""
    if not scale > 0:
        raise BodySpecError(f"scale must be positive, got {scale}")
    if template_name == "humanoid22":
        return ArticulatedBodySpec("humanoid22", _links_from_rows(_H22, scale, HUMANOID_BASE_MASS))
    if template_name == "humanoid55":
        return ArticulatedBodySpec("humanoid55", _links_from_rows(_h55_rows(), scale, HUMANOID_BASE_MASS))
    if template_name == "chain3":
        links = _chain3_links()
        if scale != 1.0:
            links = tuple(
                LinkSpec(
                    l.name, l.parent, l.anchor_p * scale, l.anchor_c * scale, _scale_shape(l.shape, scale),
                    shape_inertia(_scale_shape(l.shape, scale), l.inertia.mass * scale**3),
                )
                for l in links
            )
        return ArticulatedBodySpec("chain3", links)
    raise BodySpecError(f"unknown template {template_name!r}; expected one of {TEMPLATES}")


# ---------------------------------------------------------------------------
# JSON


def body_to_dict(spec: ArticulatedBodySpec) -> dict:
    return {
        "name": spec.name,
        "links": [
            {
                "name": l.name,
                "parent": l.parent,
                "anchor_p": l.anchor_p.tolist(),
                "anchor_c": l.anchor_c.tolist(),
                "shape": shape_to_dict(l.shape),
                "mass": l.inertia.mass,
                "collision": l.collision_enabled,
                "friction": l.friction,
                "restitution": l.restitution,
            }
            for l in spec.links
        ],
    }


def body_from_dict(doc: dict) -> ArticulatedBodySpec:
    raw = doc.get("links")
    if not isinstance(raw, list) or not raw:
        raise BodySpecError("body file needs a non-empty 'links' list")
    names = [str(l.get("name", f"link{i}")) for i, l in enumerate(raw)]
    links = []
    for i, l in enumerate(raw):
        parent = l.get("parent")
        if isinstance(parent, str):
            if parent not in names:
                raise BodySpecError(f"links[{i}].parent: unknown link {parent!r}")
            parent = names.index(parent)
        shape = shape_from_dict(l["shape"])
        mass = l.get("mass")
        if mass is None:
            mass = DEFAULT_DENSITY * shape_volume(shape)
        links.append(
            LinkSpec(
                names[i],
                parent,
                np.asarray(l.get("anchor_p", [0, 0, 0]), dtype=float),
                np.asarray(l.get("anchor_c", [0, 0, 0]), dtype=float),
                shape,
                shape_inertia(shape, float(mass)),
                bool(l.get("collision", True)),
                float(l.get("friction", 1.0)),
                float(l.get("restitution", 0.0)),
            )
        )
    return ArticulatedBodySpec(str(doc.get("name", "body")), tuple(links))


def load_body(path) -> ArticulatedBodySpec:
    with open(path) as f:
        return body_from_dict(json.load(f))
