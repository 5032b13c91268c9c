"""Scenario files, trajectory persistence and OBJ snapshots.

A scenario is a JSON document naming a body, a motion, a scene, solver
settings and a control mode. Validation is done by pydantic; every error is
reported with a dotted field path such as ``scene.objects[0].mass``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .body import ArticulatedBodySpec, BodySpecError, Pose, SpatialVelocity, build_humanoid, load_body
from .dynamics import ControlMode, FrameRecord, HalfPhysics, PositionTeleport, SimConfig, TorquePD, Trajectory
from .kinematics import MotionError, MotionSequence, load_motion, synth_motion
from .mathcore import quat_rotate
from .scene import RigidObjectSpec, SceneError, SceneSpec, StaticCollider
from .shapes import Box, Capsule, HalfSpace, Shape, ShapeError, Sphere, shape_from_dict, shape_to_dict


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field when known."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class TrajectoryFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SphereModel(_Model):
    type: Literal["sphere"]
    radius: float = Field(gt=0)


class CapsuleModel(_Model):
    type: Literal["capsule"]
    radius: float = Field(gt=0)
    half_length: float = Field(gt=0)


class BoxModel(_Model):
    type: Literal["box"]
    half_extents: Vec3

    @field_validator("half_extents")
    @classmethod
    def _positive(cls, v):
        if min(v) <= 0:
            raise ValueError("half extents must be positive")
        return v


class HalfSpaceModel(_Model):
    type: Literal["halfspace"]
    normal: Vec3 = (0.0, 0.0, 1.0)
    offset: float = 0.0

    @field_validator("normal")
    @classmethod
    def _unit(cls, v):
        n = math.sqrt(sum(x * x for x in v))
        if abs(n - 1.0) > 1e-9:
            raise ValueError("normal must be unit length")
        return v


class TriMeshModel(_Model):
    type: Literal["trimesh"]
    vertices: list[Vec3]
    triangles: list[tuple[int, int, int]]


ShapeModel = Annotated[
    Union[SphereModel, CapsuleModel, BoxModel, HalfSpaceModel, TriMeshModel], Field(discriminator="type")
]


class PoseModel(_Model):
    position: Vec3 = (0.0, 0.0, 0.0)
    orientation: Quat = (1.0, 0.0, 0.0, 0.0)

    @field_validator("orientation")
    @classmethod
    def _unit(cls, q):
        n = math.sqrt(sum(x * x for x in q))
        if abs(n - 1.0) > 1e-3:
            raise ValueError("orientation must be a unit quaternion (w, x, y, z)")
        return tuple(x / n for x in q)

    def pose(self) -> Pose:
        return Pose(np.array(self.position, dtype=float), np.array(self.orientation, dtype=float))


class VelocityModel(_Model):
    linear: Vec3 = (0.0, 0.0, 0.0)
    angular: Vec3 = (0.0, 0.0, 0.0)


class StaticModel(_Model):
    name: Optional[str] = None
    shape: ShapeModel
    pose: PoseModel = PoseModel()
    friction: float = Field(1.0, ge=0)


class ObjectModel(_Model):
    name: str
    shape: Annotated[Union[SphereModel, CapsuleModel, BoxModel], Field(discriminator="type")]
    mass: float = Field(gt=0)
    friction: float = Field(0.5, ge=0)
    restitution: float = Field(0.0, ge=0, le=1)
    pose: PoseModel = PoseModel()
    velocity: VelocityModel = VelocityModel()


class SceneModel(_Model):
    static: list[StaticModel] = []
    objects: list[ObjectModel] = []


class BodyModel(_Model):
    template: Optional[str] = None
    path: Optional[str] = None
    scale: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.template is None) == (self.path is None):
            raise ValueError("give exactly one of 'template' or 'path'")
        return self


class SynthModel(BaseModel):
    model_config = ConfigDict(extra="allow")
    kind: Literal["static", "walk_forward", "sine_joints", "kick", "squat_sit"]


class MotionModel(_Model):
    path: Optional[str] = None
    synth: Optional[SynthModel] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synth is None):
            raise ValueError("give exactly one of 'path' or 'synth'")
        return self


class ConfigModel(_Model):
    substeps: int = Field(8, ge=1)
    lambda_: float = Field(0.0, ge=0, alias="lambda")
    gravity: Vec3 = (0.0, 0.0, -9.81)
    slop: float = Field(0.002, ge=0)
    solver_iterations: int = Field(16, ge=1)
    baumgarte_beta: float = Field(0.2, ge=0, le=1)
    joint_damping: float = Field(0.0, ge=0)
    human_gravity: bool = False
    max_angular_speed: Optional[float] = Field(None, gt=0)
    recompute_root_from_actual: bool = False


class PDModel(_Model):
    kp: float = Field(300.0, ge=0)
    kd: float = Field(10.0, ge=0)


class OutputsModel(_Model):
    trajectory: Optional[str] = None
    metrics: Optional[str] = None


class ScenarioModel(_Model):
    body: BodyModel
    motion: MotionModel
    scene: SceneModel = SceneModel()
    config: ConfigModel = ConfigModel()
    mode: Literal["hp", "pd", "teleport"] = "hp"
    pd: PDModel = PDModel()
    outputs: OutputsModel = OutputsModel()


def _loc_path(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        elif part in ("sphere", "capsule", "box", "halfspace", "trimesh"):
            continue  # discriminator tag inserted by pydantic
        else:
            out += ("." if out else "") + str(part)
    return out


# ---------------------------------------------------------------------------
# resolved scenario


@dataclass
class ScenarioFile:
    spec: ArticulatedBodySpec
    seq: MotionSequence
    scene: SceneSpec
    config: SimConfig
    mode: ControlMode
    outputs: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)


def _shape(m, path: str) -> Shape:
    try:
        return shape_from_dict(m.model_dump())
    except ShapeError as e:
        raise ScenarioError(str(e), path) from None


def _mode(name: str, lam: float, pd: PDModel) -> ControlMode:
    if name == "hp":
        return HalfPhysics(lam)
    if name == "pd":
        return TorquePD(pd.kp, pd.kd)
    return PositionTeleport()


def build_scenario(doc: dict, base_dir: Optional[os.PathLike] = None) -> ScenarioFile:
    """Validate a parsed scenario document and resolve its body, motion and scene."""
    try:
        m = ScenarioModel.model_validate(doc)
    except ValidationError as e:
        err = e.errors()[0]
        raise ScenarioError(err["msg"], _loc_path(err["loc"])) from None
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    try:
        if m.body.template is not None:
            spec = build_humanoid(m.body.template, m.body.scale)
        else:
            spec = load_body(base / m.body.path)
    except FileNotFoundError as e:
        raise ScenarioError(f"file not found: {e.filename}", "body.path") from None
    except (BodySpecError, ShapeError, ValueError) as e:
        raise ScenarioError(str(e), "body") from None

    try:
        if m.motion.path is not None:
            seq = load_motion(base / m.motion.path)
        else:
            params = m.motion.synth.model_dump()
            kind = params.pop("kind")
            params.setdefault("template", m.body.template or "humanoid22")
            params.setdefault("scale", m.body.scale)
            seq = synth_motion(kind, params)
    except FileNotFoundError as e:
        raise ScenarioError(f"file not found: {e.filename}", "motion.path") from None
    except (MotionError, ValueError, TypeError) as e:
        raise ScenarioError(str(e), "motion") from None
    if seq.joint_count != spec.joint_count:
        raise ScenarioError(f"motion has {seq.joint_count} joints, body has {spec.joint_count}", "motion")

    static = []
    for i, s in enumerate(m.scene.static):
        shape = _shape(s.shape, f"scene.static[{i}].shape")
        static.append(StaticCollider(s.name or f"static{i}", shape, s.pose.pose(), s.friction))
    objects = []
    for i, o in enumerate(m.scene.objects):
        objects.append(
            RigidObjectSpec(
                o.name, _shape(o.shape, f"scene.objects[{i}].shape"), o.mass, o.friction, o.restitution,
                o.pose.pose(), SpatialVelocity(np.array(o.velocity.linear), np.array(o.velocity.angular)),
            )
        )
    try:
        scene = SceneSpec(static, objects)
    except SceneError as e:
        raise ScenarioError(str(e), "scene") from None

    c = m.config
    config = SimConfig(
        gravity=tuple(c.gravity), substeps=c.substeps, solver_iterations=c.solver_iterations, slop=c.slop,
        baumgarte_beta=c.baumgarte_beta, joint_damping=c.joint_damping, human_gravity=c.human_gravity,
        max_angular_speed=c.max_angular_speed, recompute_root_from_actual=c.recompute_root_from_actual,
    )
    outputs = {k: str(base / v) for k, v in m.outputs.model_dump().items() if v is not None}
    return ScenarioFile(spec, seq, scene, config, _mode(m.mode, c.lambda_, m.pd), outputs, doc)


def load_scenario(data: bytes | str, base_dir: Optional[os.PathLike] = None) -> ScenarioFile:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    return build_scenario(doc, base_dir)


def load_scenario_file(path: os.PathLike) -> ScenarioFile:
    p = Path(path)
    return load_scenario(p.read_bytes(), p.parent)


# ---------------------------------------------------------------------------
# trajectories as JSON lines


def _record_to_dict(rec: FrameRecord, names: list[str]) -> dict:
    return {
        "frame": rec.frame,
        "time": rec.time,
        "root_pos": rec.root_pos.tolist(),
        "root_quat": rec.root_quat.tolist(),
        "joints": rec.joints.tolist(),
        "links": [{"pos": p.tolist(), "quat": q.tolist()} for p, q in zip(rec.link_pos, rec.link_quat)],
        "objects": [
            {
                "name": names[i],
                "pos": rec.obj_pos[i].tolist(),
                "quat": rec.obj_quat[i].tolist(),
                "lin_vel": rec.obj_lin[i].tolist(),
                "ang_vel": rec.obj_ang[i].tolist(),
            }
            for i in range(len(names))
        ],
    }


def _arr(v, shape) -> np.ndarray:
    a = np.array(v, dtype=float)
    return a.reshape(shape)


def _record_from_dict(d: dict) -> tuple[FrameRecord, list[str]]:
    links = d["links"]
    objs = d["objects"]
    rec = FrameRecord(
        int(d["frame"]),
        float(d["time"]),
        _arr(d["root_pos"], 3),
        _arr(d["root_quat"], 4),
        _arr(d["joints"], (-1, 4)),
        _arr([l["pos"] for l in links], (-1, 3)),
        _arr([l["quat"] for l in links], (-1, 4)),
        _arr([o["pos"] for o in objs], (-1, 3)),
        _arr([o["quat"] for o in objs], (-1, 4)),
        _arr([o["lin_vel"] for o in objs], (-1, 3)),
        _arr([o["ang_vel"] for o in objs], (-1, 3)),
    )
    return rec, [str(o["name"]) for o in objs]


def trajectory_lines(traj: Trajectory) -> list[str]:
    # json writes floats with repr, the shortest text that parses back to the same double
    return [json.dumps(_record_to_dict(r, traj.object_names), separators=(",", ":")) for r in traj.records]


def write_trajectory(traj: Trajectory, path: os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in trajectory_lines(traj):
            f.write(line)
            f.write("\n")


def read_trajectory(path: os.PathLike) -> Trajectory:
    records = []
    names: Optional[list[str]] = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec, rec_names = _record_from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise TrajectoryFormatError(f"{path}:{lineno}: malformed record ({e})") from None
            if names is None:
                names = rec_names
            elif rec_names != names:
                raise TrajectoryFormatError(f"{path}:{lineno}: object list differs from the first record")
            records.append(rec)
    return Trajectory(names or [], records)


# ---------------------------------------------------------------------------
# OBJ snapshots

HALFSPACE_EXTENT = 10.0  # half side of the square drawn for an infinite plane


def _uv_sphere(radius: float, half_length: float, seg: int = 16, rings: int = 8):
    """Closed capsule (sphere when half_length is 0) with ``rings`` latitude bands."""
    verts = [(0.0, 0.0, radius + half_length)]
    half = rings // 2
    for i in range(1, rings):
        phi = math.pi * i / rings
        z = radius * math.cos(phi)
        r = radius * math.sin(phi)
        offs = [half_length] if i < half else ([-half_length] if i > half else [half_length, -half_length])
        if half_length == 0.0:
            offs = [0.0]
        for off in offs:
            for j in range(seg):
                th = 2 * math.pi * j / seg
                verts.append((r * math.cos(th), r * math.sin(th), z + off))
    verts.append((0.0, 0.0, -radius - half_length))
    n_rings = (len(verts) - 2) // seg
    faces = []
    bottom = len(verts) - 1
    for j in range(seg):
        faces.append((0, 1 + j, 1 + (j + 1) % seg))
    for k in range(n_rings - 1):
        a0, b0 = 1 + k * seg, 1 + (k + 1) * seg
        for j in range(seg):
            j1 = (j + 1) % seg
            faces.append((a0 + j, b0 + j, b0 + j1))
            faces.append((a0 + j, b0 + j1, a0 + j1))
    last = 1 + (n_rings - 1) * seg
    for j in range(seg):
        faces.append((last + j, bottom, last + (j + 1) % seg))
    return np.array(verts), faces


def _box_mesh(he):
    hx, hy, hz = he
    verts = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    # index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return verts, faces


def shape_mesh(shape: Shape) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Local-frame triangle mesh of a primitive, outward-facing."""
    if isinstance(shape, Sphere):
        return _uv_sphere(shape.radius, 0.0)
    if isinstance(shape, Capsule):
        return _uv_sphere(shape.radius, shape.half_length)
    if isinstance(shape, Box):
        return _box_mesh(shape.half_extents)
    if isinstance(shape, HalfSpace):
        n = shape.normal
        u = np.cross(n, [1.0, 0.0, 0.0] if abs(n[0]) < 0.9 else [0.0, 1.0, 0.0])
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        c = n * shape.offset
        e = HALFSPACE_EXTENT
        verts = np.array([c - e * u - e * v, c + e * u - e * v, c + e * u + e * v, c - e * u + e * v])
        return verts, [(0, 1, 2), (0, 2, 3)]
    return shape.vertices.copy(), [tuple(int(i) for i in t) for t in shape.triangles]


def _transform(verts: np.ndarray, pos, quat) -> np.ndarray:
    q = np.asarray(quat, dtype=float)
    return np.array([quat_rotate(q, v) for v in verts]).reshape(-1, 3) + np.asarray(pos, dtype=float)


def frame_obj_text(rec: FrameRecord, spec: ArticulatedBodySpec, scene: SceneSpec) -> str:
    lines = [f"# frame {rec.frame} t={rec.time!r}"]
    base = 1

    def group(name, shape, pos, quat):
        nonlocal base
        verts, faces = shape_mesh(shape)
        w = _transform(verts, pos, quat)
        lines.append(f"g {name}")
        lines.extend(f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in w)
        lines.extend(f"f {a + base} {b + base} {c + base}" for a, b, c in faces)
        base += len(w)

    for i, link in enumerate(spec.links):
        group(link.name, link.shape, rec.link_pos[i], rec.link_quat[i])
    for i, obj in enumerate(scene.objects):
        group(obj.name, obj.shape, rec.obj_pos[i], rec.obj_quat[i])
    for s in scene.static:
        group(s.name, s.shape, s.pose.position, s.pose.orientation)
    return "\n".join(lines) + "\n"


def export_frame_obj(rec: FrameRecord, spec: ArticulatedBodySpec, scene: SceneSpec, path: os.PathLike) -> None:
    """Write one frame as a Wavefront OBJ with a named group per link, object and collider."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(frame_obj_text(rec, spec, scene))


# ---------------------------------------------------------------------------
# writing scenarios


def _pose_dict(p: Pose) -> dict:
    return {"position": p.position.tolist(), "orientation": p.orientation.tolist()}


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "static": [
            {"name": s.name, "shape": shape_to_dict(s.shape), "pose": _pose_dict(s.pose), "friction": s.friction}
            for s in scene.static
        ],
        "objects": [
            {
                "name": o.name,
                "shape": shape_to_dict(o.shape),
                "mass": o.mass,
                "friction": o.friction,
                "restitution": o.restitution,
                "pose": _pose_dict(o.initial_pose),
                "velocity": {
                    "linear": np.asarray(o.initial_velocity.linear).tolist(),
                    "angular": np.asarray(o.initial_velocity.angular).tolist(),
                },
            }
            for o in scene.objects
        ],
    }


def scenario_to_dict(body: dict, motion: dict, scene: SceneSpec, config: SimConfig, mode: ControlMode,
                     outputs: Optional[dict] = None) -> dict:
    """Scenario document for ``body``/``motion`` source entries (see the schema above)."""
    doc = {
        "body": body,
        "motion": motion,
        "scene": scene_to_dict(scene),
        "config": {
            "substeps": config.substeps,
            "lambda": mode.pjsc_lambda if isinstance(mode, HalfPhysics) else 0.0,
            "gravity": list(config.gravity),
            "slop": config.slop,
            "solver_iterations": config.solver_iterations,
            "baumgarte_beta": config.baumgarte_beta,
            "joint_damping": config.joint_damping,
            "human_gravity": config.human_gravity,
            "max_angular_speed": config.max_angular_speed,
            "recompute_root_from_actual": config.recompute_root_from_actual,
        },
        "mode": "hp" if isinstance(mode, HalfPhysics) else ("pd" if isinstance(mode, TorquePD) else "teleport"),
    }
    if isinstance(mode, TorquePD):
        doc["pd"] = {"kp": mode.kp, "kd": mode.kd}
    if outputs:
        doc["outputs"] = outputs
    return doc
