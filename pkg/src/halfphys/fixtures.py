"""Ready-made experiment setups used by the tests, the CLI examples and the bench.

Each builder returns a :class:`Fixture` holding everything ``dynamics.run``
needs. Geometry is expressed relative to the humanoid22 template at scale 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .body import ArticulatedBodySpec, LinkSpec, Pose, SpatialVelocity, build_humanoid
from .dynamics import ControlMode, HalfPhysics, SimConfig
from .kinematics import MotionSequence, synth_motion
from .mathcore import quat_from_axis_angle, shape_inertia
from .scene import RigidObjectSpec, SceneSpec, StaticCollider, floor
from .shapes import Box, Capsule, Sphere

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass
class Fixture:
    name: str
    spec: ArticulatedBodySpec
    seq: MotionSequence
    scene: SceneSpec
    config: SimConfig = field(default_factory=SimConfig)
    mode: ControlMode = field(default_factory=HalfPhysics)
    meta: dict = field(default_factory=dict)

    def with_mode(self, mode: ControlMode) -> "Fixture":
        return replace(self, mode=mode)

    def with_config(self, **kw) -> "Fixture":
        return replace(self, config=replace(self.config, **kw))


def _pose(x, y, z, quat=IDENTITY) -> Pose:
    return Pose(np.array([x, y, z], dtype=float), np.array(quat, dtype=float))


def _box(x, y, z, hx, hy, hz, name, friction=1.0) -> StaticCollider:
    return StaticCollider(name, Box(np.array([hx, hy, hz])), _pose(x, y, z), friction)


def free_space(kind: str = "walk_forward", frames: int = 300, template: str = "humanoid22") -> Fixture:
    spec = build_humanoid(template)
    seq = synth_motion(kind, {"frames": frames, "template": template})
    return Fixture(f"free_{kind}", spec, seq, SceneSpec())


def wall_walk(frames: int = 300, wall_gap: float = 0.5, speed: float = 0.3) -> Fixture:
    """Walk toward a thick wall whose face is ``wall_gap`` ahead of the toes."""
    spec = build_humanoid("humanoid22")
    seq = synth_motion("walk_forward", {"frames": frames, "speed": speed, "clearance": 0.02})
    face = 0.2 + wall_gap
    scene = SceneSpec(static=[floor(), _box(face + 0.5, 0.0, 1.1, 0.5, 1.5, 1.1, "wall")])
    return Fixture("wall_walk", spec, seq, scene, meta={"wall_face_x": face})


def sit_on_box(frames: int = 150, seat_height: float = 0.45) -> Fixture:
    """Squat down onto a box seat behind the body; the motion's pelvis sinks into the seat."""
    spec = build_humanoid("humanoid22")
    sit_back = 0.25
    # pelvis centre target ends 12 cm below the seat top
    seq = synth_motion(
        "squat_sit",
        {"frames": frames, "sit_height": seat_height - 0.12, "sit_back": sit_back, "sit_time": 0.5, "sit_duration": 2.0},
    )
    seat = _box(-sit_back - 0.1, 0.0, seat_height / 2.0, 0.25, 0.3, seat_height / 2.0, "seat")
    return Fixture("sit_on_box", spec, seq, SceneSpec(static=[seat]), meta={"seat_height": seat_height})


def kick_ball(ball_mass: float = 0.5, frames: int = 90, radius: float = 0.08, friction: float = 0.5, ball_x: float = 0.35) -> Fixture:
    """Right-leg kick at a ball resting on the floor in front of the right foot."""
    spec = build_humanoid("humanoid22")
    seq = synth_motion("kick", {"frames": frames, "kick_time": 0.5, "kick_duration": 0.6})
    ball = RigidObjectSpec("ball", Sphere(radius), ball_mass, friction=friction, initial_pose=_pose(ball_x, -0.09, radius))
    scene = SceneSpec(static=[floor()], objects=[ball])
    return Fixture("kick_ball", spec, seq, scene, meta={"ball_mass": ball_mass})


def arm_pillar(frames: int = 120, lam: float = 0.0) -> Fixture:
    """The right arm swings forward into a static pillar standing in its path."""
    spec = build_humanoid("humanoid22")
    fps = 30.0
    seq = synth_motion("static", {"frames": frames})
    jq = seq.joint_quats
    shoulder = spec.link_index("r_upperarm") - 1
    elbow = spec.link_index("r_forearm") - 1
    for t in range(frames):
        s = 0.5 - 0.5 * math.cos(2.0 * math.pi * t / fps / 2.0)
        # negative pitch about y swings the hanging arm forward
        jq[t, shoulder] = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), -1.4 * s)
        jq[t, elbow] = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), -0.3 * s)
    seq.canonicalize()
    pillar = StaticCollider("pillar", Capsule(0.05, 1.0), _pose(0.25, -0.26, 0.9))
    return Fixture("arm_pillar", spec, seq, SceneSpec(static=[pillar]), mode=HalfPhysics(lam))


def resting_stack(frames: int = 300, count: int = 3, size: float = 0.1, gap: float = 0.001) -> Fixture:
    """A column of boxes resting on the floor far from a motionless body."""
    spec = build_humanoid("humanoid22")
    seq = synth_motion("static", {"frames": frames, "root_xy": (-3.0, 0.0)})
    objects = [
        RigidObjectSpec(f"box{i}", Box(np.full(3, size)), 2.0, friction=0.6, initial_pose=_pose(0.0, 0.0, size * (2 * i + 1) + gap * (i + 1)))
        for i in range(count)
    ]
    return Fixture("resting_stack", spec, seq, SceneSpec(static=[floor()], objects=objects))


def bystander_object(frames: int = 300, clearance: float = 0.5) -> Fixture:
    """Walk past a resting box that stays ``clearance`` away from every body point."""
    fx = wall_walk(frames)
    spec, seq = fx.spec, fx.seq
    # the walk is planar in x; lateral reach of the body is under 0.3 m
    y = 0.3 + clearance + 0.1
    box = RigidObjectSpec("crate", Box(np.full(3, 0.1)), 5.0, friction=0.6, initial_pose=_pose(1.5, y, 0.101))
    return Fixture("bystander", spec, seq, SceneSpec(static=[floor()], objects=[box]), meta={"clearance": clearance})


def colliding_objects(frames: int = 60) -> Fixture:
    """Two boxes and a sphere flying into each other with gravity off (no statics)."""
    spec = build_humanoid("humanoid22")
    seq = synth_motion("static", {"frames": frames, "root_xy": (-5.0, 0.0)})
    objects = [
        RigidObjectSpec("a", Box(np.array([0.1, 0.1, 0.1])), 2.0, friction=0.4, initial_pose=_pose(0.0, 0.0, 1.0),
                        initial_velocity=SpatialVelocity(np.array([1.0, 0.05, 0.0]), np.array([0.0, 0.0, 1.0]))),
        RigidObjectSpec("b", Box(np.array([0.1, 0.15, 0.1])), 3.0, friction=0.4, restitution=0.5,
                        initial_pose=_pose(0.6, 0.02, 1.03, quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), 0.3)),
                        initial_velocity=SpatialVelocity(np.array([-0.5, 0.0, 0.0]), np.zeros(3))),
        RigidObjectSpec("c", Sphere(0.08), 1.0, friction=0.4, initial_pose=_pose(0.3, 0.5, 1.0),
                        initial_velocity=SpatialVelocity(np.array([0.0, -1.2, 0.0]), np.zeros(3))),
    ]
    return Fixture("colliding_objects", spec, seq, SceneSpec(objects=objects), config=SimConfig(gravity=(0.0, 0.0, 0.0)))


# ---------------------------------------------------------------------------
# two-plate gripper


def gripper_body(palm_mass: float = 20.0, plate_mass: float = 1.0, plate_friction: float = 1.0) -> ArticulatedBodySpec:
    """A palm bar with two hanging plates on ball joints at its left and right edges."""
    palm = Box(np.array([0.1, 0.2, 0.02]))
    plate = Box(np.array([0.08, 0.01, 0.13]))
    links = [LinkSpec("palm", None, np.zeros(3), np.zeros(3), palm, shape_inertia(palm, palm_mass), friction=plate_friction)]
    for name, s in (("plate_l", 1.0), ("plate_r", -1.0)):
        links.append(
            LinkSpec(
                name, 0, np.array([0.0, 0.15 * s, -0.02]), np.array([0.0, 0.0, 0.13]), plate,
                shape_inertia(plate, plate_mass), friction=plate_friction,
            )
        )
    return ArticulatedBodySpec("gripper", tuple(links))


def squeeze_lift(
    box_friction: float = 1.0,
    box_mass: float = 2.0,
    lam: float = 30.0,
    squeeze: float = 0.30,
    lift: float = 0.3,
    fps: float = 30.0,
) -> Fixture:
    """Close the plates on a box resting on the floor, lift it, then hold still.

    Timeline (s): 0-0.5 rest, 0.5-1.0 close, 1.0-1.5 settle, 1.5-2.5 lift,
    2.5-3.5 hold. ``squeeze`` is the closing angle of each plate (rad); the
    plates would meet the box faces at about half of it.
    """
    spec = gripper_body()
    # plate bottoms hang 1 cm above the floor
    palm_z = 0.01 + 0.26 + 0.02
    T = int(round(3.5 * fps)) + 1
    t = np.arange(T) / fps
    root_pos = np.zeros((T, 3))
    root_pos[:, 2] = palm_z + lift * np.clip((t - 1.5) / 1.0, 0.0, 1.0)
    root_quat = np.tile(IDENTITY, (T, 1))
    jq = np.zeros((T, 2, 4))
    close = np.clip((t - 0.5) / 0.5, 0.0, 1.0)
    for k in range(T):
        a = squeeze * (0.5 - 0.5 * math.cos(math.pi * close[k]))
        # rotating about x swings each plate's lower edge toward the centre line
        jq[k, 0] = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), -a)
        jq[k, 1] = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), a)
    seq = MotionSequence(fps, root_pos, root_quat, jq).canonicalize()
    box = RigidObjectSpec("box", Box(np.full(3, 0.1)), box_mass, friction=box_friction, initial_pose=_pose(0.0, 0.0, 0.1))
    scene = SceneSpec(static=[floor(friction=1.0)], objects=[box])
    meta = {"hold_start": int(round(2.5 * fps)), "lift": lift, "palm_link": 0}
    return Fixture("squeeze_lift", spec, seq, scene, mode=HalfPhysics(lam), meta=meta)


# ---------------------------------------------------------------------------
# throughput scene


def bench_scene(frames: int = 300) -> Fixture:
    """humanoid22 walking through a furnished room: 5 objects, 20 static colliders."""
    spec = build_humanoid("humanoid22")
    seq = synth_motion("walk_forward", {"frames": frames, "speed": 0.3, "clearance": 0.02})
    static = [floor()]
    # four walls, a table, and a row of pillars and crates around the path
    static += [
        _box(1.5, 2.5, 1.0, 3.0, 0.1, 1.0, "wall_n"),
        _box(1.5, -2.5, 1.0, 3.0, 0.1, 1.0, "wall_s"),
        _box(4.6, 0.0, 1.0, 0.1, 2.5, 1.0, "wall_e"),
        _box(-1.6, 0.0, 1.0, 0.1, 2.5, 1.0, "wall_w"),
        _box(2.0, 1.4, 0.4, 0.5, 0.3, 0.4, "table"),
    ]
    for i in range(7):
        static.append(_box(0.5 * i - 0.5, -1.2, 0.6, 0.08, 0.08, 0.6, f"pillar{i}"))
    for i in range(7):
        static.append(_box(0.5 * i - 0.5, 1.0 + 0.05 * (i % 2), 0.15, 0.15, 0.15, 0.15, f"crate{i}"))
    objects = [
        RigidObjectSpec("cup", Capsule(0.04, 0.05), 0.3, initial_pose=_pose(2.0, 1.4, 0.8 + 0.09)),
        RigidObjectSpec("book", Box(np.array([0.1, 0.07, 0.02])), 0.5, initial_pose=_pose(1.8, 1.3, 0.82)),
        RigidObjectSpec("ball", Sphere(0.1), 0.4, initial_pose=_pose(0.5, 0.6, 0.1)),
        RigidObjectSpec("box", Box(np.full(3, 0.12)), 3.0, initial_pose=_pose(1.0, -0.7, 0.12)),
        RigidObjectSpec("stool", Box(np.array([0.15, 0.15, 0.2])), 4.0, initial_pose=_pose(3.5, 0.5, 0.2)),
    ]
    return Fixture("bench", spec, seq, SceneSpec(static=static, objects=objects))
