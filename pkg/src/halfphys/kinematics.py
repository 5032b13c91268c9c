"""Kinematic motion sequences and the per-frame velocity rule.

A motion is a list of joint-space targets sampled at a fixed rate. Frame 0
only initializes the simulation; frames 1..T-1 are tracked by enforcing the
velocities returned by :func:`frame_velocities`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .body import HUMANOID_FOOT_DEPTH, JointSpaceState, Pose, build_humanoid
from .mathcore import angdiff, canonicalize_sequence, quat_from_axis_angle, quat_mul

UNIT_NORM_TOL = 1e-3
SYNTH_KINDS = ("static", "walk_forward", "sine_joints", "kick", "squat_sit")


class MotionError(ValueError):
    pass


@dataclass
class MotionSequence:
    fps: float
    root_pos: np.ndarray  # (T, 3)
    root_quat: np.ndarray  # (T, 4)
    joint_quats: np.ndarray  # (T, J, 4)

    def __post_init__(self):
        if not self.fps > 0:
            raise MotionError(f"fps must be positive, got {self.fps}")
        if self.root_pos.shape[0] < 2:
            raise MotionError("a motion needs at least 2 frames")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def frame_count(self) -> int:
        return self.root_pos.shape[0]

    @property
    def joint_count(self) -> int:
        return self.joint_quats.shape[1]

    def frame(self, t: int) -> JointSpaceState:
        return JointSpaceState(Pose(self.root_pos[t].copy(), self.root_quat[t].copy()), self.joint_quats[t].copy())

    @property
    def frames(self) -> list[JointSpaceState]:
        return [self.frame(t) for t in range(self.frame_count)]

    def canonicalize(self) -> "MotionSequence":
        canonicalize_sequence(self.root_quat)
        for j in range(self.joint_count):
            col = np.ascontiguousarray(self.joint_quats[:, j, :])
            self.joint_quats[:, j, :] = canonicalize_sequence(col)
        return self


@dataclass
class FrameVelocities:
    root_linear: np.ndarray
    root_angular: np.ndarray
    joint_omegas: np.ndarray  # (J, 3), parent frame

    def generalized(self) -> np.ndarray:
        return np.concatenate([self.root_linear, self.root_angular, self.joint_omegas.reshape(-1)])


def frame_velocities(
    seq: MotionSequence,
    t: int,
    current: JointSpaceState,
    *,
    root_from_actual: bool = False,
    max_angular_speed: Optional[float] = None,
) -> FrameVelocities:
    """Velocities that carry ``current`` to the frame-``t`` target over one frame.

    Rotations (joints and root orientation) are measured from the current,
    possibly disturbed, state. The root's linear velocity is the difference of
    consecutive *targets*, so positional drift after contact is not undone.
    ``root_from_actual`` switches it to target-minus-actual instead.
    """
    if not 1 <= t <= seq.frame_count - 1:
        raise MotionError(f"frame index {t} outside 1..{seq.frame_count - 1}")
    dt = seq.dt
    jq_t = seq.joint_quats[t]
    if current.joint_quats.shape != jq_t.shape:
        raise MotionError("current state joint count does not match the motion")
    omegas = np.empty((seq.joint_count, 3))
    for j in range(seq.joint_count):
        omegas[j] = angdiff(jq_t[j], current.joint_quats[j], dt)
    root_ang = angdiff(seq.root_quat[t], current.root_pose.orientation, dt)
    if root_from_actual:
        root_lin = (seq.root_pos[t] - current.root_pose.position) / dt
    else:
        root_lin = (seq.root_pos[t] - seq.root_pos[t - 1]) / dt
    if max_angular_speed is not None:
        omegas = _clamp_rows(omegas, max_angular_speed)
        root_ang = _clamp_rows(root_ang[None, :], max_angular_speed)[0]
    return FrameVelocities(root_lin, root_ang, omegas)


def _clamp_rows(v: np.ndarray, limit: float) -> np.ndarray:
    n = np.linalg.norm(v, axis=1, keepdims=True)
    scale = np.where(n > limit, limit / np.maximum(n, 1e-300), 1.0)
    return v * scale


# ---------------------------------------------------------------------------
# file format


def motion_to_dict(seq: MotionSequence) -> dict:
    return {
        "fps": seq.fps,
        "joint_count": seq.joint_count,
        "frames": [
            {
                "root_pos": seq.root_pos[t].tolist(),
                "root_quat": seq.root_quat[t].tolist(),
                "joints": seq.joint_quats[t].tolist(),
            }
            for t in range(seq.frame_count)
        ],
    }


def parse_motion(data: bytes | str) -> MotionSequence:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise MotionError(f"motion is not valid JSON: {e}") from None
    return motion_from_dict(doc)


def motion_from_dict(doc: dict) -> MotionSequence:
    if not isinstance(doc, dict):
        raise MotionError("motion document must be an object")
    for key in ("fps", "joint_count", "frames"):
        if key not in doc:
            raise MotionError(f"missing field {key!r}")
    fps = doc["fps"]
    if not isinstance(fps, (int, float)) or not fps > 0:
        raise MotionError(f"fps: must be a positive number, got {fps!r}")
    n = doc["joint_count"]
    frames = doc["frames"]
    if not isinstance(n, int) or n < 0:
        raise MotionError(f"joint_count: must be a non-negative integer, got {n!r}")
    if not isinstance(frames, list) or len(frames) < 2:
        raise MotionError("frames: need at least 2 frames")
    T = len(frames)
    root_pos = np.empty((T, 3))
    root_quat = np.empty((T, 4))
    joints = np.empty((T, n, 4))
    for t, fr in enumerate(frames):
        try:
            root_pos[t] = np.asarray(fr["root_pos"], dtype=float)
            root_quat[t] = np.asarray(fr["root_quat"], dtype=float)
            jq = np.asarray(fr["joints"], dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise MotionError(f"frames[{t}]: malformed frame ({e})") from None
        if jq.shape != (n, 4):
            raise MotionError(f"frames[{t}].joints: expected {n} quaternions, got shape {jq.shape}")
        joints[t] = jq
    norms = np.concatenate([np.linalg.norm(root_quat, axis=1), np.linalg.norm(joints, axis=2).reshape(-1)])
    if not np.all(np.isfinite(root_pos)) or np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise MotionError("quaternions must be unit-norm (tolerance 1e-3) and values finite")
    _renormalize(root_quat)
    _renormalize(joints)
    return MotionSequence(float(fps), root_pos, root_quat, joints).canonicalize()


def _renormalize(q: np.ndarray) -> None:
    # rows already unit to within rounding are left untouched so save/load is bit-exact
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    np.divide(q, n, out=q, where=np.abs(n - 1.0) > 1e-12)


def load_motion(path) -> MotionSequence:
    with open(path, "rb") as f:
        return parse_motion(f.read())


def save_motion(seq: MotionSequence, path) -> None:
    with open(path, "w") as f:
        json.dump(motion_to_dict(seq), f)


# ---------------------------------------------------------------------------
# procedural motions

_AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))


def _rot(axis: int, angle: float) -> np.ndarray:
    return quat_from_axis_angle(_AXES[axis], float(angle))


def synth_motion(kind: str, params: Optional[dict] = None) -> MotionSequence:
    """Deterministic procedural motion for desk-scale experiments.

    Common params: ``fps`` (30), ``duration`` in s (10) or ``frames``,
    ``template`` (humanoid22), ``scale`` (1), ``clearance`` of the feet above
    z=0 (0.01 m), ``root_height`` (standing height from template and clearance),
    ``root_xy`` start position. Kind-specific params are documented in the
    README.
    """
    p = dict(params or {})
    if kind not in SYNTH_KINDS:
        raise MotionError(f"unknown motion kind {kind!r}; expected one of {SYNTH_KINDS}")
    fps = float(p.get("fps", 30.0))
    if not fps > 0:
        raise MotionError("fps must be positive")
    T = int(p["frames"]) if "frames" in p else int(round(float(p.get("duration", 10.0)) * fps))
    if T < 2:
        raise MotionError("motion needs at least 2 frames")
    template = p.get("template", "humanoid22")
    scale = float(p.get("scale", 1.0))
    spec = build_humanoid(template, scale)
    J = spec.joint_count
    if "root_height" in p:
        h0 = float(p["root_height"])
    elif template == "chain3":
        h0 = 1.0
    else:
        h0 = HUMANOID_FOOT_DEPTH * scale + float(p.get("clearance", 0.01))
    x0, y0 = (float(v) for v in p.get("root_xy", (0.0, 0.0)))
    yaw = float(p.get("yaw", 0.0))

    t = np.arange(T) / fps
    root_pos = np.zeros((T, 3))
    root_pos[:, 0], root_pos[:, 1], root_pos[:, 2] = x0, y0, h0
    root_quat = np.tile(_rot(2, yaw), (T, 1))
    joint_quats = np.zeros((T, J, 4))
    joint_quats[:, :, 0] = 1.0
    # per-frame list of (joint index, axis, angle)
    if kind == "static":
        pass
    elif kind == "sine_joints":
        amp = float(p.get("amplitude", 0.4))
        freq = float(p.get("frequency", 0.5))
        if amp != 0.0:
            for j in range(J):
                axis = j % 3
                f = freq * (1.0 + 0.15 * (j % 5))
                phase = 0.7 * j
                ang = amp * np.sin(2 * math.pi * f * t + phase)
                for k in range(T):
                    joint_quats[k, j] = _rot(axis, ang[k])
            # root sway exercises the root angular path too
            for k in range(T):
                root_quat[k] = quat_mul(_rot(2, yaw), _rot(2, 0.5 * amp * math.sin(2 * math.pi * 0.3 * t[k])))
    else:
        if not template.startswith("humanoid"):
            raise MotionError(f"motion {kind!r} needs a humanoid template")
        J_ = {name: spec.link_index(name) - 1 for name in (l.name for l in spec.links[1:])}
        if kind == "walk_forward":
            _walk(p, t, J_, root_pos, root_quat, joint_quats, yaw)
        elif kind == "kick":
            _kick(p, t, J_, joint_quats)
        elif kind == "squat_sit":
            _squat(p, t, J_, root_pos, joint_quats, h0, scale)
    return MotionSequence(fps, root_pos, root_quat, joint_quats).canonicalize()


def _walk(p, t, J_, root_pos, root_quat, joint_quats, yaw):
    speed = float(p.get("speed", 0.3))
    cadence = float(p.get("cadence", 0.8))  # gait cycles per second
    hip_amp = float(p.get("hip_amplitude", 0.35))
    arm_amp = float(p.get("arm_amplitude", 0.25))
    fwd = np.array([math.cos(yaw), math.sin(yaw)])
    root_pos[:, 0] += speed * t * fwd[0]
    root_pos[:, 1] += speed * t * fwd[1]
    for k, tk in enumerate(t):
        ph = 2 * math.pi * cadence * tk
        for side, sgn in (("l", 1.0), ("r", -1.0)):
            s = math.sin(ph + (0.0 if side == "l" else math.pi))
            # negative rotation about y swings a hanging limb forward (+x)
            joint_quats[k, J_[f"{side}_thigh"]] = _rot(1, -hip_amp * s)
            joint_quats[k, J_[f"{side}_shin"]] = _rot(1, 0.4 * max(0.0, s))
            joint_quats[k, J_[f"{side}_upperarm"]] = _rot(1, arm_amp * s)
            joint_quats[k, J_[f"{side}_forearm"]] = _rot(1, -0.2 - 0.1 * max(0.0, -s))


def _kick(p, t, J_, joint_quats):
    start = float(p.get("kick_time", 0.5))
    dur = float(p.get("kick_duration", 0.6)) / float(p.get("speed", 1.0))
    amp = float(p.get("amplitude", 1.1))
    side = p.get("side", "r")
    hip, knee, ankle = J_[f"{side}_thigh"], J_[f"{side}_shin"], J_[f"{side}_foot"]
    for k, tk in enumerate(t):
        u = (tk - start) / dur
        if 0.0 <= u <= 1.0:
            # wind-up then fast forward swing then return: smooth bump in [0, 1]
            swing = math.sin(math.pi * u) ** 2
            back = 0.35 * math.sin(2 * math.pi * u) if u < 0.5 else 0.0
            hip_ang = -amp * swing + back
            # the knee leads the hip so the toe clears the ground on the back-swing
            knee_ang = 0.9 * math.sin(math.pi * min(1.0, 2.0 * u)) if u < 0.5 else 0.0
            joint_quats[k, hip] = _rot(1, hip_ang)
            joint_quats[k, knee] = _rot(1, knee_ang)
            joint_quats[k, ankle] = _rot(1, -knee_ang)  # keep the sole level


def _squat(p, t, J_, root_pos, joint_quats, h0, scale):
    sit_height = float(p.get("sit_height", 0.45 * scale))  # target pelvis centre height when seated
    down_start = float(p.get("sit_time", 1.0))
    down_dur = float(p.get("sit_duration", 1.5))
    back = float(p.get("sit_back", 0.0))
    for k, tk in enumerate(t):
        u = min(max((tk - down_start) / down_dur, 0.0), 1.0)
        s = 0.5 - 0.5 * math.cos(math.pi * u)
        root_pos[k, 2] = h0 + (sit_height - h0) * s
        root_pos[k, 0] -= back * s
        for side in ("l", "r"):
            joint_quats[k, J_[f"{side}_thigh"]] = _rot(1, -0.5 * math.pi * s)
            joint_quats[k, J_[f"{side}_shin"]] = _rot(1, 0.5 * math.pi * s)
            joint_quats[k, J_[f"{side}_upperarm"]] = _rot(1, -0.3 * s)
