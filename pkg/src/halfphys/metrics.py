"""Tracking-fidelity and penetration metrics.

Joint positions are the world positions of the joint anchors (the root link
contributes its frame origin). Penetration uses deterministic surface samples
of every collision-enabled link as a vertex proxy and counts a sample as
penetrating when its signed distance to any static collider is negative.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from numba import njit

from .body import ArticulatedBodySpec, fk_kernel
from .collision import kernel_shape, mesh_is_closed, point_sdf, sample_surface_points
from .dynamics import Trajectory
from .kinematics import MotionSequence
from .mathcore import quat_rotate
from .scene import SceneSpec
from .shapes import TriMesh

DEFAULT_SAMPLES_PER_LINK = 32
FALL_FRACTION = 0.3
FALL_FRAMES = 10


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    mpjpe_g: float
    mpjpe: float
    success: bool
    pene_rate: float
    depth_mean: float
    depth_max: float
    frames: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@njit(cache=True)
def _joint_positions(parent, anchor_c, pos, quat):
    out = np.empty_like(pos)
    out[0] = pos[0]
    for i in range(1, pos.shape[0]):
        out[i] = pos[i] + quat_rotate(quat[i], anchor_c[i])
    return out


def joint_positions(spec: ArticulatedBodySpec, link_pos: np.ndarray, link_quat: np.ndarray) -> np.ndarray:
    a = spec.arrays
    return _joint_positions(a.parent, a.anchor_c, np.asarray(link_pos, dtype=float), np.asarray(link_quat, dtype=float))


def _target_joints(spec: ArticulatedBodySpec, seq: MotionSequence, t: int) -> np.ndarray:
    a = spec.arrays
    pos, quat = fk_kernel(a.parent, a.anchor_p, a.anchor_c, seq.root_pos[t], seq.root_quat[t], seq.joint_quats[t])
    return _joint_positions(a.parent, a.anchor_c, pos, quat)


def _check_counts(traj: Trajectory, seq: MotionSequence) -> None:
    if len(traj) != seq.frame_count:
        raise MetricsError(f"trajectory has {len(traj)} frames, motion has {seq.frame_count}")


def _errors(traj: Trajectory, seq: MotionSequence, spec: ArticulatedBodySpec, local: bool) -> float:
    _check_counts(traj, seq)
    total = 0.0
    for t, rec in enumerate(traj.records):
        sim = joint_positions(spec, rec.link_pos, rec.link_quat)
        tgt = _target_joints(spec, seq, t)
        if local:
            sim = sim - sim[0]
            tgt = tgt - tgt[0]
        total += float(np.mean(np.linalg.norm(sim - tgt, axis=1)))
    return 1000.0 * total / len(traj)


def mpjpe_global(traj: Trajectory, seq: MotionSequence, spec: ArticulatedBodySpec) -> float:
    """Mean per-joint position error in world coordinates, millimetres."""
    return _errors(traj, seq, spec, local=False)


def mpjpe_local(traj: Trajectory, seq: MotionSequence, spec: ArticulatedBodySpec) -> float:
    """Mean per-joint position error relative to the root joint, millimetres."""
    return _errors(traj, seq, spec, local=True)


@njit(cache=True)
def _penetration_kernel(link_pos, link_quat, samples, sample_link, s_type, s_params, s_pos, s_quat, s_closed, tris):
    T = link_pos.shape[0]
    n = samples.shape[0]
    ns = s_type.shape[0]
    rate_sum = 0.0
    depth_sum = 0.0
    depth_max = 0.0
    for t in range(T):
        count = 0
        frame_max = 0.0
        for k in range(n):
            li = sample_link[k]
            p = link_pos[t, li] + quat_rotate(link_quat[t, li], samples[k])
            deepest = 0.0
            for s in range(ns):
                d = point_sdf(p, s_type[s], s_params[s], s_pos[s], s_quat[s], tris, s_closed[s])
                if d < deepest:
                    deepest = d
            if deepest < 0.0:
                count += 1
                if -deepest > frame_max:
                    frame_max = -deepest
        rate_sum += count / n
        depth_sum += frame_max
        if frame_max > depth_max:
            depth_max = frame_max
    return rate_sum, depth_sum, depth_max


def static_arrays(scene: SceneSpec):
    types, params, poss, quats, closed, tris = [], [], [], [], [], []
    n_tri = 0
    for s in scene.static:
        tid, p, pos, quat, tr = kernel_shape(s.shape, s.pose, n_tri)
        n_tri += len(tr)
        types.append(tid)
        params.append(p)
        poss.append(pos)
        quats.append(quat)
        closed.append(isinstance(s.shape, TriMesh) and mesh_is_closed(s.shape))
        tris.append(tr)
    return (
        np.array(types, dtype=np.int64),
        np.array(params, dtype=float).reshape(-1, 4),
        np.array(poss, dtype=float).reshape(-1, 3),
        np.array(quats, dtype=float).reshape(-1, 4),
        np.array(closed, dtype=np.bool_),
        np.ascontiguousarray(np.concatenate(tris)) if n_tri else np.zeros((1, 3, 3)),
    )


def body_samples(spec: ArticulatedBodySpec, samples_per_link: int) -> tuple[np.ndarray, np.ndarray]:
    pts, owner = [], []
    for i, link in enumerate(spec.links):
        if not link.collision_enabled:
            continue
        s = sample_surface_points(link.shape, samples_per_link)
        pts.append(s)
        owner.append(np.full(len(s), i, dtype=np.int64))
    if not pts:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    return np.concatenate(pts), np.concatenate(owner)


def penetration_stats(
    traj: Trajectory, spec: ArticulatedBodySpec, scene: SceneSpec, samples_per_link: int = DEFAULT_SAMPLES_PER_LINK
) -> tuple[float, float, float]:
    """(pene_rate %, depth_mean mm, depth_max mm) of body samples against static colliders.

    depth_mean averages each frame's deepest penetration, with 0 for frames
    without any penetrating sample.
    """
    if samples_per_link < 16:
        raise MetricsError("samples_per_link must be at least 16")
    if len(traj) == 0 or not scene.static:
        return 0.0, 0.0, 0.0
    samples, owner = body_samples(spec, samples_per_link)
    if len(samples) == 0:
        return 0.0, 0.0, 0.0
    link_pos = np.array([r.link_pos for r in traj.records])
    link_quat = np.array([r.link_quat for r in traj.records])
    rate_sum, depth_sum, depth_max = _penetration_kernel(link_pos, link_quat, samples, owner, *static_arrays(scene))
    T = len(traj)
    return 100.0 * rate_sum / T, 1000.0 * depth_sum / T, 1000.0 * depth_max


def success(traj: Trajectory, seq: MotionSequence) -> bool:
    """False when the pelvis stays below 30% of its target height for 10 consecutive frames."""
    _check_counts(traj, seq)
    run_len = 0
    for t, rec in enumerate(traj.records):
        if rec.root_pos[2] < FALL_FRACTION * seq.root_pos[t, 2]:
            run_len += 1
            if run_len >= FALL_FRAMES:
                return False
        else:
            run_len = 0
    return True


def compute_report(
    traj: Trajectory,
    seq: MotionSequence,
    spec: ArticulatedBodySpec,
    scene: Optional[SceneSpec] = None,
    samples_per_link: int = DEFAULT_SAMPLES_PER_LINK,
) -> MetricsReport:
    scene = scene or SceneSpec()
    rate, dmean, dmax = penetration_stats(traj, spec, scene, samples_per_link)
    return MetricsReport(
        mpjpe_g=mpjpe_global(traj, seq, spec),
        mpjpe=mpjpe_local(traj, seq, spec),
        success=success(traj, seq),
        pene_rate=rate,
        depth_mean=dmean,
        depth_max=dmax,
        frames=len(traj),
    )


def object_displacement(traj: Trajectory, index: int, horizontal: bool = True) -> float:
    """Distance between an object's first and last recorded positions."""
    p = traj.object_positions(index)
    d = p[-1] - p[0]
    if horizontal:
        d = d[:2]
    return float(math.sqrt(float(np.dot(d, d))))
