import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halfphys.body import JointSpaceState, Pose
from halfphys.kinematics import (
    MotionError,
    MotionSequence,
    frame_velocities,
    load_motion,
    motion_to_dict,
    parse_motion,
    save_motion,
    synth_motion,
)
from halfphys.mathcore import expmap, integrate_orientation, quat_from_axis_angle, quat_mul

from oracles import random_quat, rotation_distance


def static_doc(frames=2, joints=2):
    ident = [1.0, 0.0, 0.0, 0.0]
    return {
        "fps": 30,
        "joint_count": joints,
        "frames": [{"root_pos": [0, 0, 1], "root_quat": ident, "joints": [ident] * joints} for _ in range(frames)],
    }


def step_exact(current, fv, dt):
    """Integrate one frame of velocities exactly (joint omegas in the parent frame)."""
    jq = np.array([quat_mul(expmap(w * dt), q) for w, q in zip(fv.joint_omegas, current.joint_quats)])
    root = Pose(
        current.root_pose.position + fv.root_linear * dt,
        integrate_orientation(current.root_pose.orientation, fv.root_angular, dt),
    )
    return JointSpaceState(root, jq)


class TestParse:
    def test_static_two_frames(self):
        seq = parse_motion(json.dumps(static_doc()).encode())
        assert seq.frame_count == 2 and seq.joint_count == 2
        np.testing.assert_array_equal(seq.joint_quats[0], seq.joint_quats[1])
        np.testing.assert_array_equal(seq.root_pos[0], seq.root_pos[1])

    def test_negated_frame_canonicalized(self):
        doc = static_doc()
        q = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), 0.3).tolist()
        doc["frames"][0]["joints"][0] = q
        doc["frames"][1]["joints"][0] = [-v for v in q]
        doc["frames"][1]["root_quat"] = [-1.0, 0.0, 0.0, 0.0]
        seq = parse_motion(json.dumps(doc))
        np.testing.assert_allclose(seq.joint_quats[1], seq.joint_quats[0], atol=1e-15)
        np.testing.assert_allclose(seq.root_quat[1], seq.root_quat[0], atol=1e-15)

    def test_mismatched_joint_counts(self):
        doc = static_doc()
        doc["frames"][1]["joints"] = doc["frames"][1]["joints"][:1]
        with pytest.raises(MotionError, match=r"frames\[1\]"):
            parse_motion(json.dumps(doc))

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda d: d.pop("fps"),
            lambda d: d.update(fps=0),
            lambda d: d.update(frames=d["frames"][:1]),
            lambda d: d["frames"][0].update(root_quat=[2.0, 0.0, 0.0, 0.0]),
            lambda d: d["frames"][0].pop("root_pos"),
        ],
    )
    def test_invalid_documents(self, mutate):
        doc = static_doc()
        mutate(doc)
        with pytest.raises(MotionError):
            parse_motion(json.dumps(doc))

    def test_not_json(self):
        with pytest.raises(MotionError):
            parse_motion(b"{nope")

    def test_save_load_round_trip(self, tmp_path):
        seq = synth_motion("sine_joints", {"frames": 20})
        save_motion(seq, tmp_path / "m.json")
        back = load_motion(tmp_path / "m.json")
        np.testing.assert_array_equal(back.joint_quats, seq.joint_quats)
        np.testing.assert_array_equal(back.root_pos, seq.root_pos)
        assert motion_to_dict(back) == motion_to_dict(seq)


class TestSynth:
    def test_static_one_second(self):
        seq = synth_motion("static", {"fps": 30, "duration": 1.0})
        assert seq.frame_count == 30
        assert np.all(seq.joint_quats == seq.joint_quats[0]) and np.all(seq.root_pos == seq.root_pos[0])

    def test_walk_increment(self):
        seq = synth_motion("walk_forward", {"fps": 30, "speed": 0.3, "frames": 60})
        np.testing.assert_allclose(np.diff(seq.root_pos[:, 0]), 0.01, atol=1e-12)
        np.testing.assert_allclose(np.diff(seq.root_pos[:, 1:], axis=0), 0.0, atol=1e-15)

    def test_zero_amplitude_sine_is_static(self):
        a = synth_motion("sine_joints", {"amplitude": 0.0, "frames": 40})
        b = synth_motion("static", {"frames": 40})
        np.testing.assert_array_equal(a.joint_quats, b.joint_quats)
        np.testing.assert_array_equal(a.root_quat, b.root_quat)
        np.testing.assert_array_equal(a.root_pos, b.root_pos)

    def test_unknown_kind(self):
        with pytest.raises(MotionError):
            synth_motion("moonwalk")

    @pytest.mark.parametrize("kind", ["static", "walk_forward", "sine_joints", "kick", "squat_sit"])
    def test_deterministic_and_unit(self, kind):
        a, b = synth_motion(kind, {"frames": 50}), synth_motion(kind, {"frames": 50})
        np.testing.assert_array_equal(a.joint_quats, b.joint_quats)
        assert np.max(np.abs(np.linalg.norm(a.joint_quats, axis=2) - 1)) <= 1e-12
        assert np.all(np.sum(a.joint_quats[1:] * a.joint_quats[:-1], axis=2) >= 0)


class TestFrameVelocities:
    def test_static_zero(self):
        seq = synth_motion("static", {"frames": 5})
        fv = frame_velocities(seq, 1, seq.frame(0))
        assert not fv.root_linear.any() and not fv.joint_omegas.any()
        assert np.max(np.abs(fv.root_angular)) <= 1e-12

    def test_walk_root_speed(self):
        seq = synth_motion("walk_forward", {"frames": 5, "speed": 0.3})
        fv = frame_velocities(seq, 1, seq.frame(0))
        np.testing.assert_allclose(fv.root_linear, [0.3, 0.0, 0.0], atol=1e-12)

    def test_yaw_recovery(self):
        seq = synth_motion("static", {"frames": 5})
        cur = seq.frame(0)
        cur.root_pose.orientation = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), -math.radians(10))
        fv = frame_velocities(seq, 1, cur)
        np.testing.assert_allclose(fv.root_angular, [0.0, 0.0, 5.2359878], atol=1e-7)

    def test_frame_zero_rejected(self):
        seq = synth_motion("static", {"frames": 5})
        with pytest.raises(MotionError):
            frame_velocities(seq, 0, seq.frame(0))

    @pytest.mark.parametrize("kind", ["walk_forward", "sine_joints", "kick", "squat_sit"])
    def test_on_track_lands_on_target(self, kind):
        seq = synth_motion(kind, {"frames": 90})
        for t in range(1, seq.frame_count):
            cur = seq.frame(t - 1)
            nxt = step_exact(cur, frame_velocities(seq, t, cur), seq.dt)
            tgt = seq.frame(t)
            for a, b in zip(nxt.joint_quats, tgt.joint_quats):
                assert rotation_distance(a, b) <= 1e-9
            assert rotation_distance(nxt.root_pose.orientation, tgt.root_pose.orientation) <= 1e-9
            assert np.max(np.abs(nxt.root_pose.position - tgt.root_pose.position)) <= 1e-9

    def test_root_position_does_not_self_correct(self):
        seq = synth_motion("walk_forward", {"frames": 10})
        cur = seq.frame(3)
        cur.root_pose.position = cur.root_pose.position + np.array([0.0, 0.05, 0.0])
        nxt = step_exact(cur, frame_velocities(seq, 4, cur), seq.dt)
        np.testing.assert_allclose(nxt.root_pose.position - seq.root_pos[4], [0.0, 0.05, 0.0], atol=1e-12)
        fixed = frame_velocities(seq, 4, cur, root_from_actual=True)
        nxt = step_exact(cur, fixed, seq.dt)
        np.testing.assert_allclose(nxt.root_pose.position, seq.root_pos[4], atol=1e-12)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_rotations_self_correct(self, seed):
        rng = np.random.default_rng(seed)
        seq = synth_motion("sine_joints", {"frames": 10})
        t = int(rng.integers(1, 10))
        cur = seq.frame(t - 1)
        cur.joint_quats = np.array([random_quat(rng) for _ in range(seq.joint_count)])
        cur.root_pose.orientation = random_quat(rng)
        nxt = step_exact(cur, frame_velocities(seq, t, cur), seq.dt)
        for a, b in zip(nxt.joint_quats, seq.joint_quats[t]):
            assert rotation_distance(a, b) <= 1e-9
        assert rotation_distance(nxt.root_pose.orientation, seq.root_quat[t]) <= 1e-9

    def test_velocity_scales_with_fps(self):
        seq = synth_motion("sine_joints", {"frames": 20})
        fast = MotionSequence(2 * seq.fps, seq.root_pos, seq.root_quat, seq.joint_quats)
        for t in range(1, 20):
            a = frame_velocities(seq, t, seq.frame(t - 1))
            b = frame_velocities(fast, t, seq.frame(t - 1))
            np.testing.assert_allclose(b.joint_omegas, 2 * a.joint_omegas, atol=1e-9)
            np.testing.assert_allclose(b.root_angular, 2 * a.root_angular, atol=1e-9)

    def test_angular_speed_clamp(self):
        seq = synth_motion("static", {"frames": 5})
        cur = seq.frame(0)
        cur.joint_quats = cur.joint_quats.copy()
        cur.joint_quats[0] = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), 1.0)
        fv = frame_velocities(seq, 1, cur, max_angular_speed=2.0)
        assert abs(np.linalg.norm(fv.joint_omegas[0]) - 2.0) <= 1e-12
