import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halfphys import fixtures
from halfphys.body import Pose, SpatialVelocity, build_humanoid, forward_kinematics, rest_state
from halfphys.collision import narrowphase
from halfphys.dynamics import (
    HalfPhysics,
    PositionTeleport,
    RigidBody,
    SimConfig,
    SimState,
    SimulationError,
    Simulator,
    TorquePD,
    contact_target,
    enforce_frame_velocities,
    expected_joint_pose,
    pjsc_torque,
    run,
    solve_constraints,
)
from halfphys.kinematics import FrameVelocities, frame_velocities, synth_motion
from halfphys.mathcore import quat_from_axis_angle
from halfphys.metrics import mpjpe_global, mpjpe_local
from halfphys.scenario import trajectory_lines
from halfphys.scene import RigidObjectSpec, SceneSpec, floor
from halfphys.shapes import HalfSpace, Sphere

from measure import object_static_clearance, report, run_fixture, step_with_contacts
from oracles import axis_angle_matrix, quat_matrix, random_quat

Z = np.array([0.0, 0.0, 1.0])
IDENT = np.array([1.0, 0.0, 0.0, 0.0])
H = 1.0 / 240.0


def state_of(spec, js):
    sim = Simulator(spec)
    sim.reset(js)
    return sim.state()


class TestSmallOperations:
    def test_expected_pose_trivial(self):
        q = quat_from_axis_angle(np.array([1.0, 1.0, 0.0]), 0.4)
        np.testing.assert_allclose(expected_joint_pose(q, np.array([1.0, 2.0, 3.0]), 0, 0.01), q, atol=1e-15)
        np.testing.assert_allclose(expected_joint_pose(q, np.zeros(3), 5, 0.01), q, atol=1e-15)

    def test_expected_pose_quarter_turn(self):
        q = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), 0.3)
        got = expected_joint_pose(q, np.array([0.0, 0.0, math.pi]), 4, 0.125)
        np.testing.assert_allclose(quat_matrix(got), axis_angle_matrix(Z, math.pi / 2) @ quat_matrix(q), atol=1e-12)

    def test_pjsc_torque(self):
        q = quat_from_axis_angle(np.array([0.2, 0.1, 1.0]), 0.5)
        np.testing.assert_allclose(pjsc_torque(3.0, q, q), 0.0, atol=1e-15)
        lead = quat_from_axis_angle(Z, 0.1)
        np.testing.assert_array_equal(pjsc_torque(0.0, lead, IDENT), np.zeros(3))
        np.testing.assert_allclose(pjsc_torque(2.0, lead, IDENT), [0.0, 0.0, -0.2], atol=1e-12)
        with pytest.raises(ValueError):
            pjsc_torque(-1.0, q, q)

    def test_contact_target(self):
        slop, beta = 0.002, 0.2
        rest = slop / 2
        # separated beyond the rest distance: allowed to approach exactly to it
        assert contact_target(0.01, 0.0, H, slop, beta, 0.0) == pytest.approx(-(0.01 - rest) / H)
        # inside the rest band: Baumgarte push back toward it
        assert contact_target(-0.003, 0.0, H, slop, beta, 0.0) == pytest.approx(beta * (rest + 0.003) / H)
        # fast approach with restitution bounces
        assert contact_target(0.0, -2.0, H, slop, beta, 0.5) >= 1.0


class TestEnforceVelocities:
    def test_zero(self):
        spec = build_humanoid("humanoid22")
        st_ = state_of(spec, rest_state(spec))
        fv = FrameVelocities(np.zeros(3), np.zeros(3), np.zeros((21, 3)))
        out = enforce_frame_velocities(st_, fv, spec)
        assert isinstance(out, SimState)
        for v in out.links.velocities:
            assert not v.linear.any() and not v.angular.any()

    def test_walk_pelvis(self):
        spec = build_humanoid("humanoid22")
        seq = synth_motion("walk_forward", {"frames": 10})
        st_ = state_of(spec, seq.frame(0))
        out = enforce_frame_velocities(st_, frame_velocities(seq, 1, seq.frame(0)), spec)
        np.testing.assert_allclose(out.links.velocities[0].linear, [0.3, 0.0, 0.0], atol=1e-12)

    def test_chain3_joint_only(self):
        spec = build_humanoid("chain3")
        st_ = state_of(spec, rest_state(spec))
        fv = FrameVelocities(np.zeros(3), np.zeros(3), np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]))
        out = enforce_frame_velocities(st_, fv, spec)
        assert not out.links.velocities[0].linear.any()
        h = 1e-6

        def centres(a):
            js = rest_state(spec)
            js.joint_quats[0] = quat_from_axis_angle(Z, a)
            return np.array([p.position for p in forward_kinematics(spec, js)])

        fd = (centres(h) - centres(-h)) / (2 * h)
        for i in range(3):
            np.testing.assert_allclose(out.links.velocities[i].linear, fd[i], atol=1e-5)


def sphere_body(z, vz=0.0, mass=1.0):
    return RigidBody(Pose(np.array([0.0, 0.0, z]), IDENT.copy()), SpatialVelocity(np.array([0.0, 0.0, vz]), np.zeros(3)),
                     mass, np.full(3, 0.4 * mass * 0.01))


class TestSolveConstraints:
    def test_inelastic_floor_hit(self):
        ball = sphere_body(0.1, -1.0)
        ground = RigidBody(Pose(np.zeros(3), IDENT.copy()), SpatialVelocity.zero(), math.inf)
        contacts = narrowphase(Sphere(0.1), ball.pose, HalfSpace(Z), ground.pose, 0.002, ids=(0, 1))
        solve_constraints([ball, ground], contacts, H)
        bias = 0.2 * 0.001 / H
        assert -1e-12 <= ball.velocity.linear[2] <= bias + 1e-12

    def test_elastic_exchange(self):
        a = RigidBody(Pose(np.zeros(3), IDENT.copy()), SpatialVelocity(np.array([1.0, 0, 0]), np.zeros(3)), 1.0)
        b = RigidBody(Pose(np.array([0.2, 0, 0]), IDENT.copy()), SpatialVelocity(np.array([-1.0, 0, 0]), np.zeros(3)), 1.0)
        contacts = narrowphase(Sphere(0.1), a.pose, Sphere(0.1), b.pose, 0.002, ids=(0, 1),
                               friction=(0.0, 0.0), restitution=(1.0, 1.0))
        solve_constraints([a, b], contacts, H)
        np.testing.assert_allclose(a.velocity.linear, [-1.0, 0, 0], atol=1e-6)
        np.testing.assert_allclose(b.velocity.linear, [1.0, 0, 0], atol=1e-6)

    def test_resting_at_slop_depth(self):
        ball = sphere_body(0.1 - 0.002)
        ground = RigidBody(Pose(np.zeros(3), IDENT.copy()), SpatialVelocity.zero(), math.inf)
        contacts = narrowphase(Sphere(0.1), ball.pose, HalfSpace(Z), ground.pose, 0.002, ids=(0, 1))
        imp = solve_constraints([ball, ground], contacts, H)
        bias = 0.2 * (0.001 + 0.002) / H
        assert np.linalg.norm(imp) <= ball.mass * bias + 1e-12
        assert abs(imp[0, 0]) <= 1e-15 and abs(imp[0, 1]) <= 1e-15

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_equal_and_opposite(self, seed):
        rng = np.random.default_rng(seed)
        ma, mb = rng.uniform(0.1, 10, 2)
        pa = np.array([*rng.uniform(-0.02, 0.02, 2), 0.0])
        a = RigidBody(Pose(pa, random_quat(rng)), SpatialVelocity(rng.normal(size=3), rng.normal(size=3)), ma,
                      rng.uniform(0.01, 0.1, 3))
        b = RigidBody(Pose(np.array([0.0, 0.0, 0.19]), random_quat(rng)),
                      SpatialVelocity(rng.normal(size=3), rng.normal(size=3)), mb, rng.uniform(0.01, 0.1, 3))
        contacts = narrowphase(Sphere(0.1), a.pose, Sphere(0.1), b.pose, 0.002, ids=(0, 1),
                               friction=(rng.uniform(), 1.0), restitution=(rng.uniform(), 0.0))
        va, vb = a.velocity.linear.copy(), b.velocity.linear.copy()
        imp = solve_constraints([a, b], contacts, H)
        pa_change = ma * (a.velocity.linear - va)
        pb_change = mb * (b.velocity.linear - vb)
        scale = max(1.0, float(np.abs(imp).max()))
        np.testing.assert_allclose(pa_change, imp.sum(axis=0), atol=1e-12 * scale)
        np.testing.assert_allclose(pb_change, -imp.sum(axis=0), atol=1e-12 * scale)


class TestStepping:
    @pytest.mark.parametrize(
        "template,kinds",
        [
            ("humanoid22", ["static", "walk_forward", "sine_joints", "kick", "squat_sit"]),
            ("humanoid55", ["static", "walk_forward", "sine_joints", "kick", "squat_sit"]),
            ("chain3", ["static", "sine_joints"]),
        ],
    )
    def test_free_space_fidelity(self, template, kinds):
        spec = build_humanoid(template)
        for kind in kinds:
            seq = synth_motion(kind, {"frames": 90, "template": template})
            traj = run(spec, seq, SceneSpec(), SimConfig(), HalfPhysics(0.0))
            # per-frame bound on joint-position error, metres
            for t, rec in enumerate(traj.records):
                js = seq.frame(t)
                for p, q in zip(rec.link_pos, forward_kinematics(spec, js)):
                    assert np.linalg.norm(p - q.position) <= 1e-6
            assert mpjpe_global(traj, seq, spec) <= 1e-3

    def test_wall_blocks_walk(self):
        fx = fixtures.wall_walk()
        traj = run_fixture(fx)
        rep = report(fx, traj)
        assert rep.depth_max <= 1000 * fx.config.slop
        # the body is held short of the wall face
        assert max(r.link_pos[:, 0].max() for r in traj.records) < fx.meta["wall_face_x"]

    def test_teleport_passes_through_wall(self):
        fx = fixtures.wall_walk()
        rep = report(fx, run_fixture(fx, PositionTeleport()))
        assert rep.depth_max > 50.0

    def test_frame_zero_is_initialization(self):
        fx = fixtures.free_space("walk_forward", 10)
        sim = Simulator(fx.spec)
        sim.reset(fx.seq.frame(0))
        with pytest.raises(SimulationError):
            sim.step_frame(fx.seq, 0)

    def test_joint_count_mismatch(self):
        seq = synth_motion("static", {"frames": 5, "template": "chain3"})
        with pytest.raises(SimulationError):
            run(build_humanoid("humanoid22"), seq)

    def test_object_resting_on_floor(self):
        spec = build_humanoid("humanoid22")
        seq = synth_motion("static", {"frames": 300, "root_xy": (-2.0, 0.0)})
        ball = RigidObjectSpec("ball", Sphere(0.1), 1.0, initial_pose=Pose(np.array([0.0, 0.0, 0.101]), IDENT.copy()))
        traj = run(spec, seq, SceneSpec(static=[floor()], objects=[ball]))
        p = traj.object_positions(0)
        assert np.max(np.linalg.norm(p - p[0], axis=1)) < 2e-3

    def test_object_penetration_bound(self):
        fx = fixtures.kick_ball()
        traj = run_fixture(fx)
        assert object_static_clearance(traj, fx.scene) >= -(fx.config.slop + 1e-3)
        assert report(fx, traj).depth_max <= 1000 * fx.config.slop + 1.0

    def test_damping_degrades_tracking(self):
        fx = fixtures.free_space("sine_joints", 150)
        clean = mpjpe_global(run_fixture(fx), fx.seq, fx.spec)
        damped = mpjpe_global(run_fixture(fx, config=SimConfig(joint_damping=5.0)), fx.seq, fx.spec)
        assert damped > 1.0 and damped >= 1000 * clean

    def test_pd_mode_lags(self):
        fx = fixtures.free_space("sine_joints", 150)
        hp = mpjpe_global(run_fixture(fx), fx.seq, fx.spec)
        pd = mpjpe_global(run_fixture(fx, TorquePD()), fx.seq, fx.spec)
        assert pd >= 100 * hp and pd > 1.0


class TestConservation:
    def test_object_momentum(self):
        fx = fixtures.colliding_objects()
        sim = Simulator(fx.spec, fx.scene, fx.config, fx.mode)
        sim.reset(fx.seq.frame(0))
        mass = np.array([o.mass for o in fx.scene.objects])
        p_prev = (mass[:, None] * sim.o_vel[:, :3]).sum(axis=0)
        hits = 0
        for t in range(1, fx.seq.frame_count):
            sim.step_frame(fx.seq, t)
            p = (mass[:, None] * sim.o_vel[:, :3]).sum(axis=0)
            assert np.max(np.abs(p - p_prev)) <= 1e-6
            p_prev = p
            hits += sim.diagnostics.contacts
        assert hits > 0

    def test_resting_stack(self):
        fx = fixtures.resting_stack()
        traj = run_fixture(fx)
        for i in range(len(fx.scene.objects)):
            p = traj.object_positions(i)
            assert np.max(np.linalg.norm(p - p[0], axis=1)) < 2e-3


class TestPjsc:
    def test_neutral_before_contact(self):
        t0, touched = step_with_contacts(fixtures.arm_pillar(lam=0.0))
        t1, _ = step_with_contacts(fixtures.arm_pillar(lam=1.0))
        first = int(np.argmax(touched))
        assert touched.any() and first > 1
        for a, b in zip(t0.records[:first], t1.records[:first]):
            assert np.max(np.abs(a.link_pos - b.link_pos)) <= 1e-9
            assert np.max(np.abs(a.joints - b.joints)) <= 1e-9

    def test_neutral_in_free_space(self):
        fx = fixtures.free_space("sine_joints", 60)
        a = run_fixture(fx, HalfPhysics(0.0))
        b = run_fixture(fx, HalfPhysics(1.0))
        assert trajectory_lines(a) == trajectory_lines(b)

    def test_stiffness_reduces_local_error(self):
        e0 = mpjpe_local(run_fixture(fixtures.arm_pillar(lam=0.0)), *_seq_spec(fixtures.arm_pillar()))
        e1 = mpjpe_local(run_fixture(fixtures.arm_pillar(lam=1.0)), *_seq_spec(fixtures.arm_pillar()))
        assert e1 < e0


def _seq_spec(fx):
    return fx.seq, fx.spec


class TestDeterminism:
    def test_repeat_and_threads(self):
        fx = fixtures.kick_ball()
        ref = trajectory_lines(run_fixture(fx))
        assert trajectory_lines(run_fixture(fx)) == ref
        with ThreadPoolExecutor(4) as pool:
            outs = list(pool.map(lambda _: trajectory_lines(run_fixture(fx)), range(4)))
        assert all(o == ref for o in outs)
