import json

import numpy as np
import pytest

from halfphys import fixtures
from halfphys.body import body_to_dict, build_humanoid, forward_kinematics, rest_state
from halfphys.dynamics import HalfPhysics, PositionTeleport, SimConfig, TorquePD, Trajectory, kinematic_replay, run
from halfphys.kinematics import save_motion, synth_motion
from halfphys.mathcore import quat_rotate
from halfphys.scenario import (
    ScenarioError,
    TrajectoryFormatError,
    export_frame_obj,
    frame_obj_text,
    load_scenario,
    load_scenario_file,
    read_trajectory,
    scenario_to_dict,
    shape_mesh,
    trajectory_lines,
    write_trajectory,
)
from halfphys.scene import RigidObjectSpec, SceneSpec
from halfphys.shapes import Box, Capsule, Sphere

MINIMAL = {"body": {"template": "humanoid22"}, "motion": {"synth": {"kind": "static", "frames": 10}}}


def with_object(**over):
    obj = {"name": "ball", "shape": {"type": "sphere", "radius": 0.1}, "mass": 1.0,
           "pose": {"position": [0, 0, 0.1], "orientation": [1, 0, 0, 0]}}
    obj.update(over)
    doc = json.loads(json.dumps(MINIMAL))
    doc["scene"] = {"objects": [obj]}
    return doc


def error_path(doc):
    with pytest.raises(ScenarioError) as e:
        load_scenario(json.dumps(doc))
    return e.value.path


class TestLoad:
    def test_minimal_defaults(self):
        sc = load_scenario(json.dumps(MINIMAL))
        assert sc.spec.link_count == 22 and sc.seq.frame_count == 10
        assert sc.config == SimConfig()
        assert sc.config.substeps == 8 and sc.config.slop == 0.002
        assert sc.mode == HalfPhysics(0.0)
        assert sc.scene.objects == [] and sc.scene.static == []

    def test_negative_mass_path(self):
        assert error_path(with_object(mass=-1.0)) == "scene.objects[0].mass"

    @pytest.mark.parametrize(
        "doc,path",
        [
            (with_object(restitution=1.5), "scene.objects[0].restitution"),
            (with_object(shape={"type": "sphere", "radius": -0.1}), "scene.objects[0].shape.radius"),
            (with_object(shape={"type": "cone"}), "scene.objects[0].shape"),
            ({**MINIMAL, "mode": "ragdoll"}, "mode"),
            ({**MINIMAL, "config": {"substeps": 0}}, "config.substeps"),
            ({**MINIMAL, "colour": "red"}, "colour"),
            ({"motion": MINIMAL["motion"]}, "body"),
            ({**MINIMAL, "body": {"template": "humanoid22", "path": "x.json"}}, "body"),
            ({**MINIMAL, "motion": {"synth": {"kind": "moonwalk"}}}, "motion.synth.kind"),
        ],
    )
    def test_field_paths(self, doc, path):
        assert error_path(doc) == path

    def test_echoes_lambda_and_substeps(self):
        doc = {**MINIMAL, "config": {"lambda": 1.0, "substeps": 8}}
        sc = load_scenario(json.dumps(doc))
        assert sc.mode == HalfPhysics(1.0) and sc.config.substeps == 8

    def test_modes(self):
        assert isinstance(load_scenario(json.dumps({**MINIMAL, "mode": "teleport"})).mode, PositionTeleport)
        sc = load_scenario(json.dumps({**MINIMAL, "mode": "pd", "pd": {"kp": 50, "kd": 2}}))
        assert sc.mode == TorquePD(50.0, 2.0)

    def test_not_json(self):
        with pytest.raises(ScenarioError):
            load_scenario(b"[1, 2")

    def test_missing_motion_file(self, tmp_path):
        doc = {"body": {"template": "humanoid22"}, "motion": {"path": "nope.json"}}
        assert error_path_file(tmp_path, doc) == "motion.path"

    def test_relative_paths_and_outputs(self, tmp_path):
        seq = synth_motion("sine_joints", {"frames": 12})
        save_motion(seq, tmp_path / "m.json")
        doc = {"body": {"template": "humanoid22"}, "motion": {"path": "m.json"}, "outputs": {"trajectory": "out/t.jsonl"}}
        (tmp_path / "s.json").write_text(json.dumps(doc))
        sc = load_scenario_file(tmp_path / "s.json")
        np.testing.assert_array_equal(sc.seq.joint_quats, seq.joint_quats)
        assert sc.outputs["trajectory"] == str(tmp_path / "out" / "t.jsonl")

    def test_scenario_round_trip(self, tmp_path):
        fx = fixtures.kick_ball()
        save_motion(fx.seq, tmp_path / "m.json")
        doc = scenario_to_dict({"template": "humanoid22"}, {"path": "m.json"}, fx.scene, fx.config, HalfPhysics(1.0), {})
        (tmp_path / "s.json").write_text(json.dumps(doc))
        sc = load_scenario_file(tmp_path / "s.json")
        assert sc.mode == HalfPhysics(1.0) and sc.config == fx.config
        assert [o.name for o in sc.scene.objects] == ["ball"]
        assert sc.scene.objects[0].mass == 0.5
        np.testing.assert_array_equal(sc.seq.joint_quats, fx.seq.joint_quats)

    def test_body_file_round_trip(self, tmp_path):
        fx = fixtures.squeeze_lift()
        (tmp_path / "b.json").write_text(json.dumps(body_to_dict(fx.spec)))
        save_motion(fx.seq, tmp_path / "m.json")
        doc = {"body": {"path": "b.json"}, "motion": {"path": "m.json"}}
        (tmp_path / "s.json").write_text(json.dumps(doc))
        sc = load_scenario_file(tmp_path / "s.json")
        assert body_to_dict(sc.spec) == body_to_dict(fx.spec)


def error_path_file(tmp_path, doc):
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ScenarioError) as e:
        load_scenario_file(tmp_path / "s.json")
    return e.value.path


def records_equal(a, b):
    for ra, rb in zip(a.records, b.records):
        assert ra.frame == rb.frame and ra.time == rb.time
        for f in ("root_pos", "root_quat", "joints", "link_pos", "link_quat", "obj_pos", "obj_quat", "obj_lin", "obj_ang"):
            np.testing.assert_array_equal(getattr(ra, f), getattr(rb, f))
    assert len(a) == len(b) and a.object_names == b.object_names


class TestTrajectoryFiles:
    def test_round_trip(self, tmp_path):
        fx = fixtures.kick_ball(frames=40)
        traj = run(fx.spec, fx.seq, fx.scene, fx.config, fx.mode)
        write_trajectory(traj, tmp_path / "t.jsonl")
        back = read_trajectory(tmp_path / "t.jsonl")
        records_equal(traj, back)
        assert trajectory_lines(back) == trajectory_lines(traj)

    def test_empty(self, tmp_path):
        write_trajectory(Trajectory([], []), tmp_path / "e.jsonl")
        assert (tmp_path / "e.jsonl").read_text() == ""
        assert len(read_trajectory(tmp_path / "e.jsonl")) == 0

    def test_line_count(self, tmp_path):
        fx = fixtures.free_space("walk_forward", 300)
        write_trajectory(kinematic_replay(fx.spec, fx.seq), tmp_path / "t.jsonl")
        lines = (tmp_path / "t.jsonl").read_text().splitlines()
        assert len(lines) == 300
        assert [json.loads(l)["frame"] for l in lines] == list(range(300))
        keys = set(json.loads(lines[0]))
        assert keys == {"frame", "time", "root_pos", "root_quat", "joints", "links", "objects"}

    def test_awkward_floats_survive(self, tmp_path):
        fx = fixtures.free_space("static", 2)
        traj = kinematic_replay(fx.spec, fx.seq)
        traj.records[1].root_pos = np.array([0.1 + 0.2, 1e-300, -5e-324])
        write_trajectory(traj, tmp_path / "t.jsonl")
        np.testing.assert_array_equal(read_trajectory(tmp_path / "t.jsonl").records[1].root_pos, traj.records[1].root_pos)

    def test_malformed_line(self, tmp_path):
        fx = fixtures.free_space("static", 3)
        write_trajectory(kinematic_replay(fx.spec, fx.seq), tmp_path / "t.jsonl")
        text = (tmp_path / "t.jsonl").read_text().splitlines()
        (tmp_path / "bad.jsonl").write_text(text[0] + "\n" + text[1][: len(text[1]) // 2] + "\n")
        with pytest.raises(TrajectoryFormatError, match=":2:"):
            read_trajectory(tmp_path / "bad.jsonl")


def parse_obj(text):
    groups, verts, current = {}, [], None
    for line in text.splitlines():
        tag, *rest = line.split()
        if tag == "g":
            current = rest[0]
            groups[current] = {"v": [], "f": []}
        elif tag == "v":
            verts.append([float(x) for x in rest])
            groups[current]["v"].append(len(verts) - 1)
        elif tag == "f":
            groups[current]["f"].append(tuple(int(x) - 1 for x in rest))
    return groups, np.array(verts)


def closed_manifold(faces):
    edges = {}
    for tri in faces:
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            edges[(a, b)] = edges.get((a, b), 0) + 1
    # every directed edge used once and matched by its reverse: closed and consistently oriented
    return all(c == 1 and edges.get((b, a)) == 1 for (a, b), c in edges.items())


class TestObjExport:
    @pytest.mark.parametrize("shape", [Sphere(0.1), Capsule(0.05, 0.2), Box(np.array([0.1, 0.2, 0.3]))])
    def test_meshes_closed(self, shape):
        verts, faces = shape_mesh(shape)
        assert closed_manifold(faces)
        v = np.asarray(verts)
        vol = sum(np.dot(v[a], np.cross(v[b], v[c])) for a, b, c in faces) / 6.0
        assert vol > 0

    def test_tessellation_sizes(self):
        assert len(shape_mesh(Box(np.ones(3)))[1]) == 12
        # 16 segments around, 8 bands from pole to pole
        assert len(shape_mesh(Sphere(1.0))[1]) == 2 * 16 + 2 * 16 * 6

    def test_single_object_group(self, tmp_path):
        spec = build_humanoid("humanoid22")
        scene = SceneSpec(objects=[RigidObjectSpec("ball", Sphere(0.1), 1.0)])
        traj = kinematic_replay(spec, synth_motion("static", {"frames": 2}), scene)
        export_frame_obj(traj.records[0], spec, scene, tmp_path / "f.obj")
        groups, _ = parse_obj((tmp_path / "f.obj").read_text())
        assert len(groups) == 23
        assert closed_manifold(groups["ball"]["f"])

    def test_humanoid_groups_match_fk(self):
        spec = build_humanoid("humanoid22")
        seq = synth_motion("sine_joints", {"frames": 5})
        rec = kinematic_replay(spec, seq).records[3]
        groups, verts = parse_obj(frame_obj_text(rec, spec, SceneSpec()))
        assert list(groups) == [l.name for l in spec.links]
        poses = forward_kinematics(spec, seq.frame(3))
        for link, pose in zip(spec.links, poses):
            local, _ = shape_mesh(link.shape)
            expect = np.array([quat_rotate(pose.orientation, np.asarray(v, dtype=float)) + pose.position for v in local])
            assert np.max(np.abs(verts[groups[link.name]["v"]] - expect)) <= 1e-6

    def test_rest_pose(self):
        spec = build_humanoid("humanoid22")
        rec = kinematic_replay(spec, synth_motion("static", {"frames": 2})).records[0]
        groups, _ = parse_obj(frame_obj_text(rec, spec, SceneSpec()))
        assert len(groups) == 22
        assert rest_state(spec).joint_quats.shape == (21, 4)
