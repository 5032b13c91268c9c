"""Regenerate the example scenario files in this directory from the fixture builders."""
import json
from pathlib import Path

from halfphys import fixtures as F
from halfphys.body import body_to_dict
from halfphys.kinematics import save_motion
from halfphys.scenario import scenario_to_dict

HERE = Path(__file__).resolve().parent


def write(name, fx, body=None, motion=None):
    if body is None:
        body = {"template": "humanoid22"}
    if motion is None:
        save_motion(fx.seq, HERE / f"{name}.motion.json")
        motion = {"path": f"{name}.motion.json"}
    outputs = {"trajectory": f"out/{name}.jsonl", "metrics": f"out/{name}.metrics.json"}
    doc = scenario_to_dict(body, motion, fx.scene, fx.config, fx.mode, outputs)
    (HERE / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")


def main():
    write("free_walk", F.free_space("walk_forward"), motion={"synth": {"kind": "walk_forward", "frames": 300}})
    write("free_sine", F.free_space("sine_joints"), motion={"synth": {"kind": "sine_joints", "frames": 300}})
    walk = {"synth": {"kind": "walk_forward", "frames": 300, "speed": 0.3, "clearance": 0.02}}
    write("wall_walk", F.wall_walk(), motion=walk)
    write("bench", F.bench_scene(), motion=walk)
    write("sit_on_box", F.sit_on_box())
    write("kick_ball", F.kick_ball(), motion={"synth": {"kind": "kick", "frames": 90, "kick_time": 0.5, "kick_duration": 0.6}})
    grip = F.squeeze_lift(box_friction=1.0)
    (HERE / "gripper.body.json").write_text(json.dumps(body_to_dict(grip.spec), indent=2) + "\n")
    write("squeeze_lift", grip, body={"path": "gripper.body.json"})


if __name__ == "__main__":
    main()
