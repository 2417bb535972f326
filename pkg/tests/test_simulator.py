import math

import numpy as np
import pytest

from engagedetector.body_features import schegloff_metrics
from engagedetector.laser_tracking import leg_space
from engagedetector.simulator import (AgentMotion, AgentScript, GaitModel, IntentSegment, Room,
                                      ScenarioScript, ScriptError, SensorConfig, Waypoint, cast_rays,
                                      face_box_for, parse_script, read_script, script_to_text, simulate,
                                      synthesize_skeleton, timeline_events, validate_script, write_script,
                                      write_streams)

SCRIPT_TEXT = """
[scenario]
name = walk_in
duration = 6
seed = 3

[agent:1]
waypoints = 3.0 2.85 0.0; 5.5 0.6 0.0
intents = approach 3.5 5.0
speech = 4.0 4.5
gaze_offset = 10
"""


def walk_in():
    return parse_script(SCRIPT_TEXT, "walk_in.ini")


def test_room_shape_and_doors():
    room = Room()
    assert room.contains(0.0, 0.0)
    assert room.contains(-2.0, -1.0)
    assert not room.contains(-2.0, 1.0)
    assert not room.contains(3.5, 0.0)
    # door B leaves a gap straight ahead of the robot
    ranges, _ = cast_rays(np.array([0.0, math.radians(30)]), room.wall_segments(), [], 8.0)
    assert ranges[0] == 8.0
    assert ranges[1] < 8.0


def test_cast_rays_sees_the_nearest_surface():
    wall = [(np.array([2.0, -1.0]), np.array([2.0, 1.0]))]
    discs = [(1.0, 0.0, 0.1), (1.5, 0.0, 0.1)]
    ranges, owner = cast_rays(np.array([0.0, math.radians(20)]), wall, discs, 8.0)
    assert ranges[0] == pytest.approx(0.9)
    assert owner.tolist() == [0, -1]
    assert ranges[1] == pytest.approx(2.0 / math.cos(math.radians(20)))


def test_parse_script_and_text_round_trip(tmp_path):
    script = walk_in()
    assert script.name == "walk_in" and script.seed == 3
    agent = script.agents[0]
    assert agent.gaze_offset == pytest.approx(math.radians(10))
    assert agent.intent_at(4.0) == "approach" and agent.intent_at(5.2) == "wander"
    assert agent.speaking(4.2) and not agent.speaking(4.5)
    write_script(str(tmp_path / "walk_in.ini"), script)
    assert read_script(str(tmp_path / "walk_in.ini")) == script
    assert parse_script(script_to_text(script)) == script


@pytest.mark.parametrize("text", [
    "[scenario]\nname = x\n",
    "[agent:1]\nwaypoints = 0 0 0; 1 0.5 0\n",
    "[scenario]\nduration = 5\n[agent:1]\nwaypoints = 0 0 0\n",
    "[scenario]\nduration = 5\n[agent:1]\nwaypoints = 0 0 0; 1 0.5\n",
    "[scenario]\nduration = 5\n[agent:1]\nwaypoints = 1 0 0; 1 0.5 0\n",
    "[scenario]\nduration = 5\n[agent:1]\nwaypoints = 0 0 0; 1 -2 1\n",
    "[scenario]\nduration = 5\n[agent:1]\nwaypoints = 0 0 0; 1 0.5 0\nintents = dance 0 1\n",
])
def test_invalid_scripts(text):
    with pytest.raises(ScriptError):
        parse_script(text)


def test_overlapping_intents_are_rejected():
    agent = AgentScript(id=1, waypoints=(Waypoint(0, 1, 0), Waypoint(1, 2, 0)),
                        intents=(IntentSegment("approach", 0, 1), IntentSegment("interact", 0.5, 2)))
    with pytest.raises(ScriptError):
        validate_script(ScenarioScript("x", 2.0, (agent,)))


def test_gait_keeps_the_leg_space():
    gait = GaitModel()
    heading = math.radians(35)
    for travelled in (0.0, 0.17, 0.42):
        left, right = gait.feet(1.0, 0.5, heading, travelled, True)
        assert leg_space([left, right], (math.cos(heading), math.sin(heading))) == pytest.approx(0.30)
    left, right = gait.feet(1.0, 0.5, heading, 0.3, False)
    assert np.hypot(*(left - right)) == pytest.approx(0.30)


def test_orientation_policy():
    agent = walk_in().agents[0]
    motion = AgentMotion(agent)
    approaching = motion.state(4.0)
    assert math.cos(approaching.heading) == pytest.approx(-1.0)
    assert math.cos(approaching.head_yaw) == pytest.approx(-1.0)
    wandering = motion.state(5.2)
    assert wandering.head_yaw == pytest.approx(-math.pi + math.radians(10))
    assert not motion.present(5.5)


def test_skeleton_of_someone_facing_the_robot():
    agent = AgentScript(id=4, waypoints=(Waypoint(0, 1.8, 0.0), Waypoint(5, 1.8, 0.0)),
                        intents=(IntentSegment("interact", 0, 5),), touches=((0, 5),))
    state = AgentMotion(agent).state(1.0)
    sensors = SensorConfig(joint_noise=0.0)
    feet = GaitModel().feet(state.x, state.y, state.hip_yaw, 0.0, False)
    skeleton = synthesize_skeleton(0, 4, state, feet, sensors, np.random.default_rng(0))
    metrics = schegloff_metrics(skeleton)
    assert metrics.shoulder.rot == pytest.approx(0.0, abs=1e-9)
    assert metrics.hipTorque == pytest.approx(0.0, abs=1e-9)
    assert metrics.shoulder.z == pytest.approx(1.8)
    box = face_box_for(state, sensors)
    assert box is not None
    assert box[0] + box[2] / 2 == pytest.approx(sensors.image_width / 2)


def test_no_face_when_looking_away():
    agent = AgentScript(id=1, waypoints=(Waypoint(0, 2.0, 0.0), Waypoint(5, 2.0, 1.0)))
    state = AgentMotion(agent).state(1.0)
    assert face_box_for(state, SensorConfig()) is None


def test_timeline_events_follow_the_script():
    events = timeline_events(walk_in())
    kinds = [(e.t, e.kind) for e in events]
    assert kinds == [(3_000_000, "enter"), (3_500_000, "approach_start"), (5_000_000, "approach_end"),
                     (5_500_000, "exit")]


def test_simulation_streams_are_deterministic(tmp_path):
    script = walk_in()
    a = simulate(script, SensorConfig(seed=11))
    b = simulate(script, SensorConfig(seed=11))
    assert len(a.scans) == 6_000_000 // 80_000
    assert len(a.sad) == 600
    assert all(np.array_equal(x.ranges, y.ranges) for x, y in zip(a.scans, b.scans))
    assert any(tag.speech for tag in a.sad)
    assert a.localization and all(e.t % 125_000 == 0 for e in a.localization)
    assert a.skeletons and a.faces
    assert {r["agent"] for r in a.truth} == {1}

    first = write_streams(a, str(tmp_path / "a"))
    second = write_streams(b, str(tmp_path / "b"))
    assert {k: v[1] for k, v in first.items()} == {k: v[1] for k, v in second.items()}
    other = simulate(script, SensorConfig(seed=12))
    assert not np.array_equal(a.scans[50].ranges, other.scans[50].ranges)
