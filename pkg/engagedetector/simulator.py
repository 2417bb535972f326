"""
Engagement Detector - Scenario Simulator
Deterministic synthetic sensor streams (laser scans, skeletons, faces, speech
activity, source localization) and ground-truth annotation timelines for
scripted agents walking through an L-shaped room around an immobile robot.

Robot frame: origin at the telemeter, x forward, y to the left.
"""

from __future__ import annotations

import os
import math
import logging
import configparser
from dataclasses import dataclass, field

import numpy as np

from . import config
from .acoustic_features import SadTag, SourceLocalization, beam_set, quantize_beam, write_localization, write_sad
from .body_features import FaceDetection, Joint, SkeletonFrame, write_faces, write_skeletons
from .core import JOINT_NAMES
from .fusion import TimelineEvent, write_timeline
from .laser_tracking import LaserScan, LidarConfig, scan_to_record
from .utils import file_checksum, wrap_angle, write_jsonl

logger = logging.getLogger(__name__)

INTENT_KINDS = ("approach", "interact", "depart", "wander")


class ScriptError(ValueError):
    """Invalid scenario script (syntax, timing or geometry)."""


# --- Room ---

@dataclass(frozen=True)
class Room:
    polygon: tuple = tuple(config.ROOM_POLYGON)
    doors: dict = field(default_factory=lambda: dict(config.ROOM_DOORS))

    def walls(self):
        n = len(self.polygon)
        return [(np.asarray(self.polygon[i], float), np.asarray(self.polygon[(i + 1) % n], float))
                for i in range(n)]

    def wall_segments(self):
        """Wall pieces left once the door gaps are cut out."""
        gaps = {}
        for wall, start, end in self.doors.values():
            gaps.setdefault(wall, []).append((start, end))
        segments = []
        for i, (p, q) in enumerate(self.walls()):
            length = float(np.linalg.norm(q - p))
            u = (q - p) / length
            cursor = 0.0
            for start, end in sorted(gaps.get(i, [])):
                if start > cursor:
                    segments.append((p + u * cursor, p + u * start))
                cursor = max(cursor, end)
            if cursor < length:
                segments.append((p + u * cursor, q))
        return segments

    def contains(self, x, y):
        """Even-odd test; points on the boundary count as outside."""
        inside = False
        for p, q in self.walls():
            if (p[1] > y) != (q[1] > y):
                x_cross = p[0] + (y - p[1]) * (q[0] - p[0]) / (q[1] - p[1])
                if x < x_cross:
                    inside = not inside
        return inside


# --- Scripts ---

@dataclass(frozen=True)
class Waypoint:
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class IntentSegment:
    kind: str
    start: float
    end: float


@dataclass(frozen=True)
class AgentScript:
    id: int
    waypoints: tuple
    intents: tuple = ()
    speech: tuple = ()
    touches: tuple = ()
    gaze_offset: float = 0.0

    def intent_at(self, t):
        for intent in self.intents:
            if intent.start <= t < intent.end or (intent.kind == "interact" and t == intent.end):
                return intent.kind
        return "wander"

    def speaking(self, t):
        return any(start <= t < end for start, end in self.speech)


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    duration: float
    agents: tuple = ()
    seed: int = config.DEFAULT_SEED


def validate_script(script, room=None):
    room = room or Room()
    if script.duration <= 0:
        raise ScriptError(f"{script.name}: duration must be positive")
    ids = [a.id for a in script.agents]
    if len(ids) != len(set(ids)):
        raise ScriptError(f"{script.name}: duplicate agent ids")
    for agent in script.agents:
        wps = agent.waypoints
        if len(wps) < 2:
            raise ScriptError(f"agent {agent.id}: needs at least 2 waypoints")
        for a, b in zip(wps, wps[1:]):
            if b.t <= a.t:
                raise ScriptError(f"agent {agent.id}: waypoint times must increase ({a.t} -> {b.t})")
            steps = max(1, int(math.hypot(b.x - a.x, b.y - a.y) / 0.1))
            for s in range(steps + 1):
                f = s / steps
                x, y = a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)
                if not room.contains(x, y):
                    raise ScriptError(f"agent {agent.id}: path leaves the room at ({x:.2f}, {y:.2f})")
        intents = sorted(agent.intents, key=lambda i: i.start)
        for intent in intents:
            if intent.kind not in INTENT_KINDS:
                raise ScriptError(f"agent {agent.id}: unknown intent {intent.kind}")
            if intent.end <= intent.start:
                raise ScriptError(f"agent {agent.id}: empty {intent.kind} intent")
        for a, b in zip(intents, intents[1:]):
            if b.start < a.end:
                raise ScriptError(f"agent {agent.id}: intents {a.kind} and {b.kind} overlap")
        for first, last in agent.touches:
            if last < first:
                raise ScriptError(f"agent {agent.id}: touch interval reversed")
        for start, end in agent.speech:
            if end <= start:
                raise ScriptError(f"agent {agent.id}: empty speech interval")
    return script


def _pairs(text, width, key):
    entries = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) != width:
            raise ScriptError(f"'{key}' entry '{chunk}' needs {width} fields")
        entries.append(parts)
    return entries


def parse_script(text, name="script"):
    """Parses the INI scenario format.

    [scenario]
    name = approach
    duration = 30
    seed = 7

    [agent:1]
    waypoints = 3.0 2.85 0.0; 9.0 0.6 0.0
    intents = approach 3.5 9.0
    speech = 8.0 9.0
    touches = 9.0 15.0
    gaze_offset = 0.0
    """
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ScriptError(f"{name}: {e}") from e
    if not parser.has_section("scenario"):
        raise ScriptError(f"{name}: missing [scenario] section")
    scenario = parser["scenario"]
    agents = []
    try:
        for section in parser.sections():
            if not section.startswith("agent:"):
                continue
            body = parser[section]
            agents.append(AgentScript(
                id=int(section.split(":", 1)[1]),
                waypoints=tuple(Waypoint(float(t), float(x), float(y))
                                for t, x, y in _pairs(body.get("waypoints", ""), 3, "waypoints")),
                intents=tuple(IntentSegment(kind, float(s), float(e))
                              for kind, s, e in _pairs(body.get("intents", ""), 3, "intents")),
                speech=tuple((float(s), float(e)) for s, e in _pairs(body.get("speech", ""), 2, "speech")),
                touches=tuple((float(s), float(e)) for s, e in _pairs(body.get("touches", ""), 2, "touches")),
                gaze_offset=math.radians(body.getfloat("gaze_offset", 0.0)),
            ))
        if "duration" not in scenario:
            raise ScriptError(f"{name}: [scenario] needs a duration")
        script = ScenarioScript(name=scenario.get("name", name), duration=scenario.getfloat("duration"),
                                agents=tuple(agents), seed=scenario.getint("seed", config.DEFAULT_SEED))
    except (TypeError, ValueError) as e:
        if isinstance(e, ScriptError):
            raise
        raise ScriptError(f"{name}: {e}") from e
    return validate_script(script)


def script_to_text(script):
    lines = ["[scenario]", f"name = {script.name}", f"duration = {script.duration:.3f}",
             f"seed = {script.seed}"]
    for agent in script.agents:
        lines.append("")
        lines.append(f"[agent:{agent.id}]")
        lines.append("waypoints = " + "; ".join(f"{w.t:.3f} {w.x:.3f} {w.y:.3f}" for w in agent.waypoints))
        if agent.intents:
            lines.append("intents = " + "; ".join(f"{i.kind} {i.start:.3f} {i.end:.3f}" for i in agent.intents))
        if agent.speech:
            lines.append("speech = " + "; ".join(f"{s:.3f} {e:.3f}" for s, e in agent.speech))
        if agent.touches:
            lines.append("touches = " + "; ".join(f"{s:.3f} {e:.3f}" for s, e in agent.touches))
        lines.append(f"gaze_offset = {math.degrees(agent.gaze_offset):.3f}")
    return "\n".join(lines) + "\n"


def read_script(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Scenario script not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return parse_script(f.read(), name=os.path.basename(path))


def write_script(path, script):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(script_to_text(script))


# --- Sensors and gait ---

@dataclass(frozen=True)
class SensorConfig:
    lidar: LidarConfig = field(default_factory=LidarConfig)
    range_noise: float = config.SIM_RANGE_NOISE
    foot_radius: float = config.SIM_FOOT_RADIUS
    kinect_fov: float = config.SIM_KINECT_FOV
    kinect_min_depth: float = config.SIM_KINECT_MIN_DEPTH
    kinect_max_depth: float = config.SIM_KINECT_MAX_DEPTH
    kinect_height: float = config.SIM_KINECT_HEIGHT
    kinect_rate_hz: int = config.SIM_KINECT_RATE_HZ
    joint_noise: float = config.SIM_JOINT_NOISE
    face_min_range: float = config.SIM_FACE_MIN_RANGE
    face_max_range: float = config.SIM_FACE_MAX_RANGE
    face_cone: float = config.SIM_FACE_CONE
    face_miss_rate: float = config.SIM_FACE_MISS_RATE
    image_width: int = config.IMAGE_WIDTH
    image_height: int = config.IMAGE_HEIGHT
    sad_period_us: int = config.SAD_PERIOD_US
    localization_period_us: int = config.LOCALIZATION_PERIOD_US
    angle_noise: float = config.SIM_ANGLE_NOISE
    shoulder_pre_rotation: float = config.SIM_SHOULDER_PRE_ROTATION
    seed: int = config.DEFAULT_SEED

    @property
    def focal_px(self):
        return (self.image_width / 2.0) / math.tan(self.kinect_fov / 2.0)


@dataclass(frozen=True)
class GaitModel:
    step_length: float = config.SIM_STEP_LENGTH
    leg_space: float = config.SIM_LEG_SPACE
    swing_amplitude: float = config.SIM_SWING_AMPLITUDE
    phase_offset: float = math.pi
    standing_speed: float = config.SIM_STANDING_SPEED

    def feet(self, x, y, heading, travelled, walking):
        """Left and right foot centers; the feet swing in antiphase along the heading."""
        u = np.array([math.cos(heading), math.sin(heading)])
        n = np.array([-u[1], u[0]])
        c = np.array([x, y])
        if walking:
            phase = 2.0 * math.pi * travelled / (2.0 * self.step_length)
            swing_left = self.swing_amplitude * math.sin(phase)
            swing_right = self.swing_amplitude * math.sin(phase + self.phase_offset)
        else:
            swing_left = swing_right = 0.0
        half = self.leg_space / 2.0
        return c + n * half + u * swing_left, c - n * half + u * swing_right


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    speed: float
    travelled: float
    hip_yaw: float
    shoulder_yaw: float
    head_yaw: float

    @property
    def bearing(self):
        return math.atan2(self.y, self.x)

    @property
    def distance(self):
        return math.hypot(self.x, self.y)


class AgentMotion:
    """Piecewise-linear agent kinematics and body orientation policy."""

    def __init__(self, agent, pre_rotation=config.SIM_SHOULDER_PRE_ROTATION):
        self.agent = agent
        self.pre_rotation = pre_rotation
        self.times = np.array([w.t for w in agent.waypoints])
        self.points = np.array([[w.x, w.y] for w in agent.waypoints])
        self.segments = np.diff(self.points, axis=0)
        self.lengths = np.hypot(self.segments[:, 0], self.segments[:, 1])
        self.cumulative = np.concatenate([[0.0], np.cumsum(self.lengths)])

    def present(self, t):
        return self.times[0] <= t < self.times[-1]

    def _heading(self, i, x, y):
        for j in range(i, -1, -1):
            if self.lengths[j] > 1e-9:
                return math.atan2(self.segments[j, 1], self.segments[j, 0])
        return math.atan2(-y, -x)

    def state(self, t):
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.segments) - 1))
        dt = self.times[i + 1] - self.times[i]
        frac = float(np.clip((t - self.times[i]) / dt, 0.0, 1.0))
        x, y = self.points[i] + frac * self.segments[i]
        speed = float(self.lengths[i] / dt)
        travelled = float(self.cumulative[i] + frac * self.lengths[i])
        heading = self._heading(i, x, y)
        to_robot = math.atan2(-y, -x)

        intent = self.agent.intent_at(t)
        if intent == "interact":
            hip = shoulder = head = to_robot
        elif intent == "approach":
            hip = heading
            turn = float(np.clip(wrap_angle(to_robot - heading), -self.pre_rotation, self.pre_rotation))
            shoulder = wrap_angle(heading + turn)
            head = to_robot
        else:
            gaze = self.agent.gaze_offset
            hip = heading
            shoulder = wrap_angle(heading + gaze / 2.0)
            head = wrap_angle(heading + gaze)
        return AgentState(x=float(x), y=float(y), heading=heading, speed=speed, travelled=travelled,
                          hip_yaw=hip, shoulder_yaw=shoulder, head_yaw=head)


# Skeleton template: joint -> (lateral offset, height, segment driving its yaw)
_TEMPLATE = {
    "head": (0.0, 1.65, "head"),
    "neck": (0.0, 1.45, "shoulder"),
    "torso": (0.0, 1.15, "hip"),
    "left_shoulder": (0.20, 1.42, "shoulder"),
    "left_elbow": (0.23, 1.15, "shoulder"),
    "left_hand": (0.24, 0.85, "shoulder"),
    "right_shoulder": (-0.20, 1.42, "shoulder"),
    "right_elbow": (-0.23, 1.15, "shoulder"),
    "right_hand": (-0.24, 0.85, "shoulder"),
    "left_hip": (0.10, 0.92, "hip"),
    "left_knee": (0.10, 0.50, "hip"),
    "right_hip": (-0.10, 0.92, "hip"),
    "right_knee": (-0.10, 0.50, "hip"),
}
_ANKLE_HEIGHT = 0.08
_CLOSE_ANKLE_DEPTH = 1.5


def _to_sensor(x, y, height, kinect_height):
    # sensor x is the robot's left, y up, z forward
    return y, height - kinect_height, x


def synthesize_skeleton(t, agent_id, state, feet, sensors, rng):
    yaws = {"head": state.head_yaw, "shoulder": state.shoulder_yaw, "hip": state.hip_yaw}
    joints = {}
    for name, (lateral, height, segment) in _TEMPLATE.items():
        yaw = yaws[segment]
        x = state.x - math.sin(yaw) * lateral
        y = state.y + math.cos(yaw) * lateral
        joints[name] = (*_to_sensor(x, y, height, sensors.kinect_height), 1.0)
    ankle_conf = 0.3 if state.x < _CLOSE_ANKLE_DEPTH else 1.0
    for name, foot in (("left_ankle", feet[0]), ("right_ankle", feet[1])):
        joints[name] = (*_to_sensor(foot[0], foot[1], _ANKLE_HEIGHT, sensors.kinect_height), ankle_conf)
    noise = rng.normal(0.0, sensors.joint_noise, size=(len(JOINT_NAMES), 3))
    return SkeletonFrame(t=t, skeleton_id=agent_id, joints={
        name: Joint(joints[name][0] + noise[k, 0], joints[name][1] + noise[k, 1],
                    joints[name][2] + noise[k, 2], joints[name][3])
        for k, name in enumerate(JOINT_NAMES)})


def in_kinect_cone(state, sensors):
    return (abs(state.bearing) <= sensors.kinect_fov / 2.0
            and sensors.kinect_min_depth <= state.x <= sensors.kinect_max_depth)


def face_box_for(state, sensors):
    """Projected face box (px, py, size) or None when the face is not detectable."""
    if not sensors.face_min_range <= state.distance <= sensors.face_max_range:
        return None
    to_robot = math.atan2(-state.y, -state.x)
    if abs(wrap_angle(state.head_yaw - to_robot)) > sensors.face_cone:
        return None
    X, Y, Z = _to_sensor(state.x, state.y, _TEMPLATE["head"][1], sensors.kinect_height)
    f = sensors.focal_px
    u = sensors.image_width / 2.0 - f * X / Z
    v = sensors.image_height / 2.0 - f * Y / Z
    size = f * config.SIM_FACE_SIZE / Z
    px, py = u - size / 2.0, v - size / 2.0
    if px < 0 or py < 0 or px + size > sensors.image_width or py + size > sensors.image_height:
        return None
    return (px, py, size)


# --- Ray casting ---

def cast_rays(angles, walls, discs, max_range):
    """Ranges along each ray and the index of the disc hit (-1 for walls or nothing)."""
    d = np.column_stack([np.cos(angles), np.sin(angles)])
    ranges = np.full(len(angles), max_range)
    owner = np.full(len(angles), -1)
    for p, q in walls:
        e = q - p
        denom = d[:, 0] * e[1] - d[:, 1] * e[0]
        ok = np.abs(denom) > 1e-12
        safe = np.where(ok, denom, 1.0)
        t = (p[0] * e[1] - p[1] * e[0]) / safe
        s = (p[0] * d[:, 1] - p[1] * d[:, 0]) / safe
        hit = ok & (t > 0) & (s >= 0) & (s <= 1) & (t < ranges)
        ranges = np.where(hit, t, ranges)
        owner = np.where(hit, -1, owner)
    for k, (cx, cy, radius) in enumerate(discs):
        b = d[:, 0] * cx + d[:, 1] * cy
        disc = b * b - (cx * cx + cy * cy - radius * radius)
        t = b - np.sqrt(np.maximum(disc, 0.0))
        hit = (disc >= 0) & (t > 0) & (t < ranges)
        ranges = np.where(hit, t, ranges)
        owner = np.where(hit, k, owner)
    return ranges, owner


# --- Simulation ---

@dataclass
class SimulationResult:
    script: ScenarioScript
    sensors: SensorConfig
    scans: list = field(default_factory=list)
    skeletons: list = field(default_factory=list)
    faces: list = field(default_factory=list)
    sad: list = field(default_factory=list)
    localization: list = field(default_factory=list)
    timeline: list = field(default_factory=list)
    truth: list = field(default_factory=list)

    @property
    def end_us(self):
        return int(round(self.script.duration * 1e6))


def timeline_events(script):
    events = []
    for agent in script.agents:
        events.append(TimelineEvent(_us(agent.waypoints[0].t), "enter", agent.id))
        events.append(TimelineEvent(_us(agent.waypoints[-1].t), "exit", agent.id))
        for intent in agent.intents:
            if intent.kind == "approach":
                events.append(TimelineEvent(_us(intent.start), "approach_start", agent.id))
                events.append(TimelineEvent(_us(intent.end), "approach_end", agent.id))
            elif intent.kind == "depart":
                events.append(TimelineEvent(_us(intent.start), "depart_start", agent.id))
                events.append(TimelineEvent(_us(intent.end), "depart_end", agent.id))
        for first, last in agent.touches:
            events.append(TimelineEvent(_us(first), "touch_first", agent.id))
            events.append(TimelineEvent(_us(last), "touch_last", agent.id))
    return sorted(events, key=lambda e: (e.t, e.who, e.kind))


def _us(seconds):
    return int(round(seconds * 1e6))


def simulate(script, sensors=None, room=None, gait=None):
    """Runs the script and returns every sensor stream plus the annotation timeline."""
    sensors = sensors or SensorConfig()
    room = room or Room()
    gait = gait or GaitModel()
    validate_script(script, room)

    streams = np.random.SeedSequence(sensors.seed).spawn(5)
    rng_laser, rng_skel, rng_face, rng_sad, rng_loc = (np.random.default_rng(s) for s in streams)

    motions = [AgentMotion(agent, sensors.shoulder_pre_rotation) for agent in script.agents]
    result = SimulationResult(script=script, sensors=sensors, timeline=timeline_events(script))
    end = result.end_us
    walls = room.wall_segments()
    angles = sensors.lidar.angles()

    def live_states(t_us):
        t = t_us / 1e6
        out = []
        for motion in motions:
            if motion.present(t):
                state = motion.state(t)
                feet = gait.feet(state.x, state.y, state.hip_yaw, state.travelled,
                                 state.speed > gait.standing_speed)
                out.append((motion.agent, state, feet))
        return out

    # Laser at the master rate
    for t_us in range(0, end, config.FRAME_PERIOD_US):
        live = live_states(t_us)
        discs = [(foot[0], foot[1], sensors.foot_radius) for _, _, feet in live for foot in feet]
        ranges, owner = cast_rays(angles, walls, discs, sensors.lidar.max_range)
        hit = ranges < sensors.lidar.max_range
        noisy = ranges + np.where(hit, rng_laser.normal(0.0, sensors.range_noise, size=ranges.size), 0.0)
        result.scans.append(LaserScan(t=t_us, ranges=np.clip(noisy, 0.0, sensors.lidar.max_range),
                                      angle_min=sensors.lidar.angle_min, angle_max=sensors.lidar.angle_max))
        for k, (agent, state, feet) in enumerate(live):
            result.truth.append({
                "t": t_us, "agent": agent.id, "x": round(state.x, 5), "y": round(state.y, 5),
                "feet": [[round(float(v), 5) for v in foot] for foot in feet],
                "foot_beams": [int(np.sum(owner == 2 * k)), int(np.sum(owner == 2 * k + 1))],
            })

    # Kinect skeletons and faces
    kinect_period = int(round(1e6 / sensors.kinect_rate_hz))
    for t_us in range(0, end, kinect_period):
        for agent, state, feet in live_states(t_us):
            if not in_kinect_cone(state, sensors):
                continue
            result.skeletons.append(synthesize_skeleton(t_us, agent.id, state, feet, sensors, rng_skel))
            box = face_box_for(state, sensors)
            if box is not None and rng_face.random() >= sensors.face_miss_rate:
                result.faces.append(FaceDetection(t=t_us, box=box,
                                                  image=(sensors.image_width, sensors.image_height)))

    # Speech activity and localization
    for t_us in range(0, end, sensors.sad_period_us):
        t = t_us / 1e6
        speech = any(m.present(t) and m.agent.speaking(t) for m in motions)
        result.sad.append(SadTag(t=t_us, speech=speech, confidence=float(rng_sad.uniform(0.8, 1.0))))
    beams = beam_set()
    for t_us in range(0, end, sensors.localization_period_us):
        t = t_us / 1e6
        speakers = [m.state(t) for m in motions if m.present(t) and m.agent.speaking(t)]
        if not speakers:
            continue
        state = min(speakers, key=lambda s: s.distance)
        angle = wrap_angle(state.bearing + rng_loc.normal(0.0, sensors.angle_noise))
        result.localization.append(SourceLocalization(
            t=t_us, beam=quantize_beam(angle, beams), angle=angle,
            confidence=float(rng_loc.uniform(0.6, 0.95)), energy=1.0 / (1.0 + state.distance)))

    logger.info(f"Simulated '{script.name}': {len(result.scans)} scans, {len(result.skeletons)} skeletons, "
                f"{len(result.faces)} faces, {len(result.localization)} localization events")
    return result


STREAM_FILES = {
    "laser": "laser.jsonl",
    "lidar": "lidar.json",
    "skeleton": "skeleton.jsonl",
    "face": "face.jsonl",
    "sad": "sad.jsonl",
    "localization": "localization.jsonl",
    "timeline": "timeline.jsonl",
    "truth": "truth.jsonl",
}


def write_streams(result, out_dir):
    """Writes every stream under `out_dir`.

    Returns:
        dict: stream name -> (path, sha256)
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, filename) for name, filename in STREAM_FILES.items()}
    write_jsonl(paths["laser"], (scan_to_record(s) for s in result.scans))
    result.sensors.lidar.write(paths["lidar"])
    write_skeletons(paths["skeleton"], result.skeletons)
    write_faces(paths["face"], result.faces)
    write_sad(paths["sad"], result.sad)
    write_localization(paths["localization"], result.localization)
    write_timeline(paths["timeline"], result.timeline)
    write_jsonl(paths["truth"], result.truth)
    checksums = {name: (path, file_checksum(path)) for name, path in paths.items()}
    logger.info(f"Streams for '{result.script.name}' written to {out_dir}")
    return checksums
