"""
Engagement Detector - Builtin Scenarios
Seeded generators for the passing-by and playing-cards scripts, plus a
tangential walk used to exercise foot occlusions.
"""

import math
import logging

import numpy as np

from . import config
from .simulator import AgentScript, IntentSegment, ScenarioScript, Waypoint, validate_script
from .utils import wrap_angle

logger = logging.getLogger(__name__)

# Door B entry, just inside the east wall, facing the robot
_ENTRY_X = 2.85
_PREFIX = 0.5  # m walked before the direct path starts
_STOP = (0.6, 0.0)  # where a user stands to reach the tablet


def _timed(points, start, speed):
    """Waypoints along `points` at constant speed from `start`; returns (waypoints, arrival times)."""
    t = start
    waypoints = [Waypoint(t, *points[0])]
    times = [t]
    for a, b in zip(points, points[1:]):
        t += math.hypot(b[0] - a[0], b[1] - a[1]) / speed
        waypoints.append(Waypoint(t, *b))
        times.append(t)
    return waypoints, times


def _exit_point(side):
    # door C on the north wall, door A on the south wall
    return (1.5, 2.35 * side)


def pass_by(seed=config.DEFAULT_SEED, start=config.SIM_SCENARIO_START, agent_id=1):
    """Walks in from door B toward the robot, passes within a meter of it and leaves."""
    rng = np.random.default_rng(seed)
    y0 = float(rng.uniform(-0.35, 0.35))
    speed = float(rng.uniform(0.8, 1.1))
    side = 1 if rng.random() < 0.5 else -1
    gaze = side * math.radians(float(rng.uniform(35.0, 50.0)))

    points = [(_ENTRY_X, y0), (_ENTRY_X - _PREFIX, y0), (1.0, 0.3 * y0), (0.55, 0.75 * side), _exit_point(side)]
    waypoints, times = _timed(points, start, speed)
    speech = ()
    if rng.random() < 0.3:
        talk = float(rng.uniform(times[1], times[3]))
        speech = ((talk, talk + float(rng.uniform(1.0, 2.0))),)
    agent = AgentScript(id=agent_id, waypoints=tuple(waypoints), speech=speech, gaze_offset=gaze)
    script = ScenarioScript(name="pass_by", duration=times[-1] + 2.0, agents=(agent,), seed=seed)
    return validate_script(script)


def approach_interact_leave(seed=config.DEFAULT_SEED, start=config.SIM_SCENARIO_START, agent_id=1):
    """Direct approach from door B, a tablet session, then departure through door A or C."""
    rng = np.random.default_rng(seed)
    y0 = float(rng.uniform(-0.35, 0.35))
    speed = float(rng.uniform(0.8, 1.1))
    side = 1 if rng.random() < 0.5 else -1

    inbound, times = _timed([(_ENTRY_X, y0), (_ENTRY_X - _PREFIX, y0), _STOP], start, speed)
    arrive = times[-1]
    touch_first = arrive + 0.5
    touch_last = touch_first + float(rng.uniform(6.0, 10.0))
    outbound, out_times = _timed([_STOP, (1.4, 1.2 * side), _exit_point(side)], touch_last, speed)

    waypoints = inbound + outbound
    intents = (
        IntentSegment("approach", times[1], touch_first),
        IntentSegment("interact", touch_first, touch_last),
        IntentSegment("depart", touch_last, out_times[1]),
    )
    speech = ((arrive - 1.0, arrive + 0.3), (touch_first + 2.0, touch_first + 3.5))
    agent = AgentScript(id=agent_id, waypoints=tuple(waypoints), intents=intents, speech=speech,
                        touches=((touch_first, touch_last),))
    script = ScenarioScript(name="approach_interact_leave", duration=out_times[-1] + 2.0,
                            agents=(agent,), seed=seed)
    return validate_script(script)


def cards_multiuser(seed=config.DEFAULT_SEED, start=config.SIM_SCENARIO_START):
    """Three players sit at a table in the notch wing; one is sent to the robot mid-scene."""
    rng = np.random.default_rng(seed)
    seats = [(-2.0, -0.7), (-2.5, -1.6), (-1.5, -1.6)]
    table = (-2.0, -1.3)
    speed = float(rng.uniform(0.8, 1.0))
    dispatch = start + float(rng.uniform(4.0, 6.0))

    seat = seats[0]
    path, times = _timed([seat, (-0.8, -1.4), (0.9, -1.0), _STOP], dispatch, speed)
    arrive = times[-1]
    touch_first = arrive + 0.5
    touch_last = touch_first + float(rng.uniform(6.0, 9.0))
    back, back_times = _timed([_STOP, (1.0, -1.0), (-0.8, -1.4), seat], touch_last, speed)
    duration = back_times[-1] + 5.0

    def facing_table(pos):
        look = math.atan2(table[1] - pos[1], table[0] - pos[0])
        return wrap_angle(look - math.atan2(-pos[1], -pos[0]))

    messenger = AgentScript(
        id=1,
        waypoints=(Waypoint(start, *seat),) + tuple(path) + tuple(back) + (Waypoint(duration, *seat),),
        intents=(IntentSegment("approach", times[2], touch_first),
                 IntentSegment("interact", touch_first, touch_last),
                 IntentSegment("depart", touch_last, back_times[1])),
        speech=((arrive - 0.8, arrive + 0.4),),
        touches=((touch_first, touch_last),),
    )
    players = [messenger]
    for agent_id, pos in ((2, seats[1]), (3, seats[2])):
        chat = start + float(rng.uniform(1.0, 8.0))
        players.append(AgentScript(id=agent_id, waypoints=(Waypoint(start, *pos), Waypoint(duration, *pos)),
                                   speech=((chat, chat + 1.5),), gaze_offset=facing_table(pos)))
    script = ScenarioScript(name="cards_multiuser", duration=duration, agents=tuple(players), seed=seed)
    return validate_script(script)


def crossing_walk(seed=config.DEFAULT_SEED, start=config.SIM_SCENARIO_START, radius=2.0, span_deg=75.0,
                  speed=0.7):
    """Tangential walk around the robot: out along one arc, back along a wider one.

    The feet line up with the telemeter rays, so one foot hides behind the
    other every time the swinging feet cross.
    """
    rng = np.random.default_rng(seed)
    span = math.radians(span_deg)
    outer = radius + 0.4
    arc_out = [(radius * math.cos(a), radius * math.sin(a)) for a in np.linspace(-span, span, 31)]
    arc_back = [(outer * math.cos(a), outer * math.sin(a)) for a in np.linspace(span, -span, 31)]
    waypoints, times = _timed(arc_out + arc_back, start + float(rng.uniform(0.0, 0.5)), speed)
    agent = AgentScript(id=1, waypoints=tuple(waypoints))
    script = ScenarioScript(name="crossing_walk", duration=times[-1] + 1.0, agents=(agent,), seed=seed)
    return validate_script(script)


_BUILTINS = {
    "pass_by": pass_by,
    "approach_interact_leave": approach_interact_leave,
    "cards_multiuser": cards_multiuser,
    "crossing_walk": crossing_walk,
}


def builtin_scenarios():
    """Name -> generator(seed) for every builtin script."""
    return dict(_BUILTINS)


def builtin(name, seed=config.DEFAULT_SEED):
    try:
        return _BUILTINS[name](seed=seed)
    except KeyError:
        raise ValueError(f"unknown builtin scenario: {name} (known: {', '.join(sorted(_BUILTINS))})") from None


def scenario_suite(n_pass_by=20, n_approach=20, seed=config.DEFAULT_SEED):
    """Seeded mix of pass-by and approach scripts."""
    scripts = [pass_by(seed=seed * 1000 + i) for i in range(n_pass_by)]
    scripts += [approach_interact_leave(seed=seed * 1000 + n_pass_by + i) for i in range(n_approach)]
    logger.info(f"Scenario suite: {n_pass_by} pass-by and {n_approach} approach scripts (seed {seed})")
    return scripts
