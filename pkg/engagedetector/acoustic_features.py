"""
Engagement Detector - Acoustic Features
Speech activity (100 Hz tags) and sound source localization (8 Hz events)
reduced to per-tick features on the master clock.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import config
from .utils import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SadTag:
    t: int
    speech: bool
    confidence: float = 1.0


@dataclass(frozen=True)
class SourceLocalization:
    t: int
    beam: float
    angle: float
    confidence: float
    energy: float = 0.0


def beam_set(count=config.BEAM_COUNT, half_span=config.BEAM_HALF_SPAN):
    """Discrete beam centers, uniformly spanning [-half_span, +half_span]."""
    return np.linspace(-half_span, half_span, count)


def quantize_beam(angle, beams=None):
    """Nearest beam center to `angle` (lower beam on ties)."""
    beams = beam_set() if beams is None else np.asarray(beams)
    return float(beams[int(np.argmin(np.abs(beams - angle)))])


def sad_for_tick(tags: Sequence[SadTag]) -> Optional[bool]:
    """OR-aggregation over one tick window; None when the window is empty."""
    if not tags:
        return None
    return any(tag.speech for tag in tags)


def tags_in_window(tags, t, period_us=config.FRAME_PERIOD_US, times=None):
    """Tags with timestamp in (t - period, t]. `tags` must be time ordered."""
    times = [tag.t for tag in tags] if times is None else times
    lo = bisect_right(times, t - period_us)
    hi = bisect_right(times, t)
    return tags[lo:hi]


def localization_for_tick(events, t, staleness_us=config.LOCALIZATION_STALENESS_US, times=None):
    """Last event at or before `t`, or None if there is none or it is stale."""
    times = [e.t for e in events] if times is None else times
    i = bisect_right(times, t)
    if i == 0:
        return None
    event = events[i - 1]
    if t - event.t > staleness_us:
        return None
    return event


class AcousticStream:
    """Time-ordered SAD tags and localization events queried per master tick."""

    def __init__(self, tags=(), events=(), period_us=config.FRAME_PERIOD_US,
                 staleness_us=config.LOCALIZATION_STALENESS_US):
        self.tags = list(tags)
        self.events = list(events)
        self._tag_times = [tag.t for tag in self.tags]
        self._event_times = [e.t for e in self.events]
        if self._tag_times != sorted(self._tag_times) or self._event_times != sorted(self._event_times):
            raise ValueError("acoustic records must be time ordered")
        self.period_us = period_us
        self.staleness_us = staleness_us

    def features_at(self, t):
        """Acoustic features for the tick at `t`, or None when the channel is absent."""
        window = tags_in_window(self.tags, t, self.period_us, self._tag_times)
        speech = sad_for_tick(window)
        event = localization_for_tick(self.events, t, self.staleness_us, self._event_times)
        if speech is None and event is None:
            return None
        out = {}
        if speech is not None:
            out["sad_event"] = 1.0 if speech else 0.0
            out["sad_confidence"] = float(np.mean([tag.confidence for tag in window]))
        if event is not None:
            out["beam"] = event.beam
            out["angle"] = event.angle
            out["source_confidence"] = event.confidence
            out["source_beam_energy"] = event.energy
        return out


# --- Stream I/O ---

def sad_from_record(r):
    return SadTag(t=int(r["t"]), speech=bool(int(r["sad"])), confidence=float(r.get("conf", 1.0)))


def read_sad(path):
    return read_jsonl(path, sad_from_record)


def write_sad(path, tags):
    return write_jsonl(path, ({"t": int(tag.t), "sad": int(tag.speech),
                               "conf": round(float(tag.confidence), 4)} for tag in tags))


def localization_from_record(r):
    return SourceLocalization(t=int(r["t"]), beam=float(r["beam"]), angle=float(r["angle"]),
                              confidence=float(r["conf"]), energy=float(r.get("energy", 0.0)))


def read_localization(path):
    return read_jsonl(path, localization_from_record)


def write_localization(path, events):
    return write_jsonl(path, ({"t": int(e.t), "beam": round(e.beam, 6), "angle": round(e.angle, 6),
                               "conf": round(e.confidence, 4), "energy": round(e.energy, 4)}
                              for e in events))
