"""
Engagement Detector - Fusion
Synchronizes every feature channel onto the 80 ms master clock with
last-value hold, imputes neutral values for absent channels and attaches
labels from the experimenter's annotation timeline.
"""

from __future__ import annotations

import os
import logging
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import config
from .core import (Channel, ClassLabel5, FeatureVector, FusedDataset, ManifestError,
                   SyncedFrame, is_tick, tick_range)
from .acoustic_features import AcousticStream
from .body_features import select_face, select_skeleton, skeleton_features
from .laser_tracking import track_stream
from .utils import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)


class NonMonotonicTimestampError(ValueError):
    """A channel record arrived with a timestamp older than its predecessor."""

    def __init__(self, channel, record, previous_t):
        self.channel = channel
        self.record = record
        self.previous_t = previous_t
        super().__init__(f"{channel} record at t={record.t} follows t={previous_t}")


class TimelineError(ValueError):
    """Malformed or contradictory annotation timeline."""


# --- Channel records ---

@dataclass(frozen=True)
class FeatureRecord:
    """Channel features valid from `t`; values None means the channel reported nothing."""

    t: int
    values: Optional[dict]


@dataclass(frozen=True)
class LaserObservation:
    t: int
    pedestrians: tuple

    def to_record(self):
        if not self.pedestrians:
            return FeatureRecord(self.t, None)
        nearest = min(self.pedestrians, key=lambda p: (p.cible_dist, p.id))
        values = nearest.features()
        values["number_of_pedestrians"] = float(len(self.pedestrians))
        values["pedestrian_id"] = float(nearest.id)
        return FeatureRecord(self.t, values)


@dataclass(frozen=True)
class SkeletonObservation:
    t: int
    skeletons: tuple

    def to_record(self):
        chosen = select_skeleton(self.skeletons)
        if chosen is None:
            return FeatureRecord(self.t, None)
        values = skeleton_features(chosen)
        values["number_of_skeletons"] = float(len(self.skeletons))
        return FeatureRecord(self.t, values)


@dataclass(frozen=True)
class FaceObservation:
    t: int
    detections: tuple

    def to_record(self):
        face = select_face(self.detections)
        if face is None:
            return FeatureRecord(self.t, None)
        values = face.features()
        values["face_count"] = float(len(self.detections))
        return FeatureRecord(self.t, values)


def _group_by_time(records):
    groups = defaultdict(list)
    order = []
    for record in records:
        if record.t not in groups:
            order.append(record.t)
        groups[record.t].append(record)
    return [(t, tuple(groups[t])) for t in order]


def laser_records(pedestrian_features, scan_times=()):
    """One record per scan; scans without pedestrians report an empty channel."""
    by_time = dict(_group_by_time(pedestrian_features))
    times = sorted(set(by_time) | set(scan_times))
    return [LaserObservation(t, by_time.get(t, ())).to_record() for t in times]


def skeleton_records(skeletons):
    return [SkeletonObservation(t, group).to_record() for t, group in _group_by_time(skeletons)]


def face_records(detections):
    return [FaceObservation(t, group).to_record() for t, group in _group_by_time(detections)]


def acoustic_records(stream, t0, t1):
    """Per-tick acoustic features; ticks without audio evidence are omitted."""
    records = []
    for t in tick_range(t0, t1):
        values = stream.features_at(t)
        if values is not None:
            records.append(FeatureRecord(t, values))
    return records


def feature_record_from_record(r):
    values = r.get("features")
    if values is not None:
        values = {str(k): float(v) for k, v in values.items()}
    return FeatureRecord(int(r["t"]), values)


def read_feature_records(path):
    return read_jsonl(path, feature_record_from_record)


def write_feature_records(path, records):
    """Writes channel records at full float precision."""
    def exact(values):
        if values is None:
            return None
        return {k: float(v) for k, v in values.items()}
    return write_jsonl(path, ({"t": int(r.t), "features": exact(r.values)} for r in records))


# --- Channel buffers ---

class ChannelBuffer:
    """Ordered records of one channel read through a forward-only cursor."""

    def __init__(self, channel, staleness_us, records=()):
        self.channel = Channel(channel)
        self.staleness_us = staleness_us
        self._records = []
        self._times = []
        self._cursor = 0
        self._last_query = None
        for record in records:
            self.append(record)

    def __len__(self):
        return len(self._records)

    def append(self, record):
        if self._times and record.t < self._times[-1]:
            raise NonMonotonicTimestampError(self.channel.value, record, self._times[-1])
        self._records.append(record)
        self._times.append(record.t)

    def rewind(self):
        self._cursor = 0
        self._last_query = None

    def value_at(self, t):
        """Most recent admissible record at or before `t`, advancing the cursor."""
        if self._last_query is not None and t < self._last_query:
            raise ValueError(f"{self.channel.value} cursor cannot move back from {self._last_query} to {t}")
        self._last_query = t
        while self._cursor < len(self._times) and self._times[self._cursor] <= t:
            self._cursor += 1
        return self._admissible(self._cursor, t)

    def lookup(self, t):
        """Stateless equivalent of value_at."""
        return self._admissible(bisect_right(self._times, t), t)

    def _admissible(self, end, t):
        if end == 0:
            return None
        record = self._records[end - 1]
        if t - record.t > self.staleness_us:
            return None
        return record


def build_channels(tracker_outputs, skeletons, faces, acoustic, t0, t1):
    """Channel buffers from in-memory tracker outputs and body/audio streams."""
    pedestrians = [f for output in tracker_outputs for f in output.features]
    return make_channels(
        laser=laser_records(pedestrians, [output.t for output in tracker_outputs]),
        skeleton=skeleton_records(skeletons),
        face=face_records(faces),
        audio=acoustic_records(acoustic, t0, t1),
    )


STALENESS_US = {
    Channel.LASER: config.LASER_STALENESS_US,
    Channel.SKELETON: config.SKELETON_STALENESS_US,
    Channel.FACE: config.FACE_STALENESS_US,
    # acoustic records are already aggregated per tick
    Channel.AUDIO: 0,
}


def make_channels(laser=(), skeleton=(), face=(), audio=()):
    sources = {Channel.LASER: laser, Channel.SKELETON: skeleton, Channel.FACE: face, Channel.AUDIO: audio}
    return {channel: ChannelBuffer(channel, STALENESS_US[channel], records)
            for channel, records in sources.items()}


# --- Synchronization ---

@dataclass(frozen=True)
class RawFrame:
    t: int
    values: dict
    presence: frozenset = frozenset()


def _check_span(t0, t1):
    if not (is_tick(t0) and is_tick(t1)):
        raise ValueError(f"t0={t0} and t1={t1} must be multiples of {config.FRAME_PERIOD_US} us")
    if t0 >= t1:
        raise ValueError(f"empty span: t0={t0} >= t1={t1}")


def synchronize(channels, t0, t1):
    """One unlabeled frame per master tick in [t0, t1) with last-value hold."""
    _check_span(t0, t1)
    for buffer in channels.values():
        buffer.rewind()
    frames = []
    for t in tick_range(t0, t1):
        values = {}
        presence = set()
        for channel in sorted(channels, key=lambda c: c.value):
            record = channels[channel].value_at(t)
            if record is None or record.values is None:
                continue
            presence.add(channel)
            values.update(record.values)
        frames.append(RawFrame(t=t, values=values, presence=frozenset(presence)))
    logger.debug(f"Synchronized {len(frames)} ticks over [{t0}, {t1})")
    return frames


def impute_neutral(frame, manifest):
    """Manifest-ordered vector; features of absent channels take their neutral value."""
    values = []
    for spec in manifest.features:
        if spec.channel in frame.presence:
            values.append(float(frame.values.get(spec.id, spec.neutral)))
        else:
            values.append(spec.neutral)
    presence = frozenset(c for c in frame.presence if any(s.channel == c for s in manifest.features))
    return FeatureVector(values=tuple(values), presence=presence)


# --- Annotation timeline ---

EVENT_KINDS = ("touch_first", "touch_last", "enter", "exit",
               "approach_start", "approach_end", "depart_start", "depart_end")
_PAIRS = {"touch_first": "touch_last", "enter": "exit",
          "approach_start": "approach_end", "depart_start": "depart_end"}


@dataclass(frozen=True)
class TimelineEvent:
    t: int
    kind: str
    who: int

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise TimelineError(f"unknown timeline event kind: {self.kind}")


@dataclass(frozen=True)
class Interval:
    start: int
    end: float
    who: int


def _overlaps(a, b):
    return max(a.start, b.start) < min(a.end, b.end)


@dataclass
class AnnotationTimeline:
    presence: list = field(default_factory=list)
    interactions: list = field(default_factory=list)
    approaches: list = field(default_factory=list)
    departures: list = field(default_factory=list)
    events: tuple = ()

    @classmethod
    def from_events(cls, events):
        events = sorted(events, key=lambda e: e.t)
        open_ = {}
        spans = defaultdict(list)
        closers = {v: k for k, v in _PAIRS.items()}
        for event in events:
            if event.kind in _PAIRS:
                key = (event.kind, event.who)
                if key in open_:
                    raise TimelineError(f"{event.kind} for {event.who} at t={event.t} while one is open")
                open_[key] = event.t
            else:
                opener = closers[event.kind]
                start = open_.pop((opener, event.who), None)
                if start is None:
                    raise TimelineError(f"{event.kind} for {event.who} at t={event.t} without {opener}")
                if event.kind == "touch_last":
                    if event.t < start:
                        raise TimelineError(f"touch_last before touch_first for {event.who}")
                elif event.t <= start:
                    raise TimelineError(f"{opener}..{event.kind} for {event.who} is empty or reversed")
                spans[opener].append(Interval(start, event.t, event.who))
        for (opener, who), start in open_.items():
            if opener != "enter":
                raise TimelineError(f"{opener} for {who} at t={start} is never closed")
            spans["enter"].append(Interval(start, float("inf"), who))

        timeline = cls(presence=sorted(spans["enter"], key=lambda i: i.start),
                       interactions=spans["touch_first"], approaches=spans["approach_start"],
                       departures=spans["depart_start"], events=tuple(events))
        timeline.validate()
        return timeline

    def validate(self):
        """Rejects overlapping engagement intervals of one agent.

        Intervals of different agents may overlap; `label_at` then resolves
        each tick by precedence: interaction, wantInteraction, leaveInteraction.
        """
        # the closed interaction interval may touch a departure at a single instant
        segments = ([("interaction", i) for i in self.interactions]
                    + [("approach", i) for i in self.approaches]
                    + [("depart", i) for i in self.departures])
        for i, (kind_a, a) in enumerate(segments):
            for kind_b, b in segments[i + 1:]:
                if a.who == b.who and _overlaps(a, b):
                    raise TimelineError(f"{kind_a} [{a.start}, {a.end}] of {a.who} overlaps "
                                        f"{kind_b} [{b.start}, {b.end}] of {b.who}")

    def label_at(self, t):
        if any(i.start <= t <= i.end for i in self.interactions):
            return ClassLabel5.INTERACTION
        if any(i.start <= t < i.end for i in self.approaches):
            return ClassLabel5.WANT_INTERACTION
        if any(i.start <= t < i.end for i in self.departures):
            return ClassLabel5.LEAVE_INTERACTION
        if any(i.start <= t < i.end for i in self.presence):
            return ClassLabel5.SOMEONE
        return ClassLabel5.NO_ONE

    def max_concurrent_presence(self):
        points = sorted([(i.start, 1) for i in self.presence] + [(i.end, -1) for i in self.presence],
                        key=lambda p: (p[0], p[1]))
        current = best = 0
        for _, step in points:
            current += step
            best = max(best, current)
        return best


def label_from_timeline(timeline, frames):
    return [SyncedFrame(t=f.t, features=f.features, label=timeline.label_at(f.t)) for f in frames]


def read_timeline(path):
    return AnnotationTimeline.from_events(
        read_jsonl(path, lambda r: TimelineEvent(int(r["t"]), str(r["kind"]), int(r["who"]))))


def write_timeline(path, events):
    return write_jsonl(path, ({"t": int(e.t), "kind": e.kind, "who": int(e.who)}
                              for e in sorted(events, key=lambda e: e.t)))


# --- End to end ---

def fuse(channels, timeline, t0, t1, manifest):
    """Synchronized, imputed and labeled frames for [t0, t1)."""
    raw = synchronize(channels, t0, t1)
    frames = [SyncedFrame(t=r.t, features=impute_neutral(r, manifest)) for r in raw]
    labeled = label_from_timeline(timeline, frames)
    logger.info(f"Fused {len(labeled)} frames with {len(manifest)} features")
    return labeled


def fuse_recording(scans, lidar, skeletons, faces, sad, localization, events, manifest, tracker_cfg=None):
    """Tracks, extracts and fuses one recording held in memory.

    Returns:
        tuple: (labeled frames, tracker outputs)
    """
    outputs = track_stream(scans, lidar, tracker_cfg)
    t0, t1 = span_of(scan.t for scan in scans)
    channels = build_channels(outputs, skeletons, faces, AcousticStream(sad, localization), t0, t1)
    timeline = AnnotationTimeline.from_events(events)
    return fuse(channels, timeline, t0, t1, manifest), outputs


def span_of(times):
    """Master tick span [t0, t1) covering the given timestamps."""
    period = config.FRAME_PERIOD_US
    times = list(times)
    if not times:
        raise ValueError("cannot derive a tick span from an empty stream")
    t0 = -(-min(times) // period) * period
    t1 = (max(times) // period) * period + period
    return t0, t1


# --- Fused CSV ---

def write_fused_csv(path, frames, manifest, header):
    rows = np.vstack([f.features.as_array() for f in frames]) if frames else np.zeros((0, len(manifest)))
    df = pd.DataFrame(rows, columns=list(manifest.ids))
    df.insert(0, "t", [int(f.t) for f in frames])
    df["label"] = [ClassLabel5(f.label).value for f in frames]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(header + "\n")
        df.to_csv(f, index=False, lineterminator="\n", float_format="%.10g")
    logger.info(f"Fused dataset ({len(frames)} frames) written to {path}")


def read_fused_csv(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Fused dataset not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline().rstrip("\n")
    header = first if first.startswith("#") else ""
    df = pd.read_csv(path, skiprows=1 if header else 0)
    if "t" not in df.columns or "label" not in df.columns:
        raise ManifestError(f"{path}: fused CSV needs 't' and 'label' columns")
    feature_ids = tuple(c for c in df.columns if c not in ("t", "label"))
    labels = tuple(ClassLabel5(l).value for l in df["label"])
    return FusedDataset(t=df["t"].to_numpy(dtype=np.int64),
                        X=df[list(feature_ids)].to_numpy(dtype=float),
                        labels=labels, feature_ids=feature_ids, header=header)
