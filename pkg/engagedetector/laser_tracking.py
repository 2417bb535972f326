"""
Engagement Detector - Laser Pedestrian Tracking
Adaptive background subtraction on 270 degree range scans, foot detection,
per-foot Kalman filtering and leg-space based pairing of feet into pedestrians.
"""

from __future__ import annotations

import os
import json
import math
import logging
from collections import deque
from dataclasses import dataclass, field, replace, asdict
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import config
from .utils import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)


class InsufficientFeetError(ValueError):
    """Leg space needs two live feet and a non-zero main direction."""


# --- Configuration ---

@dataclass(frozen=True)
class LidarConfig:
    beam_count: int = config.LIDAR_BEAMS
    angle_min: float = config.LIDAR_ANGLE_MIN
    angle_max: float = config.LIDAR_ANGLE_MAX
    max_range: float = config.LIDAR_MAX_RANGE

    def angles(self):
        return np.linspace(self.angle_min, self.angle_max, self.beam_count)

    def write(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, sort_keys=True, indent=2)

    @classmethod
    def read(cls, path):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"Lidar sidecar config not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        return cls(beam_count=int(data["beam_count"]), angle_min=float(data["angle_min"]),
                   angle_max=float(data["angle_max"]),
                   max_range=float(data.get("max_range", config.LIDAR_MAX_RANGE)))


@dataclass(frozen=True)
class TrackerConfig:
    alpha: float = config.BG_ALPHA
    tau_fg: float = config.BG_TAU_FG
    warmup: int = config.BG_WARMUP_SCANS
    gap_beams: int = config.CLUSTER_GAP_BEAMS
    split_distance: float = config.CLUSTER_SPLIT_DISTANCE
    min_cluster_beams: int = config.CLUSTER_MIN_BEAMS
    sigma_a: float = config.KALMAN_SIGMA_A
    sigma_m: float = config.KALMAN_SIGMA_M
    sigma_v0: float = config.KALMAN_SIGMA_V0
    gate: float = config.KALMAN_GATE
    foot_max_misses: int = config.FOOT_MAX_MISSES
    direction_history: int = config.FOOT_DIRECTION_HISTORY
    stationary_eps: float = config.FOOT_STATIONARY_EPS
    pair_gate: float = config.PAIR_GATE
    window: int = config.PAIR_WINDOW
    leg_space_min: float = config.LEG_SPACE_MIN
    leg_space_max: float = config.LEG_SPACE_MAX
    leg_space_std_max: float = config.LEG_SPACE_STD_MAX


# --- Records ---

@dataclass(frozen=True, eq=False)
class LaserScan:
    t: int
    ranges: np.ndarray
    angle_min: float = config.LIDAR_ANGLE_MIN
    angle_max: float = config.LIDAR_ANGLE_MAX

    @property
    def beam_count(self):
        return len(self.ranges)

    def angles(self):
        return np.linspace(self.angle_min, self.angle_max, len(self.ranges))

    def validate(self, beam_count=None):
        ranges = np.asarray(self.ranges, dtype=float)
        if beam_count is not None and len(ranges) != beam_count:
            raise ValueError(f"scan at t={self.t} has {len(ranges)} beams, expected {beam_count}")
        if not np.all(np.isfinite(ranges)) or np.any(ranges < 0):
            raise ValueError(f"scan at t={self.t} has non-finite or negative ranges")


@dataclass(frozen=True)
class FootCandidate:
    x: float
    y: float
    beam_span: tuple


@dataclass(frozen=True)
class PedestrianFeatures:
    t: int
    id: int
    cible_x: float
    cible_y: float
    cible_dx: float
    cible_dy: float
    cible_dist: float

    @classmethod
    def build(cls, t, pid, x, y, dx, dy):
        return cls(t=int(t), id=int(pid), cible_x=float(x), cible_y=float(y),
                   cible_dx=float(dx), cible_dy=float(dy),
                   cible_dist=math.sqrt(x * x + y * y))

    def features(self):
        return {"cible_x": self.cible_x, "cible_y": self.cible_y, "cible_dx": self.cible_dx,
                "cible_dy": self.cible_dy, "cible_dist": self.cible_dist}


# --- Background subtraction ---

@dataclass(frozen=True, eq=False)
class BackgroundModel:
    beam_count: int
    alpha: float = config.BG_ALPHA
    tau_fg: float = config.BG_TAU_FG
    warmup: int = config.BG_WARMUP_SCANS
    bg: Optional[np.ndarray] = None
    n_seen: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tau_fg <= 0:
            raise ValueError(f"tau_fg must be positive, got {self.tau_fg}")

    @property
    def ready(self):
        return self.bg is not None and self.n_seen >= self.warmup

    def foreground_mask(self, ranges):
        ranges = np.asarray(ranges, dtype=float)
        if self.bg is None:
            return np.zeros(len(ranges), dtype=bool)
        return ranges < self.bg - self.tau_fg


def update_background(model, scan):
    """Exponential per-beam background update.

    During warmup every beam adapts; afterwards foreground beams
    (range < bg - tau_fg) keep their background value.
    """
    ranges = np.asarray(scan.ranges, dtype=float)
    if len(ranges) != model.beam_count:
        raise ValueError(f"scan has {len(ranges)} beams, background model expects {model.beam_count}")
    a = model.alpha
    if model.bg is None:
        bg = ranges.copy()
    elif model.n_seen < model.warmup:
        bg = (1.0 - a) * model.bg + a * ranges
    else:
        fg = model.foreground_mask(ranges)
        bg = np.where(fg, model.bg, (1.0 - a) * model.bg + a * ranges)
    return replace(model, bg=bg, n_seen=model.n_seen + 1)


def detect_moving_points(model, scan, cfg=None):
    """Clusters foreground beams into foot candidates in the robot frame."""
    cfg = cfg or TrackerConfig()
    if not model.ready:
        return []
    ranges = np.asarray(scan.ranges, dtype=float)
    fg_idx = np.flatnonzero(model.foreground_mask(ranges))
    if fg_idx.size == 0:
        return []
    angles = scan.angles()
    xs = ranges * np.cos(angles)
    ys = ranges * np.sin(angles)

    clusters = []
    current = [int(fg_idx[0])]
    for prev, cur in zip(fg_idx[:-1], fg_idx[1:]):
        gap = cur - prev - 1
        jump = math.hypot(xs[cur] - xs[prev], ys[cur] - ys[prev])
        if gap > cfg.gap_beams or jump > cfg.split_distance:
            clusters.append(current)
            current = []
        current.append(int(cur))
    clusters.append(current)

    candidates = []
    for beams in clusters:
        if len(beams) < cfg.min_cluster_beams:
            continue
        r = float(np.mean(ranges[beams]))
        a = float(np.mean(angles[beams]))
        candidates.append(FootCandidate(r * math.cos(a), r * math.sin(a), (beams[0], beams[-1])))
    return candidates


# --- Foot Kalman filter ---

_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def _transition(dt):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def _process_noise(dt, sigma_a):
    # white acceleration model
    q = sigma_a ** 2
    Q = np.zeros((4, 4))
    Q[0, 0] = Q[1, 1] = q * dt ** 4 / 4.0
    Q[0, 2] = Q[2, 0] = Q[1, 3] = Q[3, 1] = q * dt ** 3 / 2.0
    Q[2, 2] = Q[3, 3] = q * dt ** 2
    return Q


def _repair_covariance(P, track_id):
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w.min() < 0.0:
        logger.warning(f"Foot track {track_id}: covariance lost PSD (min eig {w.min():.3e}), flooring")
        w = np.maximum(w, config.KALMAN_EIG_FLOOR)
        P = (V * w) @ V.T
        P = 0.5 * (P + P.T)
    return P


@dataclass(eq=False)
class FootTrack:
    id: int
    state: np.ndarray
    covariance: np.ndarray
    history: tuple = ()
    age: int = 0
    misses: int = 0
    stationary_eps: float = config.FOOT_STATIONARY_EPS

    @classmethod
    def start(cls, track_id, x, y, cfg=None):
        cfg = cfg or TrackerConfig()
        P0 = np.diag([cfg.sigma_m ** 2, cfg.sigma_m ** 2, cfg.sigma_v0 ** 2, cfg.sigma_v0 ** 2])
        return cls(id=track_id, state=np.array([x, y, 0.0, 0.0]), covariance=P0,
                   history=((float(x), float(y)),), stationary_eps=cfg.stationary_eps)

    @property
    def position(self):
        return self.state[:2]

    @property
    def velocity(self):
        return self.state[2:]

    @property
    def direction(self):
        """Unit displacement over the recent confirmed positions, zero when stationary."""
        if len(self.history) < 2:
            return np.zeros(2)
        d = np.subtract(self.history[-1], self.history[0])
        n = float(np.hypot(d[0], d[1]))
        if n < self.stationary_eps:
            return np.zeros(2)
        return d / n


def kalman_step(track, measurement=None, dt=config.FRAME_PERIOD_S, cfg=None):
    """One constant-velocity predict (+ update when a gated measurement exists)."""
    cfg = cfg or TrackerConfig()
    F = _transition(dt)
    x = F @ track.state
    P = F @ track.covariance @ F.T + _process_noise(dt, cfg.sigma_a)
    if measurement is None:
        return replace(track, state=x, covariance=_repair_covariance(P, track.id),
                       age=track.age + 1, misses=track.misses + 1)

    z = np.asarray(measurement, dtype=float)
    R = np.eye(2) * cfg.sigma_m ** 2
    S = _H @ P @ _H.T + R
    K = np.linalg.solve(S, _H @ P).T
    x = x + K @ (z - _H @ x)
    I_KH = np.eye(4) - K @ _H
    # Joseph form keeps P symmetric PSD
    P = I_KH @ P @ I_KH.T + K @ R @ K.T
    history = (track.history + ((float(x[0]), float(x[1])),))[-cfg.direction_history:]
    return replace(track, state=x, covariance=_repair_covariance(P, track.id),
                   history=history, age=track.age + 1, misses=0)


def associate(predicted, candidates, gate):
    """Greedy nearest-neighbour assignment within `gate`.

    Returns:
        dict: track index -> candidate index
    """
    if len(predicted) == 0 or len(candidates) == 0:
        return {}
    D = cdist(np.asarray(predicted, dtype=float), np.asarray(candidates, dtype=float))
    order = np.argsort(D, axis=None, kind="stable")
    assignment = {}
    used = set()
    for flat in order:
        i, j = np.unravel_index(flat, D.shape)
        if D[i, j] >= gate:
            break
        if i in assignment or j in used:
            continue
        assignment[int(i)] = int(j)
        used.add(int(j))
    return assignment


# --- Leg space and pairing ---

def leg_space(feet, direction):
    """Sum of the perpendicular distances of both feet to the main direction line.

    The line runs through the feet midpoint along `direction`.
    """
    if len(feet) < 2:
        raise InsufficientFeetError("leg space needs two feet")
    u = np.asarray(direction, dtype=float)
    n = float(np.hypot(u[0], u[1]))
    if n < 1e-12:
        raise InsufficientFeetError("main direction is zero")
    u = u / n
    a = np.asarray(feet[0], dtype=float)
    b = np.asarray(feet[1], dtype=float)
    mid = 0.5 * (a + b)
    da = a - mid
    db = b - mid
    return abs(u[0] * da[1] - u[1] * da[0]) + abs(u[0] * db[1] - u[1] * db[0])


def main_direction(directions):
    total = np.sum(np.asarray(directions, dtype=float), axis=0)
    n = float(np.hypot(total[0], total[1]))
    if n < 1e-12:
        return np.zeros(2)
    return total / n


@dataclass(eq=False)
class PedestrianTrack:
    id: int
    foot_ids: list
    leg_space_window: deque
    main_direction: np.ndarray = field(default_factory=lambda: np.zeros(2))


class FootPairer:
    """Two-stage pairing: a distance gate, then leg-space window statistics."""

    def __init__(self, cfg=None):
        self.cfg = cfg or TrackerConfig()
        self.pedestrians = {}
        self._candidates = {}
        self._next_id = 1

    def _paired_ids(self):
        return {fid for ped in self.pedestrians.values() for fid in ped.foot_ids}

    def pair_feet(self, foot_tracks: Sequence[FootTrack]):
        cfg = self.cfg
        live = {track.id: track for track in foot_tracks}

        # Forget dead feet; a pedestrian without feet is lost
        for pid in list(self.pedestrians):
            ped = self.pedestrians[pid]
            ped.foot_ids = [fid for fid in ped.foot_ids if fid in live]
            if not ped.foot_ids:
                logger.debug(f"Pedestrian {pid} lost both feet, deleted")
                del self.pedestrians[pid]

        # Single-foot pedestrians pick the returning foot back up
        paired = self._paired_ids()
        for ped in self.pedestrians.values():
            if len(ped.foot_ids) != 1:
                continue
            anchor = live[ped.foot_ids[0]].position
            best = None
            for fid in sorted(live):
                if fid in paired:
                    continue
                d = float(np.linalg.norm(live[fid].position - anchor))
                if d < cfg.pair_gate and (best is None or d < best[0]):
                    best = (d, fid)
            if best is not None:
                ped.foot_ids.append(best[1])
                paired.add(best[1])
                logger.debug(f"Pedestrian {ped.id} re-paired with foot {best[1]}")

        for ped in self.pedestrians.values():
            feet = [live[fid] for fid in ped.foot_ids]
            direction = main_direction([f.direction for f in feet])
            if np.any(direction):
                ped.main_direction = direction
            if len(feet) == 2 and np.any(ped.main_direction):
                ped.leg_space_window.append(
                    leg_space([feet[0].position, feet[1].position], ped.main_direction))

        # Stage 1: gate unpaired feet
        unpaired = sorted(fid for fid in live if fid not in paired)
        seen = set()
        for i, a_id in enumerate(unpaired):
            for b_id in unpaired[i + 1:]:
                a, b = live[a_id], live[b_id]
                key = (a_id, b_id)
                if float(np.linalg.norm(a.position - b.position)) >= cfg.pair_gate:
                    continue
                seen.add(key)
                window = self._candidates.setdefault(key, deque(maxlen=cfg.window))
                direction = main_direction([a.direction, b.direction])
                if np.any(direction):
                    window.append(leg_space([a.position, b.position], direction))
        for key in list(self._candidates):
            if key not in seen:
                del self._candidates[key]

        # Stage 2: promote stable candidates, each foot at most once
        eligible = []
        for key, window in self._candidates.items():
            if len(window) < cfg.window:
                continue
            samples = np.asarray(window)
            mean = float(samples.mean())
            std = float(samples.std())
            if cfg.leg_space_min <= mean <= cfg.leg_space_max and std < cfg.leg_space_std_max:
                eligible.append((std, key))
        eligible.sort()
        used = set()
        for _, key in eligible:
            if key[0] in used or key[1] in used:
                continue
            used.update(key)
            ped = PedestrianTrack(
                id=self._next_id, foot_ids=list(key),
                leg_space_window=deque(self._candidates[key], maxlen=cfg.window),
                main_direction=main_direction([live[key[0]].direction, live[key[1]].direction]))
            self.pedestrians[ped.id] = ped
            self._next_id += 1
            logger.debug(f"Pedestrian {ped.id} created from feet {key}")
        for key in list(self._candidates):
            if key[0] in used or key[1] in used:
                del self._candidates[key]

        return list(self.pedestrians.values())


# --- Tracker ---

@dataclass(frozen=True)
class TrackerOutput:
    t: int
    features: tuple
    n_pedestrians: int

    def nearest(self):
        """Pedestrian closest to the robot (ties broken by lower id), or None."""
        if not self.features:
            return None
        return min(self.features, key=lambda f: (f.cible_dist, f.id))


class PedestrianTracker:
    """Single-writer tracking state machine over one scan stream."""

    def __init__(self, lidar=None, cfg=None):
        self.lidar = lidar or LidarConfig()
        self.cfg = cfg or TrackerConfig()
        self.background = BackgroundModel(beam_count=self.lidar.beam_count, alpha=self.cfg.alpha,
                                          tau_fg=self.cfg.tau_fg, warmup=self.cfg.warmup)
        self.feet = []
        self.pairer = FootPairer(self.cfg)
        self._next_foot_id = 1
        self._last_t = None

    @property
    def pedestrians(self):
        return list(self.pairer.pedestrians.values())

    def _update_feet(self, candidates, dt):
        F = _transition(dt)
        predicted = [(F @ track.state)[:2] for track in self.feet]
        measured = [(c.x, c.y) for c in candidates]
        assignment = associate(predicted, measured, self.cfg.gate)

        feet = []
        for i, track in enumerate(self.feet):
            j = assignment.get(i)
            updated = kalman_step(track, measured[j] if j is not None else None, dt, self.cfg)
            if updated.misses >= self.cfg.foot_max_misses:
                logger.debug(f"Foot track {track.id} deleted after {updated.misses} misses")
                continue
            feet.append(updated)
        assigned = set(assignment.values())
        for j, (x, y) in enumerate(measured):
            if j in assigned:
                continue
            feet.append(FootTrack.start(self._next_foot_id, x, y, self.cfg))
            self._next_foot_id += 1
        self.feet = feet

    def track_scan(self, scan):
        scan.validate(self.lidar.beam_count)
        if self._last_t is None:
            dt = config.FRAME_PERIOD_S
        else:
            dt = (scan.t - self._last_t) / 1e6
            if dt <= 0:
                raise ValueError(f"scan timestamps must increase ({self._last_t} -> {scan.t})")
        self._last_t = scan.t

        candidates = detect_moving_points(self.background, scan, self.cfg)
        self.background = update_background(self.background, scan)
        self._update_feet(candidates, dt)
        pedestrians = self.pairer.pair_feet(self.feet)

        by_id = {track.id: track for track in self.feet}
        features = []
        for ped in pedestrians:
            feet = [by_id[fid] for fid in ped.foot_ids]
            pos = np.mean([f.position for f in feet], axis=0)
            vel = np.mean([f.velocity for f in feet], axis=0)
            features.append(PedestrianFeatures.build(scan.t, ped.id, pos[0], pos[1], vel[0], vel[1]))
        return TrackerOutput(t=scan.t, features=tuple(features), n_pedestrians=len(features))


def track_scan(tracker, scan):
    """Functional wrapper: returns (tracker, pedestrian_features, n_pedestrians)."""
    output = tracker.track_scan(scan)
    return tracker, list(output.features), output.n_pedestrians


def track_stream(scans, lidar=None, cfg=None):
    tracker = PedestrianTracker(lidar, cfg)
    outputs = [tracker.track_scan(scan) for scan in scans]
    logger.info(f"Tracked {len(outputs)} scans, {tracker.pairer._next_id - 1} pedestrians created")
    return outputs


# --- Stream I/O ---

def scan_to_record(scan):
    return {"t": int(scan.t), "ranges": [round(float(r), 4) for r in scan.ranges]}


def read_scans(path, lidar):
    def parse(rec):
        scan = LaserScan(t=int(rec["t"]), ranges=np.asarray(rec["ranges"], dtype=float),
                         angle_min=lidar.angle_min, angle_max=lidar.angle_max)
        scan.validate(lidar.beam_count)
        return scan
    return read_jsonl(path, parse)


def write_pedestrian_features(path, outputs):
    records = []
    for output in outputs:
        for f in output.features:
            records.append({"t": f.t, "id": f.id, "cible_x": f.cible_x, "cible_y": f.cible_y,
                            "cible_dx": f.cible_dx, "cible_dy": f.cible_dy, "cible_dist": f.cible_dist})
    return write_jsonl(path, records)


def read_pedestrian_features(path):
    return read_jsonl(path, lambda r: PedestrianFeatures(
        t=int(r["t"]), id=int(r["id"]), cible_x=float(r["cible_x"]), cible_y=float(r["cible_y"]),
        cible_dx=float(r["cible_dx"]), cible_dy=float(r["cible_dy"]), cible_dist=float(r["cible_dist"])))
