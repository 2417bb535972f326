"""
Engagement Detector - Core Types
Feature manifest, label taxonomy, feature vectors and frame validation shared
by every pipeline stage.
"""

from __future__ import annotations

import os
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from . import config

logger = logging.getLogger(__name__)


class ManifestError(ValueError):
    """Raised when a manifest file or feature id lookup is invalid."""


# --- Enumerations ---

class Channel(str, Enum):
    LASER = "laser"
    SKELETON = "skeleton"
    FACE = "face"
    AUDIO = "audio"


class Unit(str, Enum):
    METER = "meter"
    METER_PER_SECOND = "meter.s-1"
    RADIAN = "radian"
    PIXEL = "pixel"
    TAG = "tag"
    COUNT = "count"
    DIMENSIONLESS = "dimensionless"


class Edition(str, Enum):
    SELECTED_32 = "32"
    FULL_99 = "99"


class ClassLabel5(str, Enum):
    NO_ONE = "noOne"
    SOMEONE = "someone"
    WANT_INTERACTION = "wantInteraction"
    INTERACTION = "interaction"
    LEAVE_INTERACTION = "leaveInteraction"

    @property
    def class_index(self):
        return LABELS5.index(self)


class ClassLabel3(str, Enum):
    NO_ONE = "noOne"
    SOMEONE = "someone"
    WANT_INTERACTION = "wantInteraction"

    @property
    def class_index(self):
        return LABELS3.index(self)


LABELS5 = tuple(ClassLabel5)
LABELS3 = tuple(ClassLabel3)

_RELABEL = {
    ClassLabel5.NO_ONE: ClassLabel3.NO_ONE,
    ClassLabel5.SOMEONE: ClassLabel3.SOMEONE,
    ClassLabel5.WANT_INTERACTION: ClassLabel3.WANT_INTERACTION,
    ClassLabel5.INTERACTION: None,
    ClassLabel5.LEAVE_INTERACTION: ClassLabel3.SOMEONE,
}


def relabel_to_3(label5):
    """Maps a 5-class label onto the 3-class taxonomy.

    interaction frames are dropped (None) and leaveInteraction becomes someone.
    Labels already in the 3-class image map to themselves, so the map is
    idempotent on its image.
    """
    if isinstance(label5, ClassLabel3):
        return label5
    return _RELABEL[ClassLabel5(label5)]


# --- Feature manifest ---

@dataclass(frozen=True)
class FeatureSpec:
    id: str
    unit: Unit
    channel: Channel
    neutral: float = 0.0


SPATIAL_IDS = ("cible_x", "cible_y", "cible_dx", "cible_dy", "cible_dist")
ACOUSTIC_IDS = ("sad_event", "beam", "angle", "source_confidence")
SEGMENTS = ("stance", "hip", "torso", "shoulder")
TORQUE_IDS = ("hipTorque", "torsoTorque", "shoulderTorque")
SCHEGLOFF_IDS = tuple(
    f"{segment}Pose_{suffix}" for segment in SEGMENTS for suffix in ("x", "y", "z", "rot")
) + TORQUE_IDS
FACE_IDS = ("face_x", "face_y", "face_size")

# 15-joint skeleton, ankles rather than feet
JOINT_NAMES = (
    "head", "neck", "torso",
    "left_shoulder", "left_elbow", "left_hand",
    "right_shoulder", "right_elbow", "right_hand",
    "left_hip", "left_knee", "left_ankle",
    "right_hip", "right_knee", "right_ankle",
)
JOINT_FEATURE_IDS = tuple(
    f"{joint}_{suffix}" for joint in JOINT_NAMES for suffix in ("x", "y", "z", "conf")
)
COUNT_IDS = (
    "number_of_pedestrians", "number_of_skeletons", "pedestrian_id", "skeleton_id",
    "face_count", "sad_confidence", "source_beam_energy",
)


def _selected_specs():
    specs = []
    for fid in SPATIAL_IDS:
        unit = Unit.METER_PER_SECOND if fid in ("cible_dx", "cible_dy") else Unit.METER
        specs.append(FeatureSpec(fid, unit, Channel.LASER))
    specs.append(FeatureSpec("sad_event", Unit.TAG, Channel.AUDIO))
    specs.append(FeatureSpec("beam", Unit.RADIAN, Channel.AUDIO))
    specs.append(FeatureSpec("angle", Unit.RADIAN, Channel.AUDIO))
    specs.append(FeatureSpec("source_confidence", Unit.DIMENSIONLESS, Channel.AUDIO))
    for fid in SCHEGLOFF_IDS:
        unit = Unit.RADIAN if fid.endswith(("_rot", "Torque")) else Unit.METER
        specs.append(FeatureSpec(fid, unit, Channel.SKELETON))
    specs.append(FeatureSpec("skl_dist", Unit.METER, Channel.SKELETON))
    for fid in FACE_IDS:
        specs.append(FeatureSpec(fid, Unit.PIXEL, Channel.FACE))
    return specs


def _full_specs():
    specs = _selected_specs()
    for fid in JOINT_FEATURE_IDS:
        unit = Unit.DIMENSIONLESS if fid.endswith("_conf") else Unit.METER
        specs.append(FeatureSpec(fid, unit, Channel.SKELETON))
    specs.extend([
        FeatureSpec("number_of_pedestrians", Unit.COUNT, Channel.LASER),
        FeatureSpec("number_of_skeletons", Unit.COUNT, Channel.SKELETON),
        # ids are never negative, so -1 cannot be confused with a real track
        FeatureSpec("pedestrian_id", Unit.COUNT, Channel.LASER, -1.0),
        FeatureSpec("skeleton_id", Unit.COUNT, Channel.SKELETON, -1.0),
        FeatureSpec("face_count", Unit.COUNT, Channel.FACE),
        FeatureSpec("sad_confidence", Unit.DIMENSIONLESS, Channel.AUDIO),
        FeatureSpec("source_beam_energy", Unit.DIMENSIONLESS, Channel.AUDIO),
    ])
    return specs


class FeatureManifest:
    """Ordered, immutable catalog of features for one manifest edition."""

    def __init__(self, edition, features):
        self.edition = Edition(edition)
        self.features = tuple(features)
        self._index = {}
        for i, spec in enumerate(self.features):
            if spec.id in self._index:
                raise ManifestError(f"Duplicate feature id in manifest: {spec.id}")
            self._index[spec.id] = i

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __contains__(self, feature_id):
        return feature_id in self._index

    def __eq__(self, other):
        return (isinstance(other, FeatureManifest)
                and self.edition == other.edition
                and self.features == other.features)

    def __repr__(self):
        return f"FeatureManifest(edition={self.edition.value}, n={len(self)})"

    @property
    def ids(self):
        return tuple(spec.id for spec in self.features)

    @property
    def neutrals(self):
        return tuple(spec.neutral for spec in self.features)

    def index_of(self, feature_id):
        try:
            return self._index[feature_id]
        except KeyError:
            raise ManifestError(f"Unknown feature id: {feature_id}") from None

    def spec(self, feature_id):
        return self.features[self.index_of(feature_id)]

    def subset(self, feature_ids):
        """Manifest restricted to `feature_ids`, kept in this manifest's order."""
        wanted = set(feature_ids)
        for fid in wanted:
            self.index_of(fid)
        return FeatureManifest(self.edition, [s for s in self.features if s.id in wanted])

    # -- file format: index<TAB>id<TAB>unit<TAB>channel<TAB>neutral --

    def to_text(self):
        lines = [f"# edition\t{self.edition.value}"]
        for i, spec in enumerate(self.features):
            lines.append(f"{i}\t{spec.id}\t{spec.unit.value}\t{spec.channel.value}\t{spec.neutral!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        edition = None
        specs = []
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].strip().split("\t")
                if len(parts) == 2 and parts[0].strip() == "edition":
                    edition = parts[1].strip()
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ManifestError(f"line {line_no}: expected 5 tab-separated fields, got {len(parts)}")
            index, fid, unit, channel, neutral = parts
            if int(index) != len(specs):
                raise ManifestError(f"line {line_no}: index {index} out of order")
            try:
                specs.append(FeatureSpec(fid, Unit(unit), Channel(channel), float(neutral)))
            except ValueError as e:
                raise ManifestError(f"line {line_no}: {e}") from e
        if edition is None:
            edition = Edition.FULL_99.value if len(specs) == 99 else Edition.SELECTED_32.value
        return cls(edition, specs)

    def write(self, path):
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.to_text())
        logger.info(f"Manifest ({self.edition.value}) written to {path}")

    @classmethod
    def read(cls, path):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"Manifest file not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_text(f.read())


_MANIFESTS = {
    Edition.SELECTED_32: FeatureManifest(Edition.SELECTED_32, _selected_specs()),
    Edition.FULL_99: FeatureManifest(Edition.FULL_99, _full_specs()),
}


def manifest_for(edition):
    return _MANIFESTS[Edition(edition)]


# --- Vectors and frames ---

@dataclass(frozen=True)
class FeatureVector:
    values: tuple
    presence: frozenset = frozenset()

    def is_present(self, channel):
        return Channel(channel) in self.presence

    def as_array(self):
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class SyncedFrame:
    t: int
    features: FeatureVector
    label: Optional[ClassLabel5] = None

    def with_label(self, label):
        return replace(self, label=ClassLabel5(label))


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    feature_id: Optional[str] = None


def is_tick(t):
    return int(t) == t and int(t) % config.FRAME_PERIOD_US == 0


def tick_range(t0, t1):
    """Master ticks in [t0, t1)."""
    return range(int(t0), int(t1), config.FRAME_PERIOD_US)


def neutral_vector(edition):
    """Vector holding every manifest neutral with all channels absent."""
    manifest = manifest_for(edition)
    return FeatureVector(values=tuple(manifest.neutrals), presence=frozenset())


def validate_frame(frame, manifest):
    """Checks a frame against the type invariants.

    Returns:
        list[Violation]: empty when the frame is well formed.
    """
    violations = []
    values = frame.features.values
    if len(values) != len(manifest):
        violations.append(Violation(
            "length", f"expected {len(manifest)} values, got {len(values)}"))
    else:
        for spec, value in zip(manifest.features, values):
            if spec.channel not in frame.features.presence and value != spec.neutral:
                violations.append(Violation(
                    "neutral",
                    f"{spec.id}={value!r} while channel {spec.channel.value} is absent "
                    f"(neutral {spec.neutral!r})",
                    spec.id))
    if not is_tick(frame.t):
        violations.append(Violation(
            "tick", f"t={frame.t} is not a multiple of {config.FRAME_PERIOD_US} us"))
    if frame.label is None or not isinstance(frame.label, ClassLabel5):
        violations.append(Violation("label", f"frame at t={frame.t} carries no 5-class label"))
    return violations


def check_sequence(frames):
    """Violations of the consecutive-tick invariant over a frame sequence."""
    violations = []
    for prev, cur in zip(frames, frames[1:]):
        if cur.t - prev.t != config.FRAME_PERIOD_US:
            violations.append(Violation(
                "sequence", f"frames at {prev.t} and {cur.t} are not one tick apart"))
    return violations


# --- Fused dataset ---

@dataclass
class FusedDataset:
    """Column-oriented view of a labeled, fused frame sequence."""

    t: np.ndarray
    X: np.ndarray
    labels: tuple
    feature_ids: tuple
    header: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_frames(cls, frames: Sequence[SyncedFrame], manifest):
        t = np.asarray([f.t for f in frames], dtype=np.int64)
        if frames:
            X = np.vstack([f.features.as_array() for f in frames])
        else:
            X = np.zeros((0, len(manifest)))
        labels = tuple(ClassLabel5(f.label).value for f in frames)
        return cls(t=t, X=X, labels=labels, feature_ids=manifest.ids)

    def matrix(self, feature_ids: Optional[Iterable[str]] = None):
        if feature_ids is None:
            return self.X
        index = {fid: i for i, fid in enumerate(self.feature_ids)}
        try:
            cols = [index[fid] for fid in feature_ids]
        except KeyError as e:
            raise ManifestError(f"Feature not in dataset: {e.args[0]}") from None
        return self.X[:, cols]

    def label_indices(self, n_classes=5):
        """Integer class indices; 3-class mode relabels and marks dropped rows -1."""
        if n_classes == 5:
            return np.asarray([ClassLabel5(l).class_index for l in self.labels], dtype=int)
        out = []
        for l in self.labels:
            mapped = relabel_to_3(ClassLabel5(l))
            out.append(-1 if mapped is None else mapped.class_index)
        return np.asarray(out, dtype=int)

    def with_labels3(self):
        """Dataset relabeled to 3 classes with interaction rows removed."""
        keep = []
        labels = []
        for i, l in enumerate(self.labels):
            mapped = relabel_to_3(ClassLabel5(l))
            if mapped is not None:
                keep.append(i)
                labels.append(mapped.value)
        keep = np.asarray(keep, dtype=int)
        return FusedDataset(t=self.t[keep], X=self.X[keep], labels=tuple(labels),
                            feature_ids=self.feature_ids, header=self.header, meta=dict(self.meta))


def class_names(n_classes):
    if n_classes == 5:
        return tuple(l.value for l in LABELS5)
    if n_classes == 3:
        return tuple(l.value for l in LABELS3)
    raise ValueError(f"Unsupported class count: {n_classes}")
