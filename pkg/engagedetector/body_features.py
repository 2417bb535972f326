"""
Engagement Detector - Body Features
Schegloff body-pose metrics, skeleton distance and image-centered face
features computed from skeleton joint frames and face detection records.

Sensor frame: x lateral (positive to the sensor's left), y up, z depth.
"""

from __future__ import annotations

import math
import logging
from dataclasses import dataclass
from typing import Mapping, Optional

from . import config
from .core import JOINT_NAMES, SEGMENTS, TORQUE_IDS
from .utils import wrap_angle, circular_mean, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

# Joint pairs (left, right) per rotating segment
SEGMENT_JOINTS = {
    "stance": ("left_ankle", "right_ankle"),
    "hip": ("left_hip", "right_hip"),
    "shoulder": ("left_shoulder", "right_shoulder"),
}
DISTANCE_JOINTS = ("torso", "left_hip", "right_hip", "left_shoulder", "right_shoulder")


@dataclass(frozen=True)
class Joint:
    x: float
    y: float
    z: float
    confidence: float

    def confident(self, c_min=config.JOINT_CONFIDENCE_MIN):
        return self.confidence >= c_min

    def as_list(self):
        return [self.x, self.y, self.z, self.confidence]


@dataclass(frozen=True)
class SkeletonFrame:
    t: int
    skeleton_id: int
    joints: Mapping[str, Joint]

    def __post_init__(self):
        missing = set(JOINT_NAMES) - set(self.joints)
        extra = set(self.joints) - set(JOINT_NAMES)
        if missing or extra:
            raise ValueError(f"skeleton {self.skeleton_id} at t={self.t}: expected the 15 named joints "
                             f"(missing {sorted(missing)}, unexpected {sorted(extra)})")
        for name, joint in self.joints.items():
            if not 0.0 <= joint.confidence <= 1.0:
                raise ValueError(f"joint {name} confidence {joint.confidence} outside [0, 1]")

    def joint(self, name):
        return self.joints[name]


@dataclass(frozen=True)
class SegmentPose:
    x: float
    y: float
    z: float
    rot: float


@dataclass(frozen=True)
class SchegloffMetrics:
    """Per-segment poses and torques; None marks an absent metric."""

    stance: Optional[SegmentPose] = None
    hip: Optional[SegmentPose] = None
    torso: Optional[SegmentPose] = None
    shoulder: Optional[SegmentPose] = None
    hipTorque: Optional[float] = None
    torsoTorque: Optional[float] = None
    shoulderTorque: Optional[float] = None

    def features(self):
        """Present metrics keyed by feature id."""
        out = {}
        for segment in SEGMENTS:
            pose = getattr(self, segment)
            if pose is None:
                continue
            out[f"{segment}Pose_x"] = pose.x
            out[f"{segment}Pose_y"] = pose.y
            out[f"{segment}Pose_z"] = pose.z
            out[f"{segment}Pose_rot"] = pose.rot
        for torque in TORQUE_IDS:
            value = getattr(self, torque)
            if value is not None:
                out[torque] = value
        return out


@dataclass(frozen=True)
class FaceFeatures:
    face_x: float
    face_y: float
    face_size: float

    def features(self):
        return {"face_x": self.face_x, "face_y": self.face_y, "face_size": self.face_size}


@dataclass(frozen=True)
class FaceDetection:
    t: int
    box: tuple
    image: tuple = (config.IMAGE_WIDTH, config.IMAGE_HEIGHT)


# --- Schegloff metrics ---

def segment_rotation(left, right, c_min=config.JOINT_CONFIDENCE_MIN):
    """Facing angle of a left/right joint pair, 0 when facing the sensor.

    Returns None when either joint is below the confidence floor.
    """
    if not (left.confident(c_min) and right.confident(c_min)):
        return None
    vx = right.x - left.x
    vz = right.z - left.z
    return wrap_angle(math.atan2(vz, vx))


def _pair_pose(skeleton, segment, c_min):
    left_name, right_name = SEGMENT_JOINTS[segment]
    left, right = skeleton.joint(left_name), skeleton.joint(right_name)
    rot = segment_rotation(left, right, c_min)
    if rot is None:
        return None
    return SegmentPose(x=0.5 * (left.x + right.x), y=0.5 * (left.y + right.y),
                       z=0.5 * (left.z + right.z), rot=rot)


def _torque(outer, inner):
    if outer is None or inner is None:
        return None
    return wrap_angle(outer.rot - inner.rot)


def schegloff_metrics(skeleton, c_min=config.JOINT_CONFIDENCE_MIN):
    stance = _pair_pose(skeleton, "stance", c_min)
    hip = _pair_pose(skeleton, "hip", c_min)
    shoulder = _pair_pose(skeleton, "shoulder", c_min)

    torso = None
    torso_joint = skeleton.joint("torso")
    if torso_joint.confident(c_min) and (hip is not None or shoulder is not None):
        if hip is not None and shoulder is not None:
            rot = circular_mean(hip.rot, shoulder.rot)
        else:
            rot = (hip or shoulder).rot
        torso = SegmentPose(x=torso_joint.x, y=torso_joint.y, z=torso_joint.z, rot=rot)

    return SchegloffMetrics(
        stance=stance, hip=hip, torso=torso, shoulder=shoulder,
        hipTorque=_torque(hip, stance),
        torsoTorque=_torque(torso, hip),
        shoulderTorque=_torque(shoulder, torso),
    )


def skeleton_distance(skeleton, c_min=config.JOINT_CONFIDENCE_MIN):
    """Mean depth of the confident torso/hip/shoulder joints, None when none qualify."""
    depths = [skeleton.joint(name).z for name in DISTANCE_JOINTS
              if skeleton.joint(name).confident(c_min)]
    if not depths:
        return None
    return sum(depths) / len(depths)


def joint_features(skeleton):
    out = {}
    for name in JOINT_NAMES:
        joint = skeleton.joint(name)
        out[f"{name}_x"] = joint.x
        out[f"{name}_y"] = joint.y
        out[f"{name}_z"] = joint.z
        out[f"{name}_conf"] = joint.confidence
    return out


def skeleton_features(skeleton, c_min=config.JOINT_CONFIDENCE_MIN):
    """Every skeleton-channel feature available from one frame."""
    out = schegloff_metrics(skeleton, c_min).features()
    distance = skeleton_distance(skeleton, c_min)
    if distance is not None:
        out["skl_dist"] = distance
    out.update(joint_features(skeleton))
    out["skeleton_id"] = float(skeleton.skeleton_id)
    return out


def select_skeleton(skeletons, c_min=config.JOINT_CONFIDENCE_MIN):
    """Nearest skeleton by skl_dist; skeletons without a distance rank last."""
    if not skeletons:
        return None

    def key(s):
        d = skeleton_distance(s, c_min)
        return (d is None, d if d is not None else 0.0, s.skeleton_id)

    return min(skeletons, key=key)


# --- Faces ---

def face_features(box, image_width=config.IMAGE_WIDTH, image_height=config.IMAGE_HEIGHT):
    """Image-centered face position; y grows downward."""
    px, py, size = (float(v) for v in box)
    if size <= 0 or px < 0 or py < 0 or px + size > image_width or py + size > image_height:
        raise ValueError(f"face box {tuple(box)} outside a {image_width}x{image_height} image")
    return FaceFeatures(face_x=px + size / 2.0 - image_width / 2.0,
                        face_y=py + size / 2.0 - image_height / 2.0,
                        face_size=size)


def face_box(features, image_width=config.IMAGE_WIDTH, image_height=config.IMAGE_HEIGHT):
    """Inverse of face_features."""
    size = features.face_size
    return (features.face_x + image_width / 2.0 - size / 2.0,
            features.face_y + image_height / 2.0 - size / 2.0,
            size)


def select_face(detections):
    """Largest valid detection (first on ties), or None.

    Boxes falling outside the image are logged and skipped.
    """
    best = None
    for detection in detections:
        width, height = detection.image
        try:
            features = face_features(detection.box, width, height)
        except ValueError as e:
            logger.warning(f"Rejected face detection at t={detection.t}: {e}")
            continue
        if best is None or features.face_size > best.face_size:
            best = features
    return best


# --- Stream I/O ---

def skeleton_from_record(record):
    joints = {}
    for name, values in record["joints"].items():
        if len(values) != 4:
            raise ValueError(f"joint {name} needs x, y, z and confidence, got {len(values)} values")
        joints[name] = Joint(*(float(v) for v in values))
    return SkeletonFrame(t=int(record["t"]), skeleton_id=int(record["id"]), joints=joints)


def skeleton_to_record(skeleton):
    return {"t": int(skeleton.t), "id": int(skeleton.skeleton_id),
            "joints": {name: [round(v, 5) for v in skeleton.joint(name).as_list()]
                       for name in JOINT_NAMES}}


def read_skeletons(path):
    return read_jsonl(path, skeleton_from_record)


def write_skeletons(path, skeletons):
    return write_jsonl(path, (skeleton_to_record(s) for s in skeletons))


def face_from_record(record):
    image = tuple(int(v) for v in record.get("image", (config.IMAGE_WIDTH, config.IMAGE_HEIGHT)))
    return FaceDetection(t=int(record["t"]), box=tuple(float(v) for v in record["box"]), image=image)


def read_faces(path):
    return read_jsonl(path, face_from_record)


def write_faces(path, detections):
    return write_jsonl(path, ({"t": int(d.t), "box": [round(float(v), 3) for v in d.box],
                               "image": [int(v) for v in d.image]} for d in detections))
