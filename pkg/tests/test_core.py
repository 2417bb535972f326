import math

import numpy as np
import pytest

from engagedetector import config
from engagedetector.core import (Channel, ClassLabel3, ClassLabel5, Edition, FeatureManifest, FeatureVector,
                                 FusedDataset, ManifestError, SyncedFrame, check_sequence, class_names,
                                 is_tick, manifest_for, neutral_vector, relabel_to_3, tick_range,
                                 validate_frame)


def test_selected_manifest_has_32_features_in_declared_order():
    manifest = manifest_for("32")
    assert len(manifest) == 32
    assert manifest.ids[:5] == ("cible_x", "cible_y", "cible_dx", "cible_dy", "cible_dist")
    assert manifest.ids[5:9] == ("sad_event", "beam", "angle", "source_confidence")
    assert manifest.ids[-4:] == ("skl_dist", "face_x", "face_y", "face_size")
    assert manifest.spec("shoulderTorque").channel == Channel.SKELETON


def test_full_manifest_extends_selected_one():
    full = manifest_for(Edition.FULL_99)
    assert len(full) == 99
    assert full.ids[:32] == manifest_for("32").ids
    assert full.spec("pedestrian_id").neutral == -1.0
    assert full.spec("left_ankle_conf").channel == Channel.SKELETON


def test_manifest_text_round_trip_and_errors(tmp_path):
    manifest = manifest_for("99")
    path = tmp_path / "manifest.tsv"
    manifest.write(str(path))
    assert FeatureManifest.read(str(path)) == manifest
    with pytest.raises(ManifestError):
        FeatureManifest.from_text("0\tcible_x\tm\tlaser\n")
    with pytest.raises(ManifestError):
        FeatureManifest.from_text("1\tcible_x\tm\tlaser\t0.0\n")
    with pytest.raises(ManifestError):
        manifest.index_of("nope")


def test_subset_keeps_manifest_order():
    manifest = manifest_for("32")
    sub = manifest.subset(["face_x", "cible_x"])
    assert sub.ids == ("cible_x", "face_x")
    with pytest.raises(ManifestError):
        manifest.subset(["unknown"])


def test_relabel_to_3():
    assert relabel_to_3(ClassLabel5.INTERACTION) is None
    assert relabel_to_3(ClassLabel5.LEAVE_INTERACTION) == ClassLabel3.SOMEONE
    assert relabel_to_3("wantInteraction") == ClassLabel3.WANT_INTERACTION
    # idempotent on the 3-class image
    for label in ClassLabel3:
        assert relabel_to_3(relabel_to_3(label)) == label


def test_ticks():
    assert is_tick(0) and is_tick(160_000)
    assert not is_tick(40_000)
    assert list(tick_range(0, 240_000)) == [0, 80_000, 160_000]
    assert config.FRAME_PERIOD_US == 80_000


def test_validate_frame_checks_neutrals_ticks_and_labels():
    manifest = manifest_for("32")
    vector = neutral_vector("32")
    good = SyncedFrame(t=80_000, features=vector, label=ClassLabel5.NO_ONE)
    assert validate_frame(good, manifest) == []

    values = list(vector.values)
    values[manifest.index_of("face_x")] = 12.0
    bad = SyncedFrame(t=40_000, features=FeatureVector(tuple(values), frozenset()))
    kinds = sorted(v.kind for v in validate_frame(bad, manifest))
    assert kinds == ["label", "neutral", "tick"]

    present = SyncedFrame(t=0, features=FeatureVector(tuple(values), frozenset({Channel.FACE})),
                          label=ClassLabel5.SOMEONE)
    assert validate_frame(present, manifest) == []


def test_check_sequence_reports_gaps():
    vector = neutral_vector("32")
    frames = [SyncedFrame(t, vector, ClassLabel5.NO_ONE) for t in (0, 80_000, 240_000)]
    violations = check_sequence(frames)
    assert len(violations) == 1
    assert violations[0].kind == "sequence"


def test_fused_dataset_label_views():
    manifest = manifest_for("32")
    vector = neutral_vector("32")
    labels = [ClassLabel5.NO_ONE, ClassLabel5.INTERACTION, ClassLabel5.LEAVE_INTERACTION,
              ClassLabel5.WANT_INTERACTION]
    frames = [SyncedFrame(i * 80_000, vector, label) for i, label in enumerate(labels)]
    dataset = FusedDataset.from_frames(frames, manifest)
    assert dataset.X.shape == (4, 32)
    assert list(dataset.label_indices(5)) == [0, 3, 4, 2]
    assert list(dataset.label_indices(3)) == [0, -1, 1, 2]

    three = dataset.with_labels3()
    assert len(three) == 3
    assert three.labels == ("noOne", "someone", "wantInteraction")
    assert list(three.t) == [0, 160_000, 240_000]
    assert three.matrix(["cible_x", "face_x"]).shape == (3, 2)
    with pytest.raises(ManifestError):
        three.matrix(["nope"])


def test_class_names():
    assert class_names(3) == ("noOne", "someone", "wantInteraction")
    assert class_names(5)[-1] == "leaveInteraction"
    with pytest.raises(ValueError):
        class_names(4)


def test_neutral_vector_is_all_absent():
    vector = neutral_vector("99")
    assert vector.presence == frozenset()
    assert not vector.is_present("laser")
    assert np.count_nonzero(vector.as_array() == -1.0) == 2
    assert not math.isnan(vector.as_array().sum())
