import os
import json

import pytest

import engagedetector.main
from engagedetector import config
from engagedetector.core import check_sequence, manifest_for
from engagedetector.fusion import read_fused_csv
from engagedetector.main import (RunConfig, StageError, build_parser, classifier_config, cross_validated,
                                 fuse_recording_dir, labeled, main, run_config_from_args, stage, sweep_table)
from engagedetector.selection import rank_dataset


@pytest.fixture(scope="module")
def recorded_run(tmp_path_factory):
    """One simulated approach recording carried through every stage."""
    root = tmp_path_factory.mktemp("cli")
    run_dir = str(root / "run")
    streams = os.path.join(run_dir, "streams", "approach_interact_leave")
    common = ["--run-dir", run_dir, "--seed", "3", "--k", "3"]
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv(config.CONFIG_DIR_ENV, str(root / "config"))
        config.reset_settings_cache()
        codes = {
            "simulate": main(["simulate", "--scenario", "approach_interact_leave"] + common),
            "track": main(["track", streams] + common),
            "extract": main(["extract", streams] + common),
            "fuse": main(["fuse", streams] + common),
            "mrmr": main(["mrmr", "--top", "6"] + common),
            "train": main(["train"] + common),
        }
    config.reset_settings_cache()
    return run_dir, streams, common, codes


def test_parser_defaults():
    args = build_parser().parse_args(["fuse", "a", "b", "--manifest", "99", "--labels", "3"])
    assert args.streams == ["a", "b"]
    run = run_config_from_args(args)
    assert run.manifest == "99" and run.labels == 3
    assert run.seed == config.DEFAULT_SEED and run.k == config.DEFAULT_K
    assert run.classifier == "svm"


def test_parser_rejects_unknown_choices():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["mrmr", "--mrmr-scheme", "max"])
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_settings_fill_missing_options():
    config.set_setting('k', 7)
    args = build_parser().parse_args(["report"])
    assert run_config_from_args(args).k == 7
    args = build_parser().parse_args(["report", "--k", "4"])
    assert run_config_from_args(args).k == 4


def test_run_config_hash_ignores_the_run_dir():
    a = RunConfig(run_dir="one", seed=5)
    assert a.config_hash() == RunConfig(run_dir="two", seed=5).config_hash()
    assert a.config_hash() != RunConfig(run_dir="one", seed=6).config_hash()
    assert a.header() == f"# engagedetector {config.APP_VERSION} seed=5 config={a.config_hash()}"


def test_stage_wraps_ordinary_errors():
    with pytest.raises(StageError) as info:
        with stage("fuse"):
            raise ValueError("bad frame")
    assert info.value.stage == "fuse"
    with pytest.raises(StageError):
        with stage("extract"):
            raise TypeError("missing argument")
    with pytest.raises(RuntimeError):
        with stage("fuse"):
            raise RuntimeError("not a stage failure")


def test_missing_input_exits_with_stage_message(tmp_path, capsys):
    code = main(["fuse", str(tmp_path / "nowhere"), "--run-dir", str(tmp_path / "run")])
    assert code == 1
    last = capsys.readouterr().err.strip().splitlines()[-1]
    assert last.startswith("error [fuse]:")
    assert "run 'track' first" in last


def test_mrmr_k_without_ranking_fails(recorded_run, tmp_path, capsys):
    run_dir, _, _, _ = recorded_run
    data = os.path.join(run_dir, "fused.csv")
    code = main(["train", "--data", data, "--mrmr-k", "3", "--run-dir", str(tmp_path / "empty")])
    assert code == 1
    assert "error [train]" in capsys.readouterr().err


def test_stages_write_their_outputs(recorded_run):
    run_dir, streams, _, codes = recorded_run
    assert set(codes.values()) == {0}
    for name in ("laser.jsonl", "timeline.jsonl", "script.ini", "pedestrians.jsonl", "laser_features.jsonl",
                 "skeleton_features.jsonl", "face_features.jsonl", "acoustic_features.jsonl"):
        assert os.path.isfile(os.path.join(streams, name)), name
    for name in ("fused.csv", "ranking.tsv", "model_svm.json"):
        assert os.path.isfile(os.path.join(run_dir, name)), name
    with open(os.path.join(run_dir, "fused.csv"), encoding="utf-8") as f:
        assert f.readline().startswith("# engagedetector ")
        columns = f.readline().rstrip("\n").split(",")
    assert columns[0] == "t" and columns[-1] == "label" and len(columns) == 34
    with open(os.path.join(run_dir, "ranking.tsv"), encoding="utf-8") as f:
        assert len([line for line in f if line[0].isdigit()]) == 6


def test_eval_sweep_report_and_clusters(recorded_run, capsys):
    run_dir, _, common, _ = recorded_run
    capsys.readouterr()
    assert main(["eval", "--model", os.path.join(run_dir, "model_svm.json"),
                 "--out", os.path.join(run_dir, "eval.csv")] + common) == 0
    assert "wantInteraction" in capsys.readouterr().out

    assert main(["sweep"] + common) == 0
    with open(os.path.join(run_dir, "sweep.csv"), encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[1].startswith("k,macro_precision,accuracy")
    assert [line.split(",")[0] for line in lines[2:]] == ["6", "5", "4", "3", "2"]

    assert main(["report"] + common) == 0
    out = capsys.readouterr().out
    assert "== 3 classes" in out and "== 5 classes" in out
    assert "spatial" in out and "MRMR top features" in out
    assert os.path.isfile(os.path.join(run_dir, "metrics.csv"))

    assert main(["clusters", "--clusters", "2"] + common) == 0
    assert capsys.readouterr().out.startswith("mixing ")


def test_simulate_prints_checksums(tmp_path, capsys):
    out = tmp_path / "streams"
    assert main(["simulate", "--scenario", "pass_by", "--out", str(out), "--run-dir", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8
    digest, path = lines[0].split("  ")
    assert len(digest) == 64 and path.startswith(str(out))


def test_malformed_stream_exits_with_stage_message(tmp_path, capsys):
    streams = tmp_path / "streams"
    common = ["--run-dir", str(tmp_path / "run")]
    assert main(["simulate", "--scenario", "pass_by", "--out", str(streams)] + common) == 0
    assert main(["track", str(streams)] + common) == 0
    (streams / "skeleton.jsonl").write_text('{"t": 0, "id": 1, "joints": {"torso": [0, 0, 2]}}\n')
    capsys.readouterr()
    assert main(["extract", str(streams)] + common) == 1
    last = capsys.readouterr().err.strip().splitlines()[-1]
    assert last.startswith("error [extract]:")
    assert "skeleton.jsonl:1" in last


def test_class_weight_option_reaches_the_classifier():
    args = build_parser().parse_args(["train", "--class-weight", "balanced"])
    run = run_config_from_args(args)
    assert run.class_weight == "balanced"
    assert classifier_config(run).class_weight is True
    assert run.config_hash() != RunConfig().config_hash()
    assert classifier_config(run_config_from_args(build_parser().parse_args(["train"]))) is None
    with pytest.raises(ValueError, match="svm classifier only"):
        classifier_config(RunConfig(classifier="mlp", class_weight="balanced"))


def test_class_weight_changes_the_saved_model(recorded_run, tmp_path):
    run_dir, _, common, _ = recorded_run
    data = os.path.join(run_dir, "fused.csv")
    plain, weighted = str(tmp_path / "plain.json"), str(tmp_path / "weighted.json")
    assert main(["train", "--data", data, "--out", plain] + common) == 0
    assert main(["train", "--data", data, "--out", weighted, "--class-weight", "balanced"] + common) == 0
    with open(plain, encoding="utf-8") as a, open(weighted, encoding="utf-8") as b:
        plain_doc, weighted_doc = json.load(a), json.load(b)
    assert plain_doc["config"]["class_weight"] is False
    assert weighted_doc["config"]["class_weight"] is True
    assert plain_doc["weights"] != weighted_doc["weights"]


def test_full_sweep_row_matches_the_unreduced_run(recorded_run):
    run_dir, _, _, _ = recorded_run
    run = RunConfig(run_dir=run_dir, seed=3, k=3)
    dataset = read_fused_csv(os.path.join(run_dir, "fused.csv"))
    ds, y, names = labeled(dataset, run.labels)
    ranking = rank_dataset(ds.matrix(ds.feature_ids), y, None, run.mrmr_scheme, ds.feature_ids)
    table = sweep_table(dataset, run, ranking)
    assert table["k"].tolist() == list(range(32, 1, -1))
    full = cross_validated(ds.matrix(ds.feature_ids), y, names, run).metrics
    assert table["macro_precision"].iloc[0] == full.macro_precision()
    assert table["accuracy"].iloc[0] == full.accuracy


def test_fused_recording_must_cover_consecutive_ticks(recorded_run, monkeypatch):
    _, streams, _, _ = recorded_run
    manifest = manifest_for("32")
    frames = fuse_recording_dir(streams, manifest)
    assert check_sequence(frames) == []

    real_fuse = engagedetector.main.fuse

    def fuse_with_gap(*args, **kwargs):
        fused = real_fuse(*args, **kwargs)
        return fused[:10] + fused[11:]

    monkeypatch.setattr(engagedetector.main, "fuse", fuse_with_gap)
    with pytest.raises(ValueError, match="not one tick apart"):
        fuse_recording_dir(streams, manifest)
