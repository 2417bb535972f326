import json
import logging
import math

import pytest

from engagedetector import config, utils


def test_wrap_angle_range():
    assert utils.wrap_angle(math.pi) == pytest.approx(math.pi)
    assert utils.wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert utils.wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert utils.wrap_angle(0.25) == pytest.approx(0.25)


def test_circular_mean_crosses_the_cut():
    assert utils.circular_mean(math.radians(170), math.radians(-170)) == pytest.approx(math.pi)
    assert utils.circular_mean(0.2, 0.4) == pytest.approx(0.3)
    # opposite angles fall back to the first one
    assert utils.circular_mean(0.0, math.pi) == pytest.approx(0.0)


def test_jsonl_is_sorted_and_compact(tmp_path):
    path = tmp_path / "out" / "records.jsonl"
    assert utils.write_jsonl(str(path), [{"b": 1, "a": [1.5, None]}, {"t": 2}]) == 2
    assert path.read_text().splitlines() == ['{"a":[1.5,null],"b":1}', '{"t":2}']
    assert utils.read_jsonl(str(path)) == [{"a": [1.5, None], "b": 1}, {"t": 2}]


def test_read_jsonl_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        utils.read_jsonl(str(tmp_path / "missing.jsonl"))
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"t": 1}\n{oops\n')
    with pytest.raises(ValueError, match="broken.jsonl:2"):
        utils.read_jsonl(str(broken))


def test_read_jsonl_reports_malformed_records(tmp_path):
    path = tmp_path / "ticks.jsonl"
    path.write_text('{"t": 1}\n{"t": 2}\n')
    assert utils.read_jsonl(str(path), lambda r: int(r["t"])) == [1, 2]
    path.write_text('{"t": 1}\n{"t": 2}\n{"when": 3}\n')
    with pytest.raises(ValueError, match=r"ticks.jsonl:3: malformed record \(KeyError"):
        utils.read_jsonl(str(path), lambda r: int(r["t"]))
    path.write_text('[1, 2]\n')
    with pytest.raises(ValueError, match="ticks.jsonl:1"):
        utils.read_jsonl(str(path), lambda r: int(r["t"]))


def test_config_hash_ignores_key_order():
    assert utils.config_hash({"a": 1, "b": 2}) == utils.config_hash({"b": 2, "a": 1})
    assert len(utils.config_hash({"a": 1})) == 12
    assert utils.config_hash({"a": 1}) != utils.config_hash({"a": 2})


def test_provenance_header_has_no_timestamp():
    header = utils.provenance_header(7, "abcdef012345")
    assert header == f"# engagedetector {config.APP_VERSION} seed=7 config=abcdef012345"


def test_file_checksum(tmp_path):
    path = tmp_path / "a.txt"
    path.write_bytes(b"abc")
    assert utils.file_checksum(str(path)) == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")


def test_setup_logging_does_not_duplicate_handlers(tmp_path):
    log_file = tmp_path / "logs" / "run.log"
    utils.setup_logging(log_path=str(log_file), level="DEBUG")
    root = utils.setup_logging(log_path=str(log_file), level="DEBUG")
    tagged = [h for h in root.handlers if getattr(h, "_engagedetector_handler", False)]
    assert len(tagged) == 2
    assert root.level == logging.DEBUG
    logging.getLogger("engagedetector.test").info("hello")
    for handler in tagged:
        handler.flush()
    assert "hello" in log_file.read_text()


def test_settings_round_trip(isolated_config_dir):
    assert config.get_setting("seed") == config.DEFAULT_SEED
    assert config.set_setting("k", 5)
    config.reset_settings_cache()
    assert config.get_setting("k") == 5
    with open(config.settings_path(), encoding="utf-8") as f:
        assert json.load(f)["k"] == 5
    assert config.settings_path().startswith(str(isolated_config_dir))


def test_corrupted_settings_fall_back_to_defaults(isolated_config_dir):
    isolated_config_dir.mkdir(parents=True, exist_ok=True)
    (isolated_config_dir / config.SETTINGS_FILENAME).write_text("{not json")
    assert config.get_setting("classifier") == "svm"
