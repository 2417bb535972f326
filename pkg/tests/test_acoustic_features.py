import math

import pytest

from engagedetector.acoustic_features import (AcousticStream, SadTag, SourceLocalization, beam_set,
                                              localization_for_tick, quantize_beam, read_localization,
                                              read_sad, sad_for_tick, tags_in_window, write_localization,
                                              write_sad)


def tags(speech_times, start=0, end=400_000, step=10_000):
    return [SadTag(t, t in speech_times, 0.8) for t in range(start, end, step)]


def test_beam_set_and_quantization():
    beams = beam_set()
    assert len(beams) == 11
    assert beams[0] == pytest.approx(-math.radians(50))
    assert beams[-1] == pytest.approx(math.radians(50))
    assert quantize_beam(math.radians(12)) == pytest.approx(math.radians(10))
    assert quantize_beam(math.radians(-90)) == pytest.approx(-math.radians(50))


def test_sad_for_tick_is_an_or():
    assert sad_for_tick([]) is None
    assert sad_for_tick([SadTag(0, False), SadTag(1, False)]) is False
    assert sad_for_tick([SadTag(0, False), SadTag(1, True)]) is True


def test_tags_in_window_is_left_open():
    stream = tags(set())
    window = tags_in_window(stream, 160_000)
    assert [tag.t for tag in window] == list(range(90_000, 170_000, 10_000))
    assert tags_in_window(stream, -80_000) == []


def test_localization_for_tick_respects_staleness():
    events = [SourceLocalization(0, 0.0, 0.01, 0.9), SourceLocalization(125_000, 0.17, 0.2, 0.5)]
    assert localization_for_tick(events, -1) is None
    assert localization_for_tick(events, 80_000) is events[0]
    assert localization_for_tick(events, 125_000) is events[1]
    assert localization_for_tick(events, 125_000 + 250_000) is events[1]
    assert localization_for_tick(events, 125_000 + 250_001) is None


def test_features_at_combines_sad_and_localization():
    events = [SourceLocalization(100_000, 0.17, 0.2, 0.5, 0.7)]
    stream = AcousticStream(tags({150_000}), events)
    features = stream.features_at(160_000)
    assert features == {"sad_event": 1.0, "sad_confidence": pytest.approx(0.8), "beam": 0.17,
                         "angle": 0.2, "source_confidence": 0.5, "source_beam_energy": 0.7}
    quiet = stream.features_at(80_000)
    assert quiet == {"sad_event": 0.0, "sad_confidence": pytest.approx(0.8)}
    assert AcousticStream().features_at(0) is None


def test_stream_requires_time_order():
    with pytest.raises(ValueError):
        AcousticStream([SadTag(10, True), SadTag(0, False)])


def test_stream_files(tmp_path):
    write_sad(str(tmp_path / "sad.jsonl"), [SadTag(10_000, True, 0.9)])
    assert read_sad(str(tmp_path / "sad.jsonl")) == [SadTag(10_000, True, 0.9)]
    write_localization(str(tmp_path / "loc.jsonl"), [SourceLocalization(125_000, 0.5, 0.45, 0.6, 0.3)])
    assert read_localization(str(tmp_path / "loc.jsonl"))[0].angle == pytest.approx(0.45)
