import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_match
from spotnet import load_match, parse_game_time, save_match
from spotnet.errors import DataError
from spotnet.io import (
    format_game_time,
    import_plain_features,
    read_features,
    write_features,
)


class TestParseGameTime:
    def test_basic(self):
        assert parse_game_time("1 - 12:34") == (1, 754)

    def test_half_two_zero(self):
        assert parse_game_time("2 - 00:00") == (2, 0)

    def test_invalid_half(self):
        with pytest.raises(DataError):
            parse_game_time("3 - 01:00")

    @pytest.mark.parametrize("text", ["1 - 1:2", "junk", "1 - 10:65", "1-10:30"])
    def test_malformed(self, text):
        with pytest.raises(DataError):
            parse_game_time(text)

    @given(half=st.sampled_from([1, 2]), minutes=st.integers(0, 59),
           seconds=st.integers(0, 59))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, half, minutes, seconds):
        text = f"{half} - {minutes:02d}:{seconds:02d}"
        assert parse_game_time(text) == (half, 60 * minutes + seconds)
        assert format_game_time(half, 60 * minutes + seconds) == text


class TestFeatureFile:
    def test_round_trip(self, tmp_path, rng):
        arr = rng.normal(size=(50, 8)).astype(np.float32)
        path = tmp_path / "m.rmsf"
        write_features(path, arr)
        np.testing.assert_array_equal(read_features(path), arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rmsf"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(DataError, match="magic"):
            read_features(path)

    def test_truncated_payload(self, tmp_path, rng):
        arr = rng.normal(size=(50, 8)).astype(np.float32)
        path = tmp_path / "m.rmsf"
        write_features(path, arr)
        data = path.read_bytes()
        path.write_bytes(data[:100])
        with pytest.raises(DataError, match="truncated"):
            read_features(path)

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        arr = rng.normal(size=(5, 3)).astype(np.float32)
        path = tmp_path / "m.rmsf"
        write_features(path, arr)
        path.write_bytes(path.read_bytes() + b"\x01")
        with pytest.raises(DataError, match="trailing"):
            read_features(path)


class TestMatchRoundTrip:
    def test_save_load_bit_identical(self, tmp_path):
        match = make_match(
            match_id="game7", n_frames=400,
            events=[(30, 0), (151, 1), (233, 2)], rate=2.0,
        )
        save_match(tmp_path, match)
        loaded = load_match(tmp_path / "game7.rmsf", tmp_path / "game7.json")
        assert loaded.match_id == match.match_id
        np.testing.assert_array_equal(loaded.features, match.features)
        assert loaded.feature_rate == match.feature_rate
        assert loaded.half_frames == match.half_frames
        assert [(e.frame, e.label, e.half) for e in loaded.events] == \
            [(e.frame, e.label, e.half) for e in match.events]

    def test_game_time_only_path(self, tmp_path):
        match = make_match(match_id="g", n_frames=4000, events=[(1508, 0)], rate=2.0)
        save_match(tmp_path, match)
        import json
        doc = json.loads((tmp_path / "g.json").read_text())
        assert doc["annotations"][0]["gameTime"] == "1 - 12:34"
        for ann in doc["annotations"]:
            del ann["position"]
        (tmp_path / "g.json").write_text(json.dumps(doc))
        loaded = load_match(tmp_path / "g.rmsf", tmp_path / "g.json")
        assert loaded.events[0].frame == 1508

    def test_event_beyond_features_rejected(self, tmp_path):
        match = make_match(match_id="g", n_frames=400, events=[(100, 0)])
        save_match(tmp_path, match)
        import json
        doc = json.loads((tmp_path / "g.json").read_text())
        doc["annotations"][0]["gameTime"] = "2 - 59:00"
        doc["annotations"][0]["position"] = 59 * 60 * 1000
        (tmp_path / "g.json").write_text(json.dumps(doc))
        with pytest.raises(DataError, match="beyond"):
            load_match(tmp_path / "g.rmsf", tmp_path / "g.json")

    def test_unknown_label_rejected(self, tmp_path):
        match = make_match(match_id="g", n_frames=400, events=[(100, 0)])
        save_match(tmp_path, match)
        import json
        doc = json.loads((tmp_path / "g.json").read_text())
        doc["annotations"][0]["label"] = "corner"
        (tmp_path / "g.json").write_text(json.dumps(doc))
        with pytest.raises(DataError, match="corner"):
            load_match(tmp_path / "g.rmsf", tmp_path / "g.json")


class TestPlainImporter:
    def test_round_trip(self, tmp_path, rng):
        import struct

        arr = rng.normal(size=(20, 4)).astype("<f4")
        path = tmp_path / "dump.bin"
        with open(path, "wb") as fh:
            fh.write(struct.pack("<III", 2, 20, 4))
            fh.write(arr.tobytes())
        np.testing.assert_array_equal(import_plain_features(path), arr)

    def test_truncated(self, tmp_path):
        import struct

        path = tmp_path / "dump.bin"
        with open(path, "wb") as fh:
            fh.write(struct.pack("<III", 2, 20, 4))
            fh.write(b"\x00" * 10)
        with pytest.raises(DataError, match="truncated"):
            import_plain_features(path)
