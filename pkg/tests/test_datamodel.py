import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgqave.datamodel import (
    load_episode,
    load_manifest,
    pad_grounding,
    read_tensor,
    save_episode,
    validate_manifest_entry,
    write_manifest,
    write_tensor,
)
from lgqave.errors import DataError, FormatError
from lgqave.tensor import Tensor
from tests.conftest import make_episode, make_frame


class TestTensorFile:
    def test_round_trip_zeros(self, tmp_path):
        path = tmp_path / "z.lgqe"
        write_tensor(path, np.zeros((2, 3), dtype=np.float32))
        back = read_tensor(path)
        assert back.shape == (2, 3)
        np.testing.assert_array_equal(back.data, 0)

    def test_round_trip_bit_exact(self, tmp_path, rng):
        path = tmp_path / "r.lgqe"
        x = rng.normal(size=(3, 4, 5)).astype(np.float32)
        write_tensor(path, Tensor(x))
        assert read_tensor(path).data.tobytes() == x.tobytes()

    def test_single_element(self, tmp_path):
        path = tmp_path / "one.lgqe"
        write_tensor(path, np.array([3.14], dtype=np.float32))
        assert read_tensor(path).data.tobytes() == np.array([3.14], dtype=np.float32).tobytes()

    def test_truncated_payload_names_offset(self, tmp_path):
        path = tmp_path / "t.lgqe"
        write_tensor(path, np.ones((2, 2), dtype=np.float32))
        blob = path.read_bytes()
        path.write_bytes(blob[:-1])
        with pytest.raises(FormatError) as exc:
            read_tensor(path)
        assert exc.value.offset == len(blob) - 1
        assert "truncated payload" in str(exc.value)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.lgqe"
        write_tensor(path, np.ones(2, dtype=np.float32))
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError) as exc:
            read_tensor(path)
        assert exc.value.offset == 0

    def test_bad_dtype(self, tmp_path):
        path = tmp_path / "d.lgqe"
        write_tensor(path, np.ones(2, dtype=np.float32))
        blob = bytearray(path.read_bytes())
        blob[5] = 0x02
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError) as exc:
            read_tensor(path)
        assert exc.value.offset == 5

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "x.lgqe"
        write_tensor(path, np.ones(2, dtype=np.float32))
        path.write_bytes(path.read_bytes() + b"!")
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_empty_tensor_round_trips(self, tmp_path):
        path = tmp_path / "e.lgqe"
        write_tensor(path, np.zeros((0, 7), dtype=np.float32))
        assert read_tensor(path).shape == (0, 7)


class TestPadGrounding:
    def test_mask_m3(self, rng):
        rec = make_frame(rng, m=3)
        padded, mask = pad_grounding(rec, m_max=10)
        np.testing.assert_array_equal(mask, [1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        assert padded.roi_features.shape == (10, 12)
        np.testing.assert_array_equal(padded.roi_features[3:], 0)

    def test_m10_unchanged(self, rng):
        rec = make_frame(rng, m=4)
        padded, mask = pad_grounding(rec, m_max=4)
        assert mask.all()
        np.testing.assert_array_equal(padded.roi_features, rec.roi_features)

    def test_m0_degenerate(self, rng):
        rec = make_frame(rng, m=0)
        padded, mask = pad_grounding(rec, m_max=10)
        assert not mask.any()
        np.testing.assert_array_equal(padded.roi_features, 0)


class TestValidation:
    def test_eleven_boxes_rejected(self, rng):
        rec = make_frame(rng, m=2)
        rec.boxes = [(0.0, 0.0, 0.5, 0.5)] * 11
        rec.roi_features = rng.normal(size=(11, 12)).astype(np.float32)
        rec.spatial_features = np.tile(np.array([0, 0, 0.5, 0.5], dtype=np.float32), (11, 1))
        with pytest.raises(DataError, match="m exceeds 10"):
            rec.validate()

    def test_degenerate_box_rejected(self, rng):
        rec = make_frame(rng, m=1)
        rec.boxes = [(0.5, 0.1, 0.5, 0.9)]
        with pytest.raises(DataError, match="box"):
            rec.validate()

    def test_label_out_of_range(self, rng):
        ep = make_episode(rng, n_options=3)
        ep.label = 3
        with pytest.raises(DataError, match="label"):
            ep.validate()

    def test_valid_episode_passes(self, episode):
        episode.validate()


@pytest.fixture
def written_dataset(tmp_path, rng):
    eps = [make_episode(rng, n_frames=2, video_id=f"v{i}", label=i % 3) for i in range(3)]
    entries = [save_episode(ep, tmp_path) for ep in eps]
    manifest = tmp_path / "train.ndjson"
    write_manifest(manifest, entries)
    return tmp_path, manifest, eps, entries


class TestEpisodeIO:
    def test_round_trip_identity(self, written_dataset):
        base, manifest, eps, _ = written_dataset
        for entry, ep in zip(load_manifest(manifest), eps):
            back = load_episode(entry, base)
            assert back.video_id == ep.video_id
            assert back.label == ep.label
            assert back.qa_mode == ep.qa_mode
            assert back.category == ep.category
            assert back.question_tokens.tobytes() == ep.question_tokens.tobytes()
            assert back.answer_bank.tobytes() == ep.answer_bank.tobytes()
            for fa, fb in zip(back.frames, ep.frames):
                assert fa.patch_embeddings.tobytes() == fb.patch_embeddings.tobytes()
                assert fa.roi_features.tobytes() == fb.roi_features.tobytes()
                assert fa.frame_feature.tobytes() == fb.frame_feature.tobytes()
                assert [tuple(b) for b in fa.boxes] == [tuple(b) for b in fb.boxes]

    def test_minimal_episode_loads(self, tmp_path, rng):
        ep = make_episode(rng, n_frames=1, m=1, n_options=2, label=0, video_id="mini")
        entry = save_episode(ep, tmp_path)
        assert load_episode(entry, tmp_path).n_frames == 1

    def test_missing_file_names_episode(self, written_dataset):
        base, manifest, _, entries = written_dataset
        entry = dict(entries[0])
        entry["question_file"] = "nope.lgqe"
        with pytest.raises(DataError, match=entry["video_id"]):
            load_episode(entry, base)

    def test_label_at_bank_size_rejected(self, written_dataset):
        base, _, eps, entries = written_dataset
        entry = dict(entries[0])
        entry["label"] = eps[0].answer_bank.shape[0]
        with pytest.raises(DataError, match="label"):
            load_episode(entry, base)


CORRUPTIONS = [
    ("drop_video_id", lambda e: e.pop("video_id")),
    ("drop_frames", lambda e: e.pop("frames")),
    ("extra_key", lambda e: e.__setitem__("junk", 1)),
    ("label_str", lambda e: e.__setitem__("label", "1")),
    ("label_bool", lambda e: e.__setitem__("label", True)),
    ("label_negative", lambda e: e.__setitem__("label", -1)),
    ("bad_mode", lambda e: e.__setitem__("qa_mode", "essay")),
    ("category_int", lambda e: e.__setitem__("category", 7)),
    ("frames_empty", lambda e: e.__setitem__("frames", [])),
    ("frame_extra_key", lambda e: e["frames"][0].__setitem__("junk", 1)),
    ("frame_t_str", lambda e: e["frames"][0].__setitem__("t", "0")),
    ("frame_t_dup", lambda e: e["frames"][1].__setitem__("t", e["frames"][0]["t"])),
    ("question_int", lambda e: e.__setitem__("question_file", 3)),
    ("answers_empty", lambda e: e.__setitem__("answers_file", "")),
]


@pytest.mark.parametrize("name,mutate", CORRUPTIONS, ids=[c[0] for c in CORRUPTIONS])
def test_single_field_corruption_rejected(written_dataset, name, mutate):
    _, _, _, entries = written_dataset
    entry = json.loads(json.dumps(entries[0]))
    mutate(entry)
    with pytest.raises(DataError):
        validate_manifest_entry(entry)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=13))
def test_corruption_property(idx):
    rng = np.random.default_rng(0)
    ep = make_episode(rng, n_frames=2, video_id="p")
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        entry = save_episode(ep, tmp)
        entry = json.loads(json.dumps(entry))
        CORRUPTIONS[idx][1](entry)
        with pytest.raises(DataError):
            validate_manifest_entry(entry)
