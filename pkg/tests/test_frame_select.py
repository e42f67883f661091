import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgqave.errors import ConfigError, EmptyInputError
from lgqave.frame_select import (
    SelectorParams,
    expand_window,
    frame_score,
    sample_clips,
    select_frames,
)
from lgqave.tensor import Tensor, l2norm_rows, param


def naive_frame_score(e_proj, q_proj):
    """Double-loop reference: per patch row, softmax over tokens, then mean."""
    n, d = e_proj.shape
    m = q_proj.shape[0]
    attended = np.zeros((n, d))
    for i in range(n):
        logits = np.array([e_proj[i] @ q_proj[j] for j in range(m)])
        logits -= logits.max()
        w = np.exp(logits)
        w /= w.sum()
        for j in range(m):
            attended[i] += w[j] * q_proj[j]
    return attended.mean()


def _unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)


class TestSampleClips:
    def test_identity_at_target(self):
        assert sample_clips(32) == list(range(32))

    def test_every_second_at_double(self):
        assert sample_clips(64) == list(range(0, 64, 2))

    def test_padding_repeats_last(self):
        assert sample_clips(10) == list(range(10)) + [9] * 22

    def test_single_frame(self):
        assert sample_clips(1) == [0] * 32

    def test_indices_in_range(self):
        for t in (1, 7, 31, 32, 33, 100, 1000):
            idx = sample_clips(t)
            assert len(idx) == 32
            assert all(0 <= i < t for i in idx)


class TestFrameScore:
    def test_single_token_weight_one(self):
        e = Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
        q = Tensor(np.array([[0.6, 0.8]], dtype=np.float32))
        assert float(frame_score(e, q).data) == pytest.approx(0.7, abs=1e-7)

    def test_duplicate_tokens_no_change(self, rng):
        e = Tensor(_unit_rows(rng, 3, 8))
        q1 = _unit_rows(rng, 1, 8)
        s1 = float(frame_score(e, Tensor(q1)).data)
        s2 = float(frame_score(e, Tensor(np.vstack([q1, q1]))).data)
        assert s1 == pytest.approx(s2, abs=1e-6)

    def test_matches_naive_reference(self, rng):
        e = _unit_rows(rng, 4, 8)
        q = _unit_rows(rng, 3, 8)
        got = float(frame_score(Tensor(e), Tensor(q)).data)
        assert got == pytest.approx(naive_frame_score(e.astype(np.float64), q.astype(np.float64)), abs=1e-6)

    def test_token_order_invariance(self, rng):
        e = Tensor(_unit_rows(rng, 5, 8))
        q = _unit_rows(rng, 4, 8)
        s1 = float(frame_score(e, Tensor(q)).data)
        s2 = float(frame_score(e, Tensor(q[::-1].copy())).data)
        assert s1 == pytest.approx(s2, abs=1e-6)

    def test_bounded_by_one(self, rng):
        for _ in range(25):
            e = Tensor(_unit_rows(rng, 6, 16))
            q = Tensor(_unit_rows(rng, 3, 16))
            assert abs(float(frame_score(e, q).data)) <= 1.0 + 1e-6

    def test_empty_rejected(self, rng):
        with pytest.raises(EmptyInputError):
            frame_score(Tensor(np.zeros((0, 4), dtype=np.float32)), Tensor(_unit_rows(rng, 2, 4)))

    def test_patch_mask_drops_padded_rows(self, rng):
        e = _unit_rows(rng, 4, 8)
        q = Tensor(_unit_rows(rng, 2, 8))
        full = float(frame_score(Tensor(e[:2]), q).data)
        padded = e.copy()
        masked = float(frame_score(Tensor(padded), q, patch_mask=[1, 1, 0, 0]).data)
        assert masked == pytest.approx(full, abs=1e-6)


class TestSelectFrames:
    def test_threshold(self):
        assert select_frames([0.5, 0.3, 0.45], beta=0.4) == [0, 2]

    def test_fallback_argmax(self):
        assert select_frames([0.1, 0.3, 0.2], beta=0.4) == [1]

    def test_fallback_tie_lowest_index(self):
        assert select_frames([0.2, 0.2, 0.2], beta=0.9) == [0]

    def test_monotone_shrink(self):
        scores = [0.5, 0.3, 0.45]
        assert set(select_frames(scores, 0.45)) <= set(select_frames(scores, 0.4))

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(min_value=-1, max_value=1, allow_nan=False), min_size=1, max_size=40),
        st.floats(min_value=0, max_value=1),
        st.floats(min_value=0, max_value=1),
    )
    def test_threshold_monotonicity(self, scores, b1, b2):
        # holds through the argmax fallback too: the fallback singleton is
        # always inside any lower-threshold kept set
        lo, hi = min(b1, b2), max(b1, b2)
        assert set(select_frames(scores, hi)) <= set(select_frames(scores, lo))


class TestExpandWindow:
    def test_plain(self):
        assert expand_window([5], 32) == [3, 4, 5, 6, 7]

    def test_boundary_clip(self):
        assert expand_window([0], 32) == [0, 1, 2]

    def test_overlap_dedup(self):
        assert expand_window([4, 6], 32) == [2, 3, 4, 5, 6, 7, 8]

    def test_contains_input(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            t = int(rng.integers(1, 40))
            kept = sorted(set(rng.integers(0, t, size=rng.integers(1, 6)).tolist()))
            win = expand_window(kept, t)
            assert set(kept) <= set(win)
            assert all(0 <= w < t for w in win)


def test_selector_beta_validated(rng):
    w = param(rng.normal(size=(8, 8)).astype(np.float32))
    with pytest.raises(ConfigError):
        SelectorParams(phi_e=w, phi_q=w, beta=1.5)
