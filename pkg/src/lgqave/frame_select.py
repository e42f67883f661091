"""Question-aware frame selection.

Clip sampling fixes a 32-slot, 8-clip layout over the video; each sampled
frame is scored by cross-attention between projected (and row-normalized)
patch and question-token embeddings, thresholded, and grown by a +-2 frame
window. Note the score is a mean over all attended entries, so its
magnitude is bounded by 1/sqrt(d); thresholds above that bound always fall
back to the argmax frame.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyInputError
from .tensor import Tensor, l2norm_rows, matmul, mean_entries, softmax_rows, take_rows

TARGET_FRAMES = 32
N_CLIPS = 8
PER_CLIP = 4
WINDOW = 2


@dataclass
class SelectorParams:
    """Learnable projections feeding the frame scorer, plus the threshold."""

    phi_e: Tensor
    phi_q: Tensor
    beta: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass
class Selection:
    """Scores per sampled slot, thresholded slots, and windowed slots."""

    scores: np.ndarray
    kept: list
    windows: list


def sample_clips(n_frames, target=TARGET_FRAMES, clips=N_CLIPS, per_clip=PER_CLIP):
    """Uniformly strided frame indices, padded by repeating the final frame."""
    if n_frames < 1:
        raise EmptyInputError("video with no frames")
    if clips * per_clip != target:
        raise ConfigError(f"clip layout {clips}x{per_clip} != {target}")
    if n_frames >= target:
        return [i * n_frames // target for i in range(target)]
    return list(range(n_frames)) + [n_frames - 1] * (target - n_frames)


def clip_of_slot(slot, per_clip=PER_CLIP):
    return slot // per_clip


def project_for_scoring(mat, proj):
    """Row-normalized projection used on both sides of the scorer."""
    return l2norm_rows(matmul(mat, proj))


def frame_score(e_proj, q_proj, patch_mask=None):
    """Cross-attention relevance of one frame to the question (scalar Tensor).

    Inputs are row-normalized projections; softmax runs over question tokens
    for each patch row, and the result is the mean over every entry of the
    attended matrix. patch_mask selects the real (non-padded) patch rows.
    """
    if e_proj.shape[0] == 0 or q_proj.shape[0] == 0:
        raise EmptyInputError("frame_score needs nonempty patch and token matrices")
    att = softmax_rows(matmul(e_proj, q_proj, transpose_b=True))
    attended = matmul(att, q_proj)
    if patch_mask is not None:
        rows = np.flatnonzero(np.asarray(patch_mask, dtype=bool))
        if rows.size == 0:
            raise EmptyInputError("frame_score with all patch rows masked")
        attended = take_rows(attended, rows)
    return mean_entries(attended)


def select_frames(scores, beta):
    """Indices with score strictly above beta; argmax fallback when empty."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite frame scores")
    kept = [int(t) for t in np.flatnonzero(scores > beta)]
    if not kept:
        kept = [int(np.argmax(scores))]
    return kept


def expand_window(kept, n_frames, window=WINDOW):
    """Union of [t-window, t+window] clipped to [0, n_frames), sorted unique."""
    out = set()
    for t in kept:
        if not 0 <= t < n_frames:
            raise ValueError(f"kept index {t} outside [0, {n_frames})")
        out.update(range(max(0, t - window), min(n_frames, t + window + 1)))
    return sorted(out)


def score_slots(episode, params, slot_frames):
    """Score every sampled slot; duplicate frames share one computation.

    Selection is discrete (threshold/argmax), so no gradients flow through
    the scores; the whole pass runs tape-free.

    Returns (scores ndarray [n_slots], q_proj Tensor) where q_proj is the
    normalized question projection reused by the caller.
    """
    from .tensor import inference_mode

    cache = {}
    scores = np.zeros(len(slot_frames), dtype=np.float64)
    with inference_mode():
        q_proj = project_for_scoring(Tensor(episode.question_tokens), params.phi_q)
        for slot, fidx in enumerate(slot_frames):
            if fidx not in cache:
                rec = episode.frames[fidx]
                e_proj = project_for_scoring(Tensor(rec.patch_embeddings), params.phi_e)
                mask = None
                if rec.n_tokens < rec.patch_embeddings.shape[0]:
                    mask = np.arange(rec.patch_embeddings.shape[0]) < rec.n_tokens
                cache[fidx] = float(frame_score(e_proj, q_proj, mask).data)
            scores[slot] = cache[fidx]
    return scores, q_proj


def run_selection(episode, params, sampling=True):
    """Full selection pass for one episode.

    Returns (slot_frames, Selection). With sampling disabled every slot is
    windowed (the no-selection ablation); scores are still computed so
    downstream eviction stays deterministic.
    """
    slot_frames = sample_clips(episode.n_frames)
    scores, _ = score_slots(episode, params, slot_frames)
    if sampling:
        kept = select_frames(scores, params.beta)
        windows = expand_window(kept, len(slot_frames))
    else:
        kept = list(range(len(slot_frames)))
        windows = list(kept)
    return slot_frames, Selection(scores=scores, kept=kept, windows=windows)
