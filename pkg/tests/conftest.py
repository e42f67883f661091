import numpy as np
import pytest

from lgqave.datamodel import Episode, FrameRecord


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_frame(rng, t=0, n_patches=6, c=12, m=2):
    patches = rng.normal(size=(n_patches, c)).astype(np.float32)
    boxes = [
        (0.05, 0.05, 0.45, 0.5),
        (0.5, 0.1, 0.9, 0.65),
        (0.15, 0.55, 0.6, 0.95),
        (0.3, 0.3, 0.7, 0.7),
    ][:m]
    roi = rng.normal(size=(m, c)).astype(np.float32)
    spatial = np.asarray(boxes, dtype=np.float32).reshape(m, 4)
    return FrameRecord(
        frame_index=t,
        patch_embeddings=patches,
        boxes=boxes,
        roi_features=roi,
        spatial_features=spatial,
        frame_feature=patches.mean(axis=0),
    )


def make_episode(rng, n_frames=1, c_vis=12, c_text=10, n_options=3, m=2, label=1,
                 qa_mode="multi_choice", video_id="ep0", category="cat"):
    frames = [make_frame(rng, t=t, c=c_vis, m=m) for t in range(n_frames)]
    question = rng.normal(size=(4, c_text)).astype(np.float32)
    answers = rng.normal(size=(n_options, c_text)).astype(np.float32)
    return Episode(
        video_id=video_id,
        frames=frames,
        question_tokens=question,
        answer_bank=answers,
        qa_mode=qa_mode,
        label=label,
        category=category,
    )


@pytest.fixture
def episode(rng):
    return make_episode(rng)
