"""Seed-deterministic synthetic VideoQA episodes with a decoding oracle.

Each episode follows a latent script (actor class, action class, active
frame span). Class and action prototypes live on disjoint coordinate
blocks, so they are exactly orthogonal: the actor block appears in patch
rows only while the actor is on screen, the action block rides on the
actor's patch rows (with per-frame evidence dropout), and distractor
objects carry wrong-action signatures in every frame. Questions name the
actor (positive-mean token) against a negative-mean query marker, which
makes untrained cosine cross-attention score active frames above the rest;
answers are actor+action combinations with exactly one match.

A hand-coded nearest-prototype classifier decodes noise-free episodes
perfectly, certifying the task is learnable before any training runs.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datamodel import Episode, FrameRecord, load_episode, load_manifest, save_episode, write_manifest
from .errors import ConfigError
from .frame_select import SelectorParams, run_selection
from .model import predict

N_PATCHES = 16
ACTOR_ROWS = (0, 1, 2, 3, 4, 5)
DISTRACTOR_ROWS = ((6, 7, 8), (9, 10, 11))
N_ACTIONS = 6
SPAN_MIN, SPAN_MAX = 8, 12
EVIDENCE_RATE = 0.7
RIDER_GAIN = 0.5
FALSE_GROUNDING_RATE = 0.75
QUESTION_TOKENS = 2


@dataclass
class SynthConfig:
    seed: int = 7
    n_episodes: int = 100
    T: int = 32
    n_object_classes: int = 8
    n_answer_options: int = 5
    C: int = 64
    noise_std: float = 0.1

    def __post_init__(self):
        if self.n_answer_options < 2:
            raise ConfigError("need at least 2 answer options")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.T < 1 or self.n_episodes < 0:
            raise ConfigError("T and n_episodes must be positive")
        if self.block_size < 2:
            raise ConfigError(
                f"C={self.C} too small for {self.n_object_classes} classes and {N_ACTIONS} actions"
            )
        if self.n_object_classes < 4:
            raise ConfigError("need at least 4 object classes for distinct distractors")

    @property
    def block_size(self):
        # object blocks + action blocks + marker block + background block
        return self.C // (self.n_object_classes + N_ACTIONS + 2)


@dataclass
class Prototypes:
    """Block-sparse unit vectors shared by video, question, and answer payloads."""

    objects: np.ndarray
    actions: np.ndarray
    marker: np.ndarray

    @classmethod
    def build(cls, cfg):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        B = cfg.block_size

        def block_vec(block_index, sign=1.0):
            v = np.zeros(cfg.C, dtype=np.float32)
            vals = np.abs(rng.normal(size=B)).astype(np.float32) + 0.25
            v[block_index * B : (block_index + 1) * B] = sign * vals / np.linalg.norm(vals)
            return v

        objects = np.stack([block_vec(k) for k in range(cfg.n_object_classes)])
        actions = np.stack(
            [block_vec(cfg.n_object_classes + c) for c in range(N_ACTIONS)]
        )
        marker = block_vec(cfg.n_object_classes + N_ACTIONS, sign=-1.0)
        return cls(objects=objects, actions=actions, marker=marker)


def _episode_rng(cfg, index):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, 1000, index]))


def _script(cfg, rng):
    """Latent script: actor, action, and the active frame span."""
    actor = int(rng.integers(cfg.n_object_classes))
    action = int(rng.integers(N_ACTIONS))
    span_len = int(rng.integers(SPAN_MIN, min(SPAN_MAX, cfg.T) + 1)) if cfg.T > SPAN_MIN else cfg.T
    span_len = min(span_len, cfg.T)
    start = int(rng.integers(0, cfg.T - span_len + 1))
    return {"actor": actor, "action": action, "span": (start, start + span_len)}


def _random_box(rng):
    x1, y1 = rng.uniform(0.0, 0.55, size=2)
    w, h = rng.uniform(0.2, 0.4, size=2)
    return (float(x1), float(y1), float(min(x1 + w, 1.0)), float(min(y1 + h, 1.0)))


def generate_episode(cfg, index, protos=None):
    """Fully deterministic episode for (cfg.seed, index)."""
    protos = protos or Prototypes.build(cfg)
    rng = _episode_rng(cfg, index)
    script = _script(cfg, rng)
    a, c = script["actor"], script["action"]
    lo, hi = script["span"]
    actor_box = _random_box(rng)
    distractor_boxes = [_random_box(rng), _random_box(rng)]
    evidence = rng.random(cfg.T) < EVIDENCE_RATE

    others = [k for k in range(cfg.n_object_classes) if k != a]
    wrong_acts = [x for x in range(N_ACTIONS) if x != c]
    frames = []
    for t in range(cfg.T):
        patches = (cfg.noise_std * rng.normal(size=(N_PATCHES, cfg.C))).astype(np.float32)
        active = lo <= t < hi
        if active:
            row_sig = protos.objects[a].copy()
            if evidence[t]:
                row_sig = row_sig + protos.actions[c]
            patches[list(ACTOR_ROWS)] += row_sig
        # distractor objects drift: classes and (wrong) actions resample per
        # frame, so irrelevant frames inject varied misleading signal instead
        # of a constant background the model could subtract
        for rows in DISTRACTOR_ROWS:
            sig = protos.objects[int(rng.choice(others))] + protos.actions[
                int(rng.choice(wrong_acts))
            ]
            patches[list(rows)] += sig
        # grounding is question-aware only on relevant frames: the actor gets
        # a box while on screen; off the span the grounder sometimes
        # hallucinates a distractor box, so grounding quality tracks frame
        # relevance and indiscriminate frame inclusion poisons the local path
        boxes, rois, spatials = [], [], []
        if active:
            boxes.append(actor_box)
            rider = protos.actions[int(rng.choice(wrong_acts))] * RIDER_GAIN
            rois.append(patches[list(ACTOR_ROWS)].mean(axis=0) + rider)
            spatials.append(actor_box)
        elif rng.random() < FALSE_GROUNDING_RATE:
            boxes.append(distractor_boxes[0])
            rois.append(patches[list(DISTRACTOR_ROWS[0])].mean(axis=0))
            spatials.append(distractor_boxes[0])
        rois = (
            np.stack(rois).astype(np.float32)
            if rois
            else np.zeros((0, cfg.C), dtype=np.float32)
        )
        frames.append(
            FrameRecord(
                frame_index=t,
                patch_embeddings=patches,
                boxes=boxes,
                roi_features=rois,
                spatial_features=np.asarray(spatials, dtype=np.float32).reshape(len(boxes), 4),
                frame_feature=patches.mean(axis=0).astype(np.float32),
            )
        )

    question = np.stack([protos.marker, protos.objects[a]]).astype(np.float32)
    assert question.shape[0] == QUESTION_TOKENS

    def answer_vec(actor, action):
        v = protos.objects[actor] + protos.actions[action]
        return (v / np.linalg.norm(v)).astype(np.float32)

    wrong_actions = [x for x in range(N_ACTIONS) if x != c]
    wrong_actors = [x for x in range(cfg.n_object_classes) if x != a]
    picks_c = rng.choice(wrong_actions, size=2, replace=False)
    pick_a = rng.choice(wrong_actors, size=2, replace=False)
    options = [
        (a, c),
        (a, int(picks_c[0])),
        (a, int(picks_c[1])),
        (int(pick_a[0]), c),
        (int(pick_a[1]), int(picks_c[0])),
    ][: cfg.n_answer_options]
    while len(options) < cfg.n_answer_options:
        options.append((int(rng.integers(cfg.n_object_classes)), int(rng.integers(N_ACTIONS))))
    order = rng.permutation(len(options))
    bank = np.stack([answer_vec(*options[i]) for i in order])
    label = int(np.flatnonzero(order == 0)[0])

    return Episode(
        video_id=f"synth_{cfg.seed}_{index:05d}",
        frames=frames,
        question_tokens=question,
        answer_bank=bank,
        qa_mode="multi_choice",
        label=label,
        category=f"actor_{a}",
    )


def split_indices(n):
    """80/10/10 split by index."""
    n_train = int(n * 0.8)
    n_val = int(n * 0.1)
    return (
        list(range(0, n_train)),
        list(range(n_train, n_train + n_val)),
        list(range(n_train + n_val, n)),
    )


def generate_dataset(cfg, out_dir):
    """Write every episode in interchange formats plus per-split manifests."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    protos = Prototypes.build(cfg)
    entries = []
    for i in range(cfg.n_episodes):
        ep = generate_episode(cfg, i, protos)
        entries.append(save_episode(ep, out_dir))
    train_idx, val_idx, test_idx = split_indices(cfg.n_episodes)
    paths = {}
    for name, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx)):
        path = os.path.join(out_dir, f"{name}.ndjson")
        write_manifest(path, [entries[i] for i in idx])
        paths[name] = path
    return paths


def load_split(data_dir, split):
    data_dir = os.fspath(data_dir)
    manifest = os.path.join(data_dir, f"{split}.ndjson")
    return [load_episode(e, data_dir) for e in load_manifest(manifest)]


def oracle_selector(cfg):
    """Identity projections: untrained scoring as plain cosine cross-attention."""
    from .tensor import param

    eye = np.eye(cfg.C, dtype=np.float32)
    return SelectorParams(phi_e=param(eye.copy()), phi_q=param(eye.copy()), beta=0.0)


def oracle_frame_scores(episode, cfg):
    """Frame scores under the identity selector (one per sampled slot)."""
    _, selection = run_selection(episode, oracle_selector(cfg), sampling=True)
    return selection.scores


def oracle_predict(episode, cfg, protos=None):
    """Nearest-prototype decoding: actor from the question, action from RoIs."""
    protos = protos or Prototypes.build(cfg)
    actor = int(np.argmax(protos.objects @ episode.question_tokens[-1]))
    votes = np.zeros(N_ACTIONS)
    for rec in episode.frames:
        for i in range(rec.m):
            roi = rec.roi_features[i]
            if roi @ protos.objects[actor] > 0.5:
                votes += protos.actions @ roi
    action = int(np.argmax(votes))
    target = protos.objects[actor] + protos.actions[action]
    target = target / np.linalg.norm(target)
    return int(np.argmax(episode.answer_bank @ target))


def evaluate_accuracy(params, episodes, settings, max_workers=None):
    """Fraction of episodes whose prediction matches the label."""
    if not episodes:
        raise ConfigError("empty evaluation split")
    if max_workers is None:
        max_workers = int(os.environ.get("LGQAVE_THREADS", "1"))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            preds = list(pool.map(lambda ep: predict(params, ep, settings), episodes))
    else:
        preds = [predict(params, ep, settings) for ep in episodes]
    hits = sum(int(p == ep.label) for p, ep in zip(preds, episodes))
    return hits / len(episodes)
