"""Contrastive losses, negative sampling, LR schedule, and the training loop.

The contrastive form is softmax cross-entropy over raw dot-product scores
(log-sum-exp stabilized, optional temperature). Multi-choice scoring
concatenates the pooled question with each option embedding and projects
back to width d; the video-question term contrasts the fused feature
against the other questions in the batch. Every stochastic choice (token
masks, shuffling, hard negatives) derives from the run seed, so training is
bit-reproducible.
"""

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError
from .model import ForwardSettings, forward_episode, option_vectors
from .numcore import AdamState, adam_step
from .tensor import (
    Tensor,
    backward,
    concat_vecs,
    dot,
    logsumexp,
    matmul,
    scale,
    stack_scalars,
    sub,
    sum_entries,
    take_row,
    zero_grads,
)


@dataclass
class TrainConfig:
    """Optimization and ablation knobs; defaults follow the reference recipe."""

    seed: int = 0
    lambda_: float = 1.0
    lr0: float = 5e-5
    epochs: int = 30
    batch_size: int = 64
    beta: float = 0.4
    gamma: float = 0.9
    mask_keep_rate: float = 0.9
    pool: str = "mean"
    temperature: float = 1.0
    sampling: bool = True
    grounding: bool = True
    local_repr: bool = True
    global_repr: bool = True
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 1 <= self.epochs <= 30:
            raise ConfigError(f"epochs must lie in [1, 30], got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.mask_keep_rate <= 1.0:
            raise ConfigError("mask_keep_rate must lie in (0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not (self.local_repr or self.global_repr):
            raise ConfigError("at least one of local_repr/global_repr must be enabled")

    def settings(self):
        return ForwardSettings(
            beta=self.beta,
            gamma=self.gamma,
            pool=self.pool,
            sampling=self.sampling,
            grounding=self.grounding,
            local_repr=self.local_repr,
            global_repr=self.global_repr,
        )


@dataclass
class NegativeSet:
    """Negative answers for one episode: option indices or raw embeddings."""

    indices: list = None
    embeddings: np.ndarray = None

    def __post_init__(self):
        n = (0 if self.indices is None else len(self.indices)) + (
            0 if self.embeddings is None else self.embeddings.shape[0]
        )
        if n == 0:
            raise ConfigError("negative set is empty")


def contrastive_loss(pos, negs, temperature=1.0):
    """-log(exp(pos) / (exp(pos) + sum(exp(negs)))), log-sum-exp stabilized."""
    pos = pos if isinstance(pos, Tensor) else Tensor(np.asarray(pos, dtype=np.float32))
    if isinstance(negs, (list, tuple)):
        negs = stack_scalars([n if isinstance(n, Tensor) else Tensor(np.float32(n)) for n in negs])
    if negs.shape[0] < 1:
        raise ShapeError("contrastive_loss needs at least one negative")
    pos_vec = stack_scalars([pos])
    scores = concat_vecs([pos_vec, negs])
    if temperature != 1.0:
        scores = scale(scores, 1.0 / temperature)
        pos = scale(pos, 1.0 / temperature)
    return sub(logsumexp(scores), pos)


def option_scores(fwd, params):
    """Per-option scores <F_final, W(q_pooled (+) A_l)> as a list of scalars."""
    vecs = option_vectors(fwd, params)
    return [dot(fwd.f_final, take_row(vecs, l)) for l in range(vecs.shape[0])]


def loss_vq(fwd, other_fwds):
    """Video-question contrast against the other questions in the batch."""
    if not other_fwds:
        return None
    pos = dot(fwd.f_final, fwd.q_pooled)
    negs = stack_scalars([dot(fwd.f_final, o.q_pooled) for o in other_fwds])
    return contrastive_loss(pos, negs)


def loss_multichoice(episode, fwd, params, other_fwds=(), lambda_=1.0, temperature=1.0):
    """Composite multi-choice loss. Returns (total, l_vqa, l_vq-or-None)."""
    if episode.qa_mode != "multi_choice":
        raise ConfigError(f"episode {episode.video_id} is not multi_choice")
    if episode.answer_bank.shape[0] < 2:
        raise ConfigError("multi-choice episode needs at least 2 options")
    scores = option_scores(fwd, params)
    pos = scores[episode.label]
    negs = stack_scalars([s for l, s in enumerate(scores) if l != episode.label])
    l_vqa = contrastive_loss(pos, negs, temperature=temperature)
    l_q = loss_vq(fwd, list(other_fwds))
    if l_q is None:
        if lambda_ != 0.0:
            warnings.warn(
                "batch of size 1: video-question loss skipped (no negative questions)",
                RuntimeWarning,
                stacklevel=2,
            )
        return l_vqa, l_vqa, None
    total = l_vqa + scale(l_q, lambda_) if lambda_ != 0.0 else l_vqa
    return total, l_vqa, l_q


def loss_openended(
    episode, fwd, params, answer_pool, pos_index=None, other_fwds=(), lambda_=1.0, temperature=1.0
):
    """Open-ended composite loss over a candidate pool that must hold the positive.

    answer_pool is a [P x C_text] array of raw answer embeddings; pos_index
    locates the labeled answer inside it (resolved by exact row match when
    omitted).
    """
    if episode.qa_mode != "open_ended":
        raise ConfigError(f"episode {episode.video_id} is not open_ended")
    pool = np.asarray(answer_pool, dtype=np.float32)
    positive = episode.answer_bank[episode.label]
    if pos_index is None:
        hits = np.flatnonzero(np.all(pool == positive[None, :], axis=1))
        if hits.size == 0:
            raise ConfigError(f"episode {episode.video_id}: answer pool is missing the positive")
        pos_index = int(hits[0])
    if pool.shape[0] < 2:
        raise ConfigError("answer pool needs the positive plus at least one negative")
    query = matmul(concat_vecs([fwd.f_final, fwd.q_pooled]), params.w_cat_fq)
    pool_proj = matmul(Tensor(pool), params.phi_t)
    pos = dot(take_row(pool_proj, pos_index), query)
    neg_rows = [i for i in range(pool.shape[0]) if i != pos_index]
    negs = stack_scalars([dot(take_row(pool_proj, i), query) for i in neg_rows])
    l_vqa = contrastive_loss(pos, negs, temperature=temperature)
    l_q = loss_vq(fwd, list(other_fwds))
    if l_q is None:
        if lambda_ != 0.0:
            warnings.warn(
                "batch of size 1: video-question loss skipped (no negative questions)",
                RuntimeWarning,
                stacklevel=2,
            )
        return l_vqa, l_vqa, None
    total = l_vqa + scale(l_q, lambda_) if lambda_ != 0.0 else l_vqa
    return total, l_vqa, l_q


def sample_negatives(episode, batch, category_pool=None, rng=None, max_hard=4):
    """Negatives per the sampling policy.

    Multi-choice: every non-label option of the episode. Open-ended: the
    positives of the other batch episodes plus up to max_hard same-category
    answers drawn seed-deterministically from category_pool (a mapping
    category -> list of (video_id, embedding)).
    """
    if episode.qa_mode == "multi_choice":
        idx = [l for l in range(episode.answer_bank.shape[0]) if l != episode.label]
        return NegativeSet(indices=idx)
    rows = [o.answer_bank[o.label] for o in batch if o.video_id != episode.video_id]
    if category_pool:
        candidates = [
            emb for vid, emb in category_pool.get(episode.category, [])
            if vid != episode.video_id
        ]
        if candidates:
            rng = rng or np.random.default_rng(0)
            take = min(max_hard, len(candidates))
            picks = rng.choice(len(candidates), size=take, replace=False)
            rows.extend(candidates[i] for i in sorted(picks))
    if not rows:
        raise ConfigError(f"episode {episode.video_id}: no negatives available")
    return NegativeSet(embeddings=np.stack(rows).astype(np.float32))


def cosine_lr(step, total_steps, lr0):
    """lr0 * 0.5 * (1 + cos(pi * step / total_steps)); reaches 0 at the end."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def sample_token_mask(n_tokens, keep_rate, rng):
    """Bernoulli(keep_rate) per token; all-ones is reserved for evaluation."""
    if keep_rate >= 1.0:
        return np.ones(n_tokens, dtype=bool)
    return rng.random(n_tokens) < keep_rate


def _episode_loss(episode, fwd, params, other_fwds, cfg, batch, category_pool, rng):
    if episode.qa_mode == "multi_choice":
        return loss_multichoice(
            episode, fwd, params, other_fwds, lambda_=cfg.lambda_, temperature=cfg.temperature
        )
    negs = sample_negatives(episode, batch, category_pool, rng=rng)
    pool = np.concatenate([episode.answer_bank[episode.label][None, :], negs.embeddings])
    return loss_openended(
        episode,
        fwd,
        params,
        pool,
        pos_index=0,
        other_fwds=other_fwds,
        lambda_=cfg.lambda_,
        temperature=cfg.temperature,
    )


def train_step(batch, params, cfg, opt_state, step, total_steps, category_pool=None):
    """One optimizer step over a batch; returns the step metrics dict."""
    settings = cfg.settings()
    tensors = params.tensors()
    zero_grads(tensors.values())
    fwds = []
    for i, ep in enumerate(batch):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A57, step, i]))
        mask = sample_token_mask(ep.question_tokens.shape[0], cfg.mask_keep_rate, rng)
        fwds.append(forward_episode(params, ep, settings, token_mask=mask))
    totals, vqa_vals, vq_vals = [], [], []
    for i, (ep, fwd) in enumerate(zip(batch, fwds)):
        others = fwds[:i] + fwds[i + 1 :]
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xAEB, step, i]))
        total, l_vqa, l_q = _episode_loss(ep, fwd, params, others, cfg, batch, category_pool, rng)
        totals.append(total)
        vqa_vals.append(float(l_vqa.data))
        if l_q is not None:
            vq_vals.append(float(l_q.data))
    batch_loss = scale(sum_entries(stack_scalars(totals)), 1.0 / len(totals))
    loss_val = float(batch_loss.data)
    if not math.isfinite(loss_val):
        ids = [ep.video_id for ep in batch]
        raise TrainingError(f"non-finite loss {loss_val} on batch {ids}")
    backward(batch_loss)
    lr = cosine_lr(step, total_steps, cfg.lr0)
    grads = {name: t.grad for name, t in tensors.items()}
    adam_step(tensors, grads, opt_state, lr)
    return {
        "step": step,
        "lr": lr,
        "loss": loss_val,
        "l_vqa": float(np.mean(vqa_vals)),
        "l_vq": float(np.mean(vq_vals)) if vq_vals else 0.0,
    }


def build_category_pool(episodes):
    """category -> [(video_id, positive answer embedding)] for hard negatives."""
    pool = {}
    for ep in episodes:
        pool.setdefault(ep.category, []).append((ep.video_id, ep.answer_bank[ep.label]))
    return pool


def train(train_eps, val_eps, params, cfg, metrics_path=None, eval_fn=None):
    """Epoch loop with cosine LR, NDJSON metrics, and val-plateau early stop."""
    if not train_eps:
        raise ConfigError("empty training split")
    n = len(train_eps)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = steps_per_epoch * cfg.epochs
    opt_state = AdamState()
    category_pool = build_category_pool(train_eps)
    history = {"steps": [], "epochs": []}
    fh = open(metrics_path, "w") if metrics_path else None
    best_val, best_epoch = -1.0, -1
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, 0x5F1E, epoch])
            ).permutation(n)
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                if idx.size == 0:
                    continue
                batch = [train_eps[i] for i in idx]
                metrics = train_step(
                    batch, params, cfg, opt_state, step, total_steps, category_pool
                )
                history["steps"].append(metrics)
                if fh:
                    fh.write(json.dumps(metrics) + "\n")
                step += 1
            epoch_row = {"epoch": epoch}
            stop = False
            if eval_fn is not None and val_eps:
                val_acc = eval_fn(params, val_eps, cfg.settings())
                epoch_row["val_accuracy"] = val_acc
                if val_acc > best_val + 1e-9:
                    best_val, best_epoch = val_acc, epoch
                elif epoch - best_epoch >= cfg.early_stop_patience:
                    stop = True
            history["epochs"].append(epoch_row)
            if fh:
                fh.write(json.dumps(epoch_row) + "\n")
            if stop:
                break
    finally:
        if fh:
            fh.close()
    return history
