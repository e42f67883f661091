"""Parameter container and the full per-episode forward pass.

Wires frame selection, graph construction, the Q-DGT stack, and fusion into
one differentiable pipeline. Ablation switches mirror the component matrix:
sampling off windows every slot, grounding off strips object nodes, and
either representation path can be disabled (with the fused feature falling
back to the remaining one).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .frame_select import (
    N_CLIPS,
    PER_CLIP,
    TARGET_FRAMES,
    SelectorParams,
    Selection,
    run_selection,
    sample_clips,
)
from .fusion import FusionParams, fuse_final, predict_objective, predict_subjective
from .graphs import build_graph_sequence
from .numcore import MhsaParams, mhsa_params, pool, sinusoidal_table, uniform_init
from .qdgt import (
    EDGE_HEADS,
    EDGE_WIDTH,
    GRAPH_LAYERS,
    QdgtParams,
    global_repr,
    local_repr,
    mask_question,
    project_tokens,
    run_qdgt,
)
from .tensor import (
    Tensor,
    concat_vecs,
    inference_mode,
    matmul,
    mean_rows,
    param,
    stack_vecs,
    take_row,
)


@dataclass
class ModelDims:
    """Widths and head counts; defaults follow the reference sizing."""

    c_visual: int
    c_text: int
    d: int = 512
    m_max: int = 10
    n_slots: int = TARGET_FRAMES
    n_clips: int = N_CLIPS
    per_clip: int = PER_CLIP
    edge_width: int = EDGE_WIDTH
    edge_heads: int = EDGE_HEADS
    graph_layers: int = GRAPH_LAYERS
    heads: int = 8
    max_per_clip: int = 10

    def __post_init__(self):
        if self.d % 2 != 0:
            raise ConfigError(f"d={self.d} must be even (adjacency keys use d/2)")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by {self.heads} heads")
        if self.edge_width % self.edge_heads != 0:
            raise ConfigError(
                f"edge width {self.edge_width} not divisible by {self.edge_heads} heads"
            )

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class ForwardSettings:
    """Per-run pipeline switches (not trainable)."""

    beta: float = 0.4
    gamma: float = 0.9
    pool: str = "mean"
    sampling: bool = True
    grounding: bool = True
    local_repr: bool = True
    global_repr: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.pool not in ("mean", "max"):
            raise ConfigError(f"pool must be mean or max, got {self.pool!r}")
        if not (self.local_repr or self.global_repr):
            raise ConfigError("at least one of local_repr/global_repr must be enabled")


@dataclass
class ModelParams:
    """Every learnable tensor in the pipeline."""

    dims: ModelDims
    phi_e: Tensor
    phi_q: Tensor
    phi_t: Tensor
    node_proj: Tensor
    adj_k: Tensor
    adj_v: Tensor
    qdgt: QdgtParams
    fus_q: Tensor
    fus_k: Tensor
    fus_v: Tensor
    w_cat_qa: Tensor
    w_cat_fq: Tensor

    def tensors(self):
        out = {
            "phi_e": self.phi_e,
            "phi_q": self.phi_q,
            "phi_t": self.phi_t,
            "node_proj": self.node_proj,
            "adj_k": self.adj_k,
            "adj_v": self.adj_v,
        }
        out.update(self.qdgt.tensors("qdgt"))
        out.update(
            {
                "fusion.w_q": self.fus_q,
                "fusion.w_k": self.fus_k,
                "fusion.w_v": self.fus_v,
                "w_cat_qa": self.w_cat_qa,
                "w_cat_fq": self.w_cat_fq,
            }
        )
        return out

    def selector(self, beta):
        return SelectorParams(phi_e=self.phi_e, phi_q=self.phi_q, beta=beta)

    def fusion(self, gamma):
        return FusionParams(gamma=gamma, w_q=self.fus_q, w_k=self.fus_k, w_v=self.fus_v)


def _text_vision_proj(rng, c_in, d, dtype):
    """Selector projection init.

    Hard-threshold selection receives no gradient, so the scorer must be
    informative from step zero: when the widths match, start at identity
    plus small noise so untrained scoring is plain cosine cross-attention
    in the embedding space; otherwise fall back to the generic uniform init.
    """
    if c_in == d:
        w = np.eye(d, dtype=dtype) + uniform_init(rng, (d, d), dtype=dtype) * 0.05
        return w.astype(dtype)
    return uniform_init(rng, (c_in, d), dtype=dtype)


def init_model(dims, seed, dtype=np.float32):
    """Seed-deterministic parameter init (uniform +-1/sqrt(d_in) throughout)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1D]))
    d, cv, ct = dims.d, dims.c_visual, dims.c_text
    u = lambda shape: param(uniform_init(rng, shape, dtype=dtype), dtype=dtype)
    phi_e = param(_text_vision_proj(rng, cv, d, dtype), dtype=dtype)
    phi_q = param(_text_vision_proj(rng, ct, d, dtype), dtype=dtype)
    phi_t = param(_text_vision_proj(rng, ct, d, dtype), dtype=dtype)
    node_proj = u((cv, d))
    adj_k = u((d, d // 2))
    adj_v = u((d, d // 2))
    qdgt = QdgtParams(
        box_embed=u((4, d)),
        graph_w=[u((d, d)) for _ in range(dims.graph_layers)],
        spatial_mhsa=mhsa_params(d, dims.heads, rng, dtype=dtype),
        temporal_mhsa=mhsa_params(d, dims.heads, rng, dtype=dtype),
        pos_embed=param(sinusoidal_table(dims.n_slots, d, dtype=dtype), dtype=dtype),
        edge_w_in_obj=u((dims.m_max, dims.edge_width)),
        edge_w_in_frame=u((1, dims.edge_width)),
        edge_mhsa=mhsa_params(dims.edge_width, dims.edge_heads, rng, dtype=dtype),
        edge_w_out_obj=param(
            uniform_init(rng, (dims.m_max, dims.edge_width), d_in=dims.edge_width, dtype=dtype),
            dtype=dtype,
        ),
        edge_w_out_frame=param(
            uniform_init(rng, (1, dims.edge_width), d_in=dims.edge_width, dtype=dtype),
            dtype=dtype,
        ),
        phi_local=u((d, d)),
        phi_qhat=u((ct, d)),
        global_mhsa=mhsa_params(d, dims.heads, rng, dtype=dtype),
    )
    return ModelParams(
        dims=dims,
        phi_e=phi_e,
        phi_q=phi_q,
        phi_t=phi_t,
        node_proj=node_proj,
        adj_k=adj_k,
        adj_v=adj_v,
        qdgt=qdgt,
        fus_q=u((d, d)),
        fus_k=u((d, d)),
        fus_v=u((d, d)),
        w_cat_qa=u((2 * d, d)),
        w_cat_fq=u((2 * d, d)),
    )


def cast_model(params, dtype):
    """Deep copy of the model at another dtype (float64 for gradient checks)."""

    def cast(t):
        return Tensor(t.data.astype(dtype), requires_grad=True, dtype=dtype)

    def cast_mhsa(p):
        return MhsaParams(p.n_heads, cast(p.w_q), cast(p.w_k), cast(p.w_v), cast(p.w_o))

    q = params.qdgt
    qdgt = QdgtParams(
        box_embed=cast(q.box_embed),
        graph_w=[cast(w) for w in q.graph_w],
        spatial_mhsa=cast_mhsa(q.spatial_mhsa),
        temporal_mhsa=cast_mhsa(q.temporal_mhsa),
        pos_embed=cast(q.pos_embed),
        edge_w_in_obj=cast(q.edge_w_in_obj),
        edge_w_in_frame=cast(q.edge_w_in_frame),
        edge_mhsa=cast_mhsa(q.edge_mhsa),
        edge_w_out_obj=cast(q.edge_w_out_obj),
        edge_w_out_frame=cast(q.edge_w_out_frame),
        phi_local=cast(q.phi_local),
        phi_qhat=cast(q.phi_qhat),
        global_mhsa=cast_mhsa(q.global_mhsa),
    )
    return ModelParams(
        dims=params.dims,
        phi_e=cast(params.phi_e),
        phi_q=cast(params.phi_q),
        phi_t=cast(params.phi_t),
        node_proj=cast(params.node_proj),
        adj_k=cast(params.adj_k),
        adj_v=cast(params.adj_v),
        qdgt=qdgt,
        fus_q=cast(params.fus_q),
        fus_k=cast(params.fus_k),
        fus_v=cast(params.fus_v),
        w_cat_qa=cast(params.w_cat_qa),
        w_cat_fq=cast(params.w_cat_fq),
    )


@dataclass
class ForwardResult:
    """Everything downstream consumers (losses, predictors, tests) need."""

    f_final: Tensor
    f_global: Tensor = None
    locals_: list = field(default_factory=list)
    q_pooled: Tensor = None
    answers_proj: Tensor = None
    z_tokens: Tensor = None
    selection: Selection = None
    slot_frames: list = field(default_factory=list)
    clips: list = field(default_factory=list)


def forward_episode(params, episode, settings, token_mask=None, selection=None):
    """Full differentiable pipeline for one episode.

    token_mask is the per-token question mask (all ones at evaluation);
    selection, when given, overrides the question-driven frame selection
    (used by ablations and text-independence checks).
    """
    dims = params.dims
    if selection is None:
        slot_frames, selection = run_selection(
            episode, params.selector(settings.beta), sampling=settings.sampling
        )
    else:
        slot_frames = sample_clips(episode.n_frames, dims.n_slots, dims.n_clips, dims.per_clip)
    clips = build_graph_sequence(
        episode,
        selection,
        slot_frames,
        params.node_proj,
        params.adj_k,
        params.adj_v,
        m_max=dims.m_max,
        per_clip=dims.per_clip,
        n_clips=dims.n_clips,
        max_per_clip=dims.max_per_clip,
        grounding=settings.grounding,
    )

    q_tokens = Tensor(episode.question_tokens)
    if token_mask is None:
        token_mask = np.ones(episode.question_tokens.shape[0], dtype=bool)
    q_hat = mask_question(q_tokens, token_mask)
    z = project_tokens(q_hat, params.qdgt.phi_qhat)

    processed, frame_vecs = run_qdgt(clips, params.adj_k, params.adj_v, params.qdgt)

    locals_ = []
    if settings.local_repr:
        for clip_graphs in processed:
            for g in clip_graphs:
                locals_.append(local_repr(g, z, params.qdgt.phi_local))

    f_global = None
    if settings.global_repr:
        f_global = global_repr(frame_vecs, z, params.qdgt, pool_mode=settings.pool)

    if f_global is not None and locals_:
        f_final = fuse_final(f_global, locals_, params.fusion(settings.gamma))
    elif f_global is not None:
        f_final = f_global
    else:
        f_final = pool(stack_vecs(locals_), "mean")

    q_tilde = matmul(q_tokens, params.phi_t)
    q_pooled = mean_rows(q_tilde)
    answers_proj = matmul(Tensor(episode.answer_bank), params.phi_t)

    return ForwardResult(
        f_final=f_final,
        f_global=f_global,
        locals_=locals_,
        q_pooled=q_pooled,
        answers_proj=answers_proj,
        z_tokens=z,
        selection=selection,
        slot_frames=slot_frames,
        clips=processed,
    )


def option_vectors(fwd, params):
    """Answer representations in the scoring space: W(q_pooled (+) A_l) per option.

    The same vectors feed the contrastive loss and both predictors, so the
    quantity optimized at training time is the quantity ranked at test time.
    """
    rows = []
    for l in range(fwd.answers_proj.shape[0]):
        cat = concat_vecs([fwd.q_pooled, take_row(fwd.answers_proj, l)])
        rows.append(matmul(cat, params.w_cat_qa))
    return stack_vecs(rows)


def predict(params, episode, settings):
    """Answer index for one episode (forward-only, question mask all ones)."""
    with inference_mode():
        fwd = forward_episode(params, episode, settings)
        vecs = option_vectors(fwd, params)
        if episode.qa_mode == "open_ended":
            return predict_subjective(fwd.f_final, fwd.q_pooled, vecs)
        return predict_objective(fwd.f_final, vecs)


def save_model(path, params):
    """Checkpoint: one npz of named arrays plus a dims header."""
    path = Path(path)
    arrays = {name: t.data for name, t in params.tensors().items()}
    np.savez(path, **arrays)
    path.with_suffix(".json").write_text(json.dumps(params.dims.to_dict()) + "\n")


def load_model(path):
    path = Path(path)
    dims = ModelDims(**json.loads(path.with_suffix(".json").read_text()))
    params = init_model(dims, seed=0)
    with np.load(path) as blob:
        for name, t in params.tensors().items():
            t.data = blob[name].astype(np.float32)
    return params
