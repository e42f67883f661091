"""Question-aware dynamic graph transformer.

Per clip: a spatial unit updates node features and rebuilds the adjacency
after every graph layer (the "dynamic" part), a 5-head edge transformer
refines the collected adjacency rows across the clip, and a temporal unit
mixes pooled frame vectors under trainable sinusoidal position embeddings.
Question tokens enter only through the masked projection Z and the
sigmoid-gated cross-modal refinement, so an all-zero token mask makes the
visual path provably text-independent (all maps are bias-free).
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError
from .graphs import build_adjacency
from .numcore import MhsaParams, mhsa, pool
from .tensor import (
    Tensor,
    masked_mean_rows,
    matmul,
    mul,
    pad_rows_end,
    relu,
    set_rows,
    sigmoid,
    softmax_rows,
    stack_vecs,
    take_row,
    take_rows,
    vstack,
)

EDGE_WIDTH = 510
EDGE_HEADS = 5
GRAPH_LAYERS = 2


@dataclass
class QdgtParams:
    """All trainable pieces of the Q-DGT stack."""

    box_embed: Tensor
    graph_w: list
    spatial_mhsa: MhsaParams
    temporal_mhsa: MhsaParams
    pos_embed: Tensor
    edge_w_in_obj: Tensor
    edge_w_in_frame: Tensor
    edge_mhsa: MhsaParams
    edge_w_out_obj: Tensor
    edge_w_out_frame: Tensor
    phi_local: Tensor
    phi_qhat: Tensor
    global_mhsa: MhsaParams

    def __post_init__(self):
        if len(self.graph_w) < 1:
            raise ShapeError("need at least one graph layer")

    def tensors(self, prefix="qdgt"):
        out = {
            f"{prefix}.box_embed": self.box_embed,
            f"{prefix}.pos_embed": self.pos_embed,
            f"{prefix}.edge_w_in_obj": self.edge_w_in_obj,
            f"{prefix}.edge_w_in_frame": self.edge_w_in_frame,
            f"{prefix}.edge_w_out_obj": self.edge_w_out_obj,
            f"{prefix}.edge_w_out_frame": self.edge_w_out_frame,
            f"{prefix}.phi_local": self.phi_local,
            f"{prefix}.phi_qhat": self.phi_qhat,
        }
        for i, w in enumerate(self.graph_w):
            out[f"{prefix}.graph_w{i}"] = w
        out.update(self.spatial_mhsa.tensors(f"{prefix}.spatial_mhsa"))
        out.update(self.temporal_mhsa.tensors(f"{prefix}.temporal_mhsa"))
        out.update(self.edge_mhsa.tensors(f"{prefix}.edge_mhsa"))
        out.update(self.global_mhsa.tensors(f"{prefix}.global_mhsa"))
        return out


def mask_question(q_tokens, token_mask):
    """Zero the rows whose mask bit is off."""
    q_tokens = q_tokens if isinstance(q_tokens, Tensor) else Tensor(q_tokens)
    token_mask = np.asarray(token_mask)
    if token_mask.shape != (q_tokens.shape[0],):
        raise ShapeError(f"token mask {token_mask.shape} vs {q_tokens.shape[0]} tokens")
    m = token_mask.astype(q_tokens.data.dtype)[:, None]
    return mul(q_tokens, Tensor(m, dtype=q_tokens.data.dtype))


def project_tokens(q_hat, phi_qhat):
    """Bias-free map of masked tokens into the visual width."""
    if q_hat.shape[1] != phi_qhat.shape[0]:
        raise ShapeError(f"token width {q_hat.shape[1]} vs projection {phi_qhat.shape}")
    return matmul(q_hat, phi_qhat)


def crossmodal_refine(feat, z_tokens):
    """feat + sum_h sigmoid(feat . z_h) z_h."""
    if feat.shape[0] != z_tokens.shape[1]:
        raise ShapeError(f"feature width {feat.shape} vs tokens {z_tokens.shape}")
    alpha = sigmoid(matmul(z_tokens, feat))
    return feat + matmul(z_tokens, alpha, transpose_a=True)


def spatial_unit(graph, phi_k, phi_v, params):
    """Box-position injection, U dynamic graph layers, then masked MHSA."""
    box = matmul(Tensor(graph.spatial), params.box_embed)
    h = graph.nodes + pad_rows_end(box, 1)
    adj = graph.adjacency
    for w_u in params.graph_w:
        h = h + relu(matmul(matmul(adj, h), w_u))
        adj = build_adjacency(h, phi_k, phi_v, graph.node_mask)
    h = h + mhsa(h, params.spatial_mhsa, key_mask=graph.node_mask)
    return replace(graph, nodes=h, adjacency=adj)


def edge_transform(clip_graphs, params):
    """Refine the clip's unmasked adjacency rows with the 5-head transformer.

    Rows are lifted to the edge width, attended across the whole clip,
    projected back per node slot, and re-softmaxed under each graph's column
    mask; the refined adjacency then remixes each graph's node features.
    The input/output projections are stored as an object-slot block plus a
    separate frame-node row so graphs padded to different widths share
    weights.
    """
    if not clip_graphs:
        return clip_graphs
    m_max = clip_graphs[0].n_nodes - 1
    w_in = vstack([take_rows(params.edge_w_in_obj, np.arange(m_max)), params.edge_w_in_frame])
    w_out = vstack([take_rows(params.edge_w_out_obj, np.arange(m_max)), params.edge_w_out_frame])
    row_idx = [np.flatnonzero(g.node_mask) for g in clip_graphs]
    flat = vstack([take_rows(g.adjacency, idx) for g, idx in zip(clip_graphs, row_idx)])
    e = matmul(flat, w_in)
    e = mhsa(e, params.edge_mhsa)
    logits = matmul(e, w_out, transpose_b=True)
    out = []
    offset = 0
    for g, idx in zip(clip_graphs, row_idx):
        block = take_rows(logits, np.arange(offset, offset + idx.size))
        offset += idx.size
        probs = softmax_rows(block, col_mask=g.node_mask)
        refined = set_rows(np.eye(g.n_nodes, dtype=np.float32), idx, probs)
        out.append(replace(g, adjacency=refined, nodes=matmul(refined, g.nodes)))
    return out


def temporal_unit(clip_graphs, params):
    """Clip-contextualized frame vectors: pooled nodes + positions + MHSA."""
    if not clip_graphs:
        return []
    pooled = [masked_mean_rows(g.nodes, g.node_mask) for g in clip_graphs]
    x = stack_vecs(pooled)
    slots = np.asarray([g.slot for g in clip_graphs], dtype=np.intp)
    x = x + take_rows(params.pos_embed, slots)
    y = x + mhsa(x, params.temporal_mhsa)
    return [take_row(y, i) for i in range(len(clip_graphs))]


def local_repr(graph, z_tokens, phi_local):
    """Pooled, projected, text-refined per-frame representation."""
    pooled = masked_mean_rows(graph.nodes, graph.node_mask)
    return crossmodal_refine(matmul(pooled, phi_local), z_tokens)


def global_repr(frame_vecs, z_tokens, params, pool_mode="mean"):
    """Attention-mixed, pooled, text-refined summary of all frame vectors."""
    x = stack_vecs(frame_vecs)
    y = mhsa(x, params.global_mhsa)
    return crossmodal_refine(pool(y, pool_mode), z_tokens)


def run_qdgt(clips, phi_k, phi_v, params):
    """Spatial + edge + temporal pass over all clips.

    Returns (processed graphs per clip, temporal frame vectors in slot order).
    """
    processed = []
    frame_vecs = []
    for clip_graphs in clips:
        staged = [spatial_unit(g, phi_k, phi_v, params) for g in clip_graphs]
        staged = edge_transform(staged, params)
        frame_vecs.extend(temporal_unit(staged, params))
        processed.append(staged)
    return processed, frame_vecs
