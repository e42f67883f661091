"""Frame-specific spatial graphs built from grounded node features.

Each windowed frame yields m object nodes plus one frame node (always last,
always unmasked). The soft adjacency is a row softmax over projected
feature similarities; padded node rows are pinned to identity rows so the
matrix stays a valid stochastic operator.
"""

from dataclasses import dataclass, replace

import numpy as np

from .datamodel import pad_grounding
from .errors import ShapeError
from .frame_select import N_CLIPS, PER_CLIP, clip_of_slot
from .tensor import Tensor, matmul, softmax_rows, where_rows


@dataclass
class FrameGraph:
    """m+1 node features with row-stochastic adjacency for one frame."""

    nodes: Tensor
    adjacency: Tensor
    node_mask: np.ndarray
    spatial: np.ndarray
    frame_index: int
    slot: int = 0
    clip: int = 0
    score: float = 0.0

    @property
    def n_nodes(self):
        return self.node_mask.shape[0]


def assemble_nodes(rec, mask, node_proj):
    """Project padded RoI rows plus the frame feature into d-wide node rows."""
    raw = np.concatenate(
        [rec.roi_features, rec.frame_feature[None, :]], axis=0
    ).astype(np.float32)
    nodes = matmul(Tensor(raw), node_proj)
    node_mask = np.concatenate([mask, [True]])
    return nodes, node_mask


def build_adjacency(nodes, phi_k, phi_v, node_mask):
    """Row-stochastic soft adjacency; masked rows become identity rows."""
    n = nodes.shape[0]
    if node_mask.shape != (n,):
        raise ShapeError(f"node mask {node_mask.shape} vs {n} nodes")
    k = matmul(nodes, phi_k)
    v = matmul(nodes, phi_v)
    logits = matmul(k, v, transpose_b=True)
    soft = softmax_rows(logits, col_mask=node_mask)
    return where_rows(node_mask, soft, np.eye(n, dtype=np.float32))


def strip_grounding(rec):
    """The no-grounding ablation: drop all object nodes, keep the frame node."""
    c = rec.patch_embeddings.shape[1]
    return replace(
        rec,
        boxes=[],
        roi_features=np.zeros((0, c), dtype=np.float32),
        spatial_features=np.zeros((0, 4), dtype=np.float32),
    )


def build_frame_graph(rec, node_proj, phi_k, phi_v, m_max=10):
    padded, mask = pad_grounding(rec, m_max)
    nodes, node_mask = assemble_nodes(padded, mask, node_proj)
    adjacency = build_adjacency(nodes, phi_k, phi_v, node_mask)
    return FrameGraph(
        nodes=nodes,
        adjacency=adjacency,
        node_mask=node_mask,
        spatial=padded.spatial_features.astype(np.float32),
        frame_index=rec.frame_index,
    )


def build_graph_sequence(
    episode,
    selection,
    slot_frames,
    node_proj,
    phi_k,
    phi_v,
    m_max=10,
    per_clip=PER_CLIP,
    n_clips=N_CLIPS,
    max_per_clip=10,
    grounding=True,
):
    """One FrameGraph per windowed slot, grouped by clip, in temporal order.

    Clips holding more than max_per_clip graphs keep the highest-scoring
    frames (ties break toward the lower slot).
    """
    by_clip = [[] for _ in range(n_clips)]
    for slot in selection.windows:
        rec = episode.frames[slot_frames[slot]]
        if not grounding:
            rec = strip_grounding(rec)
        g = build_frame_graph(rec, node_proj, phi_k, phi_v, m_max=m_max)
        g.slot = slot
        g.clip = clip_of_slot(slot, per_clip)
        g.score = float(selection.scores[slot])
        by_clip[g.clip].append(g)
    for ci, graphs in enumerate(by_clip):
        if len(graphs) > max_per_clip:
            ranked = sorted(graphs, key=lambda g: (-g.score, g.slot))[:max_per_clip]
            by_clip[ci] = sorted(ranked, key=lambda g: g.slot)
    return by_clip
