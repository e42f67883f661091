import numpy as np
import pytest

from lgqave.frame_select import Selection
from lgqave.graphs import (
    assemble_nodes,
    build_adjacency,
    build_frame_graph,
    build_graph_sequence,
    strip_grounding,
)
from lgqave.datamodel import pad_grounding
from lgqave.tensor import Tensor, param
from tests.conftest import make_episode, make_frame


def _proj(rng, c, d):
    return param((rng.normal(size=(c, d)) / np.sqrt(c)).astype(np.float32))


def _adj_params(rng, d):
    return _proj(rng, d, d // 2), _proj(rng, d, d // 2)


class TestAssembleNodes:
    def test_frame_node_only_when_m0(self, rng):
        rec, mask = pad_grounding(make_frame(rng, m=0), m_max=10)
        nodes, node_mask = assemble_nodes(rec, mask, _proj(rng, 12, 8))
        assert nodes.shape == (11, 8)
        np.testing.assert_array_equal(node_mask, [False] * 10 + [True])

    def test_identical_rois_project_identically(self, rng):
        rec = make_frame(rng, m=2)
        rec.roi_features[1] = rec.roi_features[0]
        padded, mask = pad_grounding(rec, m_max=10)
        nodes, _ = assemble_nodes(padded, mask, _proj(rng, 12, 8))
        np.testing.assert_array_equal(nodes.data[0], nodes.data[1])

    def test_mask_m2(self, rng):
        rec, mask = pad_grounding(make_frame(rng, m=2), m_max=10)
        _, node_mask = assemble_nodes(rec, mask, _proj(rng, 12, 8))
        np.testing.assert_array_equal(node_mask, [1, 1] + [0] * 8 + [1])


class TestBuildAdjacency:
    def test_single_unmasked_node(self, rng):
        phi_k, phi_v = _adj_params(rng, 8)
        nodes = Tensor(rng.normal(size=(3, 8)).astype(np.float32))
        mask = np.array([False, False, True])
        adj = build_adjacency(nodes, phi_k, phi_v, mask).data
        assert adj[2, 2] == pytest.approx(1.0)
        np.testing.assert_array_equal(adj[0], np.eye(3, dtype=np.float32)[0])

    def test_identical_features_uniform(self, rng):
        phi_k, phi_v = _adj_params(rng, 8)
        row = rng.normal(size=8).astype(np.float32)
        nodes = Tensor(np.tile(row, (4, 1)))
        mask = np.array([True, True, True, False])
        adj = build_adjacency(nodes, phi_k, phi_v, mask).data
        np.testing.assert_allclose(adj[0, :3], 1 / 3, atol=1e-6)
        np.testing.assert_allclose(adj[:3, 3], 0.0)

    def test_two_node_hand_values(self):
        # identity projections on orthonormal features give logits [[1,0],[0,1]]
        eye = param(np.eye(2, dtype=np.float32))
        nodes = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32))
        mask = np.array([True, True])
        adj = build_adjacency(nodes, eye, eye, mask).data
        np.testing.assert_allclose(adj[0], [0.7310586, 0.2689414], atol=1e-6)
        np.testing.assert_allclose(adj[1], [0.2689414, 0.7310586], atol=1e-6)

    def test_row_stochastic_random(self, rng):
        phi_k, phi_v = _adj_params(rng, 8)
        for _ in range(50):
            nodes = Tensor(rng.normal(size=(6, 8)).astype(np.float32) * 3)
            mask = rng.random(6) < 0.7
            mask[-1] = True
            adj = build_adjacency(nodes, phi_k, phi_v, mask).data
            np.testing.assert_allclose(adj[mask].sum(axis=1), 1.0, atol=1e-6)
            assert (adj[mask] >= 0).all()
            # padded nodes receive zero mass from every unmasked row
            np.testing.assert_array_equal(adj[np.ix_(mask, ~mask)], 0.0)
            # masked rows are identity rows
            np.testing.assert_array_equal(adj[~mask], np.eye(6, dtype=np.float32)[~mask])

    def test_permutation_consistency(self, rng):
        phi_k, phi_v = _adj_params(rng, 8)
        nodes = rng.normal(size=(5, 8)).astype(np.float32)
        mask = np.array([True, True, False, True, True])
        adj = build_adjacency(Tensor(nodes), phi_k, phi_v, mask).data
        perm = np.array([3, 0, 4, 1, 2])
        adj_p = build_adjacency(Tensor(nodes[perm]), phi_k, phi_v, mask[perm]).data
        np.testing.assert_allclose(adj_p, adj[np.ix_(perm, perm)], atol=1e-6)


def _selection(windows, scores=None, n=32):
    s = np.zeros(n) if scores is None else np.asarray(scores, dtype=float)
    return Selection(scores=s, kept=list(windows), windows=sorted(windows))


class TestBuildGraphSequence:
    def test_grouped_by_clip(self, rng):
        ep = make_episode(rng, n_frames=32)
        phi_k, phi_v = _adj_params(rng, 8)
        clips = build_graph_sequence(
            ep, _selection([3, 4, 5]), list(range(32)), _proj(rng, 12, 8), phi_k, phi_v
        )
        counts = [len(c) for c in clips]
        assert counts == [1, 2, 0, 0, 0, 0, 0, 0]
        assert clips[0][0].slot == 3 and [g.slot for g in clips[1]] == [4, 5]

    def test_overflow_keeps_highest_scores(self, rng):
        ep = make_episode(rng, n_frames=16)
        phi_k, phi_v = _adj_params(rng, 8)
        scores = np.linspace(0, 1, 16)
        sel = Selection(scores=scores, kept=list(range(12)), windows=list(range(12)))
        clips = build_graph_sequence(
            ep,
            sel,
            list(range(16)),
            _proj(rng, 12, 8),
            phi_k,
            phi_v,
            per_clip=16,
            n_clips=1,
            max_per_clip=10,
        )
        slots = [g.slot for g in clips[0]]
        assert slots == list(range(2, 12))  # two lowest-scoring evicted

    def test_overflow_tie_breaks_lower_slot(self, rng):
        ep = make_episode(rng, n_frames=16)
        phi_k, phi_v = _adj_params(rng, 8)
        sel = Selection(scores=np.zeros(16), kept=list(range(12)), windows=list(range(12)))
        clips = build_graph_sequence(
            ep, sel, list(range(16)), _proj(rng, 12, 8), phi_k, phi_v,
            per_clip=16, n_clips=1, max_per_clip=10,
        )
        assert [g.slot for g in clips[0]] == list(range(10))

    def test_deterministic(self, rng):
        ep = make_episode(rng, n_frames=32)
        phi_k, phi_v = _adj_params(rng, 8)
        proj = _proj(rng, 12, 8)
        a = build_graph_sequence(ep, _selection([5, 9]), list(range(32)), proj, phi_k, phi_v)
        b = build_graph_sequence(ep, _selection([5, 9]), list(range(32)), proj, phi_k, phi_v)
        for ca, cb in zip(a, b):
            for ga, gb in zip(ca, cb):
                np.testing.assert_array_equal(ga.adjacency.data, gb.adjacency.data)

    def test_strip_grounding(self, rng):
        rec = make_frame(rng, m=3)
        bare = strip_grounding(rec)
        assert bare.m == 0 and bare.roi_features.shape == (0, 12)

    def test_frame_graph_invariants(self, rng):
        g = build_frame_graph(make_frame(rng, m=2), _proj(rng, 12, 8), *_adj_params(rng, 8))
        assert g.node_mask[-1]
        adj = g.adjacency.data
        np.testing.assert_allclose(adj[g.node_mask].sum(axis=1), 1.0, atol=1e-6)
