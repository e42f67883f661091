import numpy as np
import pytest

from lgqave.errors import ConfigError, EmptyInputError
from lgqave.fusion import FusionParams, fuse_final, predict_objective, predict_subjective
from lgqave.tensor import Tensor, param


def _params(rng, d=8, gamma=0.9):
    mk = lambda: param((rng.normal(size=(d, d)) / np.sqrt(d)).astype(np.float32))
    return FusionParams(gamma=gamma, w_q=mk(), w_k=mk(), w_v=mk())


def _vec(rng, d=8):
    return Tensor(rng.normal(size=d).astype(np.float32))


class TestFuseFinal:
    def test_gamma_zero_bit_exact(self, rng):
        p = _params(rng, gamma=0.0)
        g = _vec(rng)
        out = fuse_final(g, [_vec(rng), _vec(rng)], p)
        assert np.array_equal(out.data, g.data)

    def test_gamma_one_single_local_identity_values(self, rng):
        p = _params(rng, gamma=1.0)
        p.w_v.data[:] = np.eye(8, dtype=np.float32)
        local = _vec(rng)
        out = fuse_final(_vec(rng), [local], p)
        assert np.array_equal(out.data, local.data)

    def test_gamma_default_blend(self, rng):
        g = _vec(rng)
        locs = [_vec(rng), _vec(rng)]
        p0 = _params(rng, gamma=0.9)
        full = fuse_final(g, locs, p0).data
        p0.gamma = 1.0
        att = fuse_final(g, locs, p0).data
        np.testing.assert_allclose(full, 0.1 * g.data + 0.9 * att, atol=1e-6)

    def test_affine_in_gamma(self, rng):
        g = _vec(rng)
        locs = [_vec(rng), _vec(rng), _vec(rng)]
        p = _params(rng, gamma=0.0)
        f0 = fuse_final(g, locs, p).data
        p.gamma = 1.0
        f1 = fuse_final(g, locs, p).data
        p.gamma = 0.5
        fm = fuse_final(g, locs, p).data
        np.testing.assert_allclose(fm, 0.5 * f0 + 0.5 * f1, atol=1e-6)

    def test_empty_locals_rejected(self, rng):
        with pytest.raises(EmptyInputError):
            fuse_final(_vec(rng), [], _params(rng))

    def test_gamma_range_validated(self, rng):
        with pytest.raises(ConfigError):
            _params(rng, gamma=1.2)


class TestPredictObjective:
    def test_basic(self):
        a = np.array([[0.1], [0.9], [0.3]], dtype=np.float32)
        assert predict_objective(np.array([1.0], dtype=np.float32), a) == 1

    def test_tie_breaks_lowest(self):
        f = np.array([1.0, 0.0], dtype=np.float32)
        a = np.array([[1.0, 0.0], [0.5, 0.5], [1.0, 0.0]], dtype=np.float32)
        assert predict_objective(f, a) == 0

    def test_positive_scale_invariance(self, rng):
        for _ in range(50):
            f = rng.normal(size=6).astype(np.float32)
            a = rng.normal(size=(5, 6)).astype(np.float32)
            c = float(rng.uniform(0.01, 10))
            assert predict_objective(f, a) == predict_objective(c * f, a)

    def test_matches_brute_force_scan(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 65))
            f = rng.normal(size=8).astype(np.float32)
            a = rng.normal(size=(n, 8)).astype(np.float32)
            best, best_s = 0, -np.inf
            for l in range(n):
                s = float(a[l] @ f)
                if s > best_s:
                    best, best_s = l, s
            assert predict_objective(f, a) == best

    def test_needs_two_options(self, rng):
        with pytest.raises(EmptyInputError):
            predict_objective(rng.normal(size=4).astype(np.float32),
                              rng.normal(size=(1, 4)).astype(np.float32))


class TestPredictSubjective:
    def test_product_rule(self):
        f = np.array([1.0, 0.0], dtype=np.float32)
        q = np.array([0.0, 1.0], dtype=np.float32)
        a = np.array([[2.0, 1.0], [1.0, 3.0]], dtype=np.float32)
        # video scores [2,1], question scores [1,3] -> products [2,3]
        assert predict_subjective(f, q, a) == 1

    def test_equal_question_scores_reduce_to_objective(self, rng):
        f = rng.normal(size=4).astype(np.float32)
        a = rng.normal(size=(5, 4)).astype(np.float32)
        q = np.zeros(4, dtype=np.float32)
        a_adj = a.copy()
        # give every option the same positive question similarity
        q[0] = 1.0
        a_adj[:, 0] = 2.0
        assert predict_subjective(f, q, a_adj) == predict_objective(f, a_adj)

    def test_scale_invariance_both_factors(self, rng):
        for _ in range(50):
            f = rng.normal(size=6).astype(np.float32)
            q = rng.normal(size=6).astype(np.float32)
            a = rng.normal(size=(4, 6)).astype(np.float32)
            c = float(rng.uniform(0.01, 10))
            base = predict_subjective(f, q, a)
            assert predict_subjective(c * f, q, a) == base
            assert predict_subjective(f, c * q, a) == base
