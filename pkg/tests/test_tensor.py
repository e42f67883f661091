"""Tape engine: per-op gradient checks and numeric hygiene."""

import numpy as np
import pytest

import lgqave.tensor as T
from lgqave.errors import ShapeError
from lgqave.numcore import grad_check
from lgqave.tensor import Tensor, backward, inference_mode

# every differentiable op, as (name, scalar-valued fn, input shape maker)
OPS = [
    ("add", lambda x, r: T.sum_entries(x + Tensor(r.normal(size=(3, 4)))), (3, 4)),
    ("add_broadcast", lambda x, r: T.sum_entries(x + Tensor(r.normal(size=(1, 4)))), (3, 4)),
    ("sub", lambda x, r: T.sum_entries(Tensor(r.normal(size=(3, 4))) - x), (3, 4)),
    ("mul", lambda x, r: T.sum_entries(x * Tensor(r.normal(size=(3, 4)))), (3, 4)),
    ("scale", lambda x, r: T.sum_entries(T.scale(x, -2.5)), (3, 4)),
    ("matmul", lambda x, r: T.sum_entries(T.matmul(x, Tensor(r.normal(size=(4, 5))))), (3, 4)),
    ("matmul_tb", lambda x, r: T.sum_entries(T.matmul(x, Tensor(r.normal(size=(5, 4))), transpose_b=True)), (3, 4)),
    ("matmul_ta", lambda x, r: T.sum_entries(T.matmul(x, Tensor(r.normal(size=(3, 5))), transpose_a=True)), (3, 4)),
    ("matvec", lambda x, r: T.sum_entries(T.matmul(x, Tensor(r.normal(size=4)))), (3, 4)),
    ("vecmat", lambda x, r: T.sum_entries(T.matmul(Tensor(r.normal(size=3)), x)), (3, 4)),
    ("dot", lambda x, r: T.dot(x, Tensor(r.normal(size=6))), (6,)),
    ("relu", lambda x, r: T.sum_entries(T.relu(x)), (4, 4)),
    ("sigmoid", lambda x, r: T.sum_entries(T.sigmoid(x)), (4, 4)),
    ("l2norm_rows", lambda x, r: T.sum_entries(T.l2norm_rows(x)), (4, 5)),
    ("softmax_rows", lambda x, r: T.sum_entries(T.softmax_rows(x) * Tensor(r.normal(size=(4, 5)))), (4, 5)),
    ("softmax_masked", lambda x, r: T.sum_entries(
        T.softmax_rows(x, col_mask=np.array([1, 1, 0, 1, 1], dtype=bool))
        * Tensor(r.normal(size=(4, 5)))
    ), (4, 5)),
    ("mh_attention", lambda x, r: T.sum_entries(
        T.mh_attention(x, x, x, n_heads=2, scale_factor=0.5)
    ), (4, 8)),
    ("mh_attention_masked", lambda x, r: T.sum_entries(
        T.mh_attention(x, x, x, 2, 0.5, key_mask=np.array([1, 0, 1, 1], dtype=bool))
    ), (4, 8)),
    ("sum_entries", lambda x, r: T.sum_entries(x), (3, 4)),
    ("mean_entries", lambda x, r: T.mean_entries(x), (3, 4)),
    ("mean_rows", lambda x, r: T.sum_entries(T.mean_rows(x)), (5, 3)),
    ("max_rows", lambda x, r: T.sum_entries(T.max_rows(x)), (5, 3)),
    ("masked_mean_rows", lambda x, r: T.sum_entries(
        T.masked_mean_rows(x, np.array([1, 0, 1, 1, 0], dtype=bool))
    ), (5, 3)),
    ("logsumexp", lambda x, r: T.logsumexp(x), (7,)),
    ("concat_vecs", lambda x, r: T.sum_entries(T.concat_vecs([x, Tensor(r.normal(size=3))])), (5,)),
    ("take_rows", lambda x, r: T.sum_entries(T.take_rows(x, np.array([0, 2, 2]))), (4, 3)),
    ("take_row", lambda x, r: T.sum_entries(T.take_row(x, 1)), (4, 3)),
    ("pad_rows_end", lambda x, r: T.sum_entries(T.pad_rows_end(x, 2) * Tensor(r.normal(size=(5, 3)))), (3, 3)),
    ("where_rows", lambda x, r: T.sum_entries(
        T.where_rows(np.array([1, 0, 1], dtype=bool), x, np.eye(3, 4, dtype=np.float32))
    ), (3, 4)),
    ("vstack", lambda x, r: T.sum_entries(T.vstack([x, Tensor(r.normal(size=(2, 4)))])), (3, 4)),
    ("set_rows", lambda x, r: T.sum_entries(
        T.set_rows(np.zeros((5, 4), dtype=np.float32), np.array([1, 3]), x)
    ), (2, 4)),
]


class ReplayRng:
    """Caches draws so repeated f() evaluations see identical constants."""

    def __init__(self, rng):
        self.rng = rng
        self.cache = []
        self.cursor = 0

    def rewind(self):
        self.cursor = 0

    def normal(self, size):
        if self.cursor == len(self.cache):
            self.cache.append(self.rng.normal(size=size))
        out = self.cache[self.cursor]
        self.cursor += 1
        return out


@pytest.mark.parametrize("name,fn,shape", OPS, ids=[o[0] for o in OPS])
def test_op_gradients(name, fn, shape):
    # >= 20 random instances per differentiable op, rel tol 1e-4 at eps 1e-4
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        replay = ReplayRng(np.random.default_rng(1000 + seed))

        def f(t):
            replay.rewind()
            return fn(t, replay)

        x = Tensor(r.normal(size=shape).astype(np.float32))
        worst = max(worst, grad_check(f, x, eps=1e-4))
    assert worst <= 1e-4, f"{name}: {worst}"


def test_backward_accumulates_on_reuse(rng):
    x = T.param(np.array([1.0, 2.0], dtype=np.float32))
    y = T.dot(x, x)  # x used twice -> grad 2x
    backward(y)
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar(rng):
    x = T.param(rng.normal(size=(2, 2)).astype(np.float32))
    with pytest.raises(ShapeError):
        backward(x + x)


def test_grad_accumulates_across_backwards(rng):
    x = T.param(np.array([3.0], dtype=np.float32))
    for _ in range(2):
        backward(T.sum_entries(x * x))
    np.testing.assert_allclose(x.grad, [12.0])


def test_inference_mode_skips_tape(rng):
    x = T.param(rng.normal(size=(2, 2)).astype(np.float32))
    with inference_mode():
        y = T.sum_entries(x * x)
    assert y._parents == () and not y.requires_grad


def test_transpose_flag_rejected_for_vectors():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros(3, dtype=np.float32)), Tensor(np.zeros((3, 3), dtype=np.float32)), transpose_a=True)


def test_rank_cap():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1), dtype=np.float32))


@pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
def test_no_nan_from_finite_inputs(rng, scale):
    x = Tensor((rng.normal(size=(6, 8)) * scale).astype(np.float32))
    outputs = [
        T.softmax_rows(x),
        T.sigmoid(x),
        T.l2norm_rows(x),
        T.relu(x),
        T.mh_attention(x, x, x, 2, 1.0),
        T.logsumexp(T.take_row(x, 0)),
    ]
    for out in outputs:
        assert np.isfinite(out.data).all()


def test_l2norm_zero_row_stays_finite():
    x = Tensor(np.zeros((2, 4), dtype=np.float32))
    out = T.l2norm_rows(x)
    assert np.isfinite(out.data).all()
    np.testing.assert_array_equal(out.data, 0)
