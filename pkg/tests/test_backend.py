"""Compiled and numpy kernel paths must agree numerically."""

import numpy as np
import pytest

from lgqave import _kernels_py
from lgqave.backend import HAVE_COMPILED

compiled = pytest.importorskip("lgqave._kernels") if HAVE_COMPILED else None

pytestmark = pytest.mark.skipif(not HAVE_COMPILED, reason="compiled extension not built")


@pytest.mark.parametrize("shape", [(1, 1), (4, 7), (33, 11), (16, 510)])
def test_row_softmax_agrees(shape, rng):
    x = (rng.normal(size=shape) * 3).astype(np.float32)
    mask = rng.random(shape[1]) < 0.8
    mask[0] = True
    a = _kernels_py.row_softmax_fwd(x, mask)
    b = compiled.row_softmax_fwd_f32(x, mask.astype(np.uint8))
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_row_softmax_bwd_agrees(rng):
    x = rng.normal(size=(6, 9)).astype(np.float32)
    p = _kernels_py.row_softmax_fwd(x, None)
    g = rng.normal(size=(6, 9)).astype(np.float32)
    np.testing.assert_allclose(
        _kernels_py.row_softmax_bwd(p, g), compiled.row_softmax_bwd_f32(p, g), atol=1e-6
    )


@pytest.mark.parametrize("heads,n,m,d", [(1, 3, 5, 8), (2, 4, 4, 8), (5, 7, 7, 20), (8, 11, 11, 64)])
def test_attention_agrees(heads, n, m, d, rng):
    q = rng.normal(size=(n, d)).astype(np.float32)
    k = rng.normal(size=(m, d)).astype(np.float32)
    v = rng.normal(size=(m, d)).astype(np.float32)
    mask = rng.random(m) < 0.8
    mask[0] = True
    scale = 1.0 / np.sqrt(d / heads)
    out_a, p_a = _kernels_py.mh_attn_fwd(q, k, v, heads, scale, mask)
    out_b, p_b = compiled.mh_attn_fwd_f32(q, k, v, heads, scale, mask.astype(np.uint8))
    np.testing.assert_allclose(out_a, out_b, atol=2e-6)
    np.testing.assert_allclose(p_a, p_b, atol=2e-6)
    g = rng.normal(size=(n, d)).astype(np.float32)
    ga = _kernels_py.mh_attn_bwd(q, k, v, p_a, scale, mask, g)
    gb = compiled.mh_attn_bwd_f32(q, k, v, np.ascontiguousarray(p_b), scale, g)
    for x, y in zip(ga, gb):
        np.testing.assert_allclose(x, y, atol=2e-5)


def test_benchmark_runs(capsys):
    import benchmarks.bench_kernels as bench

    saved = bench.CASES
    bench.CASES = saved[:2]
    try:
        bench.timeit.__defaults__ = (20,)
        bench.main()
    finally:
        bench.CASES = saved
    assert "speedup" in capsys.readouterr().out
