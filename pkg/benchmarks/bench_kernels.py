"""Benchmark: compiled kernels vs the pure numpy fallback.

Times the two hot kernels (row softmax, fused multi-head attention) on the
shapes the pipeline actually hits: 11-node graph adjacencies, clip-level
edge rows, and the 32-frame global mix. Run:

    python benchmarks/bench_kernels.py

Set LGQAVE_PURE_PY=1 to force the fallback inside a full training run.
"""

import time

import numpy as np

from lgqave import _kernels_py
from lgqave.backend import HAVE_COMPILED

try:
    from lgqave import _kernels
except ImportError:
    _kernels = None

CASES = [
    ("adjacency 11x11", "softmax", (11, 11)),
    ("edge rows 33x11", "softmax", (33, 11)),
    ("graph attn 11 nodes x64", "attn", (11, 11, 64, 8)),
    ("edge attn 33 rows x100", "attn", (33, 33, 100, 5)),
    ("edge attn 33 rows x510", "attn", (33, 33, 510, 5)),
    ("global attn 32 frames x64", "attn", (32, 32, 64, 8)),
]


def timeit(fn, repeats=2000):
    fn()  # warm
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e6  # us/call


def main():
    rng = np.random.default_rng(0)
    print(f"compiled extension available: {HAVE_COMPILED}")
    header = f"{'case':<28} {'numpy us':>10} {'compiled us':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, kind, shape in CASES:
        if kind == "softmax":
            r, c = shape
            x = rng.normal(size=(r, c)).astype(np.float32)
            mask = np.ones(c, dtype=np.uint8)
            t_py = timeit(lambda: _kernels_py.row_softmax_fwd(x, mask.astype(bool)))
            t_cy = (
                timeit(lambda: _kernels.row_softmax_fwd_f32(x, mask)) if _kernels else float("nan")
            )
        else:
            n, m, d, heads = shape
            q = rng.normal(size=(n, d)).astype(np.float32)
            k = rng.normal(size=(m, d)).astype(np.float32)
            v = rng.normal(size=(m, d)).astype(np.float32)
            mask = np.ones(m, dtype=np.uint8)
            scale = 1.0 / np.sqrt(d / heads)
            t_py = timeit(lambda: _kernels_py.mh_attn_fwd(q, k, v, heads, scale, mask.astype(bool)))
            t_cy = (
                timeit(lambda: _kernels.mh_attn_fwd_f32(q, k, v, heads, scale, mask))
                if _kernels
                else float("nan")
            )
        speed = t_py / t_cy if t_cy == t_cy else float("nan")
        print(f"{name:<28} {t_py:>10.1f} {t_cy:>12.1f} {speed:>7.2f}x")


if __name__ == "__main__":
    main()
