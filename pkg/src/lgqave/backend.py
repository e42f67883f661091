"""Kernel backend selection.

The hot kernels (row softmax, fused multi-head attention) exist twice: a
compiled Cython extension and a pure numpy fallback. The compiled path is
used for contiguous float32 inputs when the extension imported cleanly and
LGQAVE_PURE_PY is unset; everything else routes to numpy. Both paths share
the same numerics (float64 accumulation of softmax denominators).
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

if os.environ.get("LGQAVE_PURE_PY"):
    _compiled = None

HAVE_COMPILED = _compiled is not None


def backend_name():
    return "compiled" if HAVE_COMPILED else "python"


def _f32c(a):
    return a.dtype == np.float32 and a.flags["C_CONTIGUOUS"]


# below this q-rows*k-rows*width product, loop kernels beat BLAS dispatch
# overhead (measured in benchmarks/bench_kernels.py)
_ATTN_COMPILED_MAX_WORK = 16384


def _mask_u8(col_mask, width):
    if col_mask is None:
        return np.ones(width, dtype=np.uint8)
    return np.ascontiguousarray(col_mask, dtype=np.uint8)


def row_softmax_fwd(x, col_mask=None):
    if _compiled is not None and _f32c(x):
        return _compiled.row_softmax_fwd_f32(x, _mask_u8(col_mask, x.shape[1]))
    return _kernels_py.row_softmax_fwd(x, col_mask)


def row_softmax_bwd(p, gout):
    if _compiled is not None and _f32c(p) and _f32c(gout):
        return _compiled.row_softmax_bwd_f32(p, gout)
    return _kernels_py.row_softmax_bwd(p, gout)


def _attn_small(q, k):
    return q.shape[0] * k.shape[0] * q.shape[1] <= _ATTN_COMPILED_MAX_WORK


def mh_attn_fwd(q, k, v, n_heads, scale, col_mask=None):
    if _compiled is not None and _attn_small(q, k) and _f32c(q) and _f32c(k) and _f32c(v):
        return _compiled.mh_attn_fwd_f32(q, k, v, n_heads, scale, _mask_u8(col_mask, k.shape[0]))
    return _kernels_py.mh_attn_fwd(q, k, v, n_heads, scale, col_mask)


def mh_attn_bwd(q, k, v, probs, scale, col_mask, gout):
    if (
        _compiled is not None
        and _attn_small(q, k)
        and _f32c(q)
        and _f32c(k)
        and _f32c(v)
        and _f32c(gout)
        and probs.dtype == np.float32
    ):
        return _compiled.mh_attn_bwd_f32(q, k, v, np.ascontiguousarray(probs), scale, gout)
    return _kernels_py.mh_attn_bwd(q, k, v, probs, scale, col_mask, gout)
