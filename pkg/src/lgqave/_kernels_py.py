"""Pure numpy reference kernels.

These are the fallback implementations behind lgqave.backend; the compiled
extension (_kernels.pyx) mirrors their numerics exactly: max-subtracted
softmax with float64 accumulation of the denominators, results cast back
to the input dtype. All functions are dtype-generic (float32/float64).
"""

import numpy as np


def row_softmax_fwd(x, col_mask=None):
    """Row-wise softmax of a 2-D array; masked columns get zero mass."""
    x64 = x.astype(np.float64, copy=False)
    if col_mask is not None:
        x64 = np.where(col_mask[None, :], x64, -np.inf)
    m = np.max(x64, axis=1, keepdims=True)
    e = np.exp(x64 - m)
    if col_mask is not None:
        e = np.where(col_mask[None, :], e, 0.0)
    denom = np.sum(e, axis=1, keepdims=True)
    return (e / denom).astype(x.dtype, copy=False)


def row_softmax_bwd(p, gout):
    """Backward of row_softmax_fwd: gin = p * (gout - sum(p*gout, rows))."""
    p64 = p.astype(np.float64, copy=False)
    g64 = gout.astype(np.float64, copy=False)
    dot = np.sum(p64 * g64, axis=1, keepdims=True)
    return (p64 * (g64 - dot)).astype(p.dtype, copy=False)


def mh_attn_fwd(q, k, v, n_heads, scale, col_mask=None):
    """Fused multi-head scaled-dot-product attention.

    q: [n, d], k: [m, d], v: [m, d] with d divisible by n_heads; head h
    reads contiguous column block h*dh:(h+1)*dh. Returns (out [n, d],
    probs [H, n, m]); masked key columns receive zero attention.
    """
    n, d = q.shape
    m = k.shape[0]
    dh = d // n_heads
    qh = q.reshape(n, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(m, n_heads, dh).transpose(1, 0, 2)
    vh = v.reshape(m, n_heads, dh).transpose(1, 0, 2)
    logits = (qh @ kh.transpose(0, 2, 1)).astype(np.float64, copy=False) * scale
    if col_mask is not None:
        logits = np.where(col_mask[None, None, :], logits, -np.inf)
    mx = np.max(logits, axis=2, keepdims=True)
    e = np.exp(logits - mx)
    if col_mask is not None:
        e = np.where(col_mask[None, None, :], e, 0.0)
    probs = e / np.sum(e, axis=2, keepdims=True)
    probs = probs.astype(q.dtype, copy=False)
    out = (probs @ vh).transpose(1, 0, 2).reshape(n, d)
    return np.ascontiguousarray(out), np.ascontiguousarray(probs)


def mh_attn_bwd(q, k, v, probs, scale, col_mask, gout):
    """Backward of mh_attn_fwd. Returns (gq, gk, gv)."""
    n, d = q.shape
    m = k.shape[0]
    n_heads = probs.shape[0]
    dh = d // n_heads
    qh = q.reshape(n, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(m, n_heads, dh).transpose(1, 0, 2)
    gh = gout.reshape(n, n_heads, dh).transpose(1, 0, 2)
    p64 = probs.astype(np.float64, copy=False)
    g64 = gh.astype(np.float64, copy=False)
    v64 = v.reshape(m, n_heads, dh).transpose(1, 0, 2).astype(np.float64, copy=False)
    gv = (p64.transpose(0, 2, 1) @ g64).transpose(1, 0, 2).reshape(m, d)
    gp = g64 @ v64.transpose(0, 2, 1)
    dot = np.sum(p64 * gp, axis=2, keepdims=True)
    glog = p64 * (gp - dot) * scale
    gq = (glog @ kh.astype(np.float64, copy=False)).transpose(1, 0, 2).reshape(n, d)
    gk = (glog.transpose(0, 2, 1) @ qh.astype(np.float64, copy=False)).transpose(1, 0, 2)
    gk = gk.reshape(m, d)
    dt = q.dtype
    return gq.astype(dt, copy=False), gk.astype(dt, copy=False), gv.astype(dt, copy=False)
