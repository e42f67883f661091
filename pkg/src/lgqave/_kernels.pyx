# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled float32 kernels: row softmax and fused multi-head attention.

Same numerics as _kernels_py (max-subtracted softmax, float64 accumulators);
the python dispatcher in lgqave.backend routes float32 inputs here and
everything else to the numpy fallback.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


def row_softmax_fwd_f32(float[:, ::1] x, unsigned char[::1] col_mask):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    out_arr = np.empty((r, c), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double m, s, e
    for i in range(r):
        m = -INFINITY
        for j in range(c):
            if col_mask[j] and x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            if col_mask[j]:
                e = exp(x[i, j] - m)
                out[i, j] = <float> e
                s += e
            else:
                out[i, j] = 0.0
        for j in range(c):
            out[i, j] = <float> (out[i, j] / s)
    return out_arr


def row_softmax_bwd_f32(float[:, ::1] p, float[:, ::1] gout):
    cdef Py_ssize_t r = p.shape[0], c = p.shape[1]
    gin_arr = np.empty((r, c), dtype=np.float32)
    cdef float[:, ::1] gin = gin_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(c):
            dot += <double> p[i, j] * <double> gout[i, j]
        for j in range(c):
            gin[i, j] = <float> (<double> p[i, j] * (<double> gout[i, j] - dot))
    return gin_arr


def mh_attn_fwd_f32(float[:, ::1] q, float[:, ::1] k, float[:, ::1] v,
                    Py_ssize_t n_heads, double scale, unsigned char[::1] col_mask):
    cdef Py_ssize_t n = q.shape[0], d = q.shape[1], m = k.shape[0]
    cdef Py_ssize_t dh = d // n_heads
    out_arr = np.empty((n, d), dtype=np.float32)
    probs_arr = np.empty((n_heads, n, m), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float[:, :, ::1] probs = probs_arr
    cdef Py_ssize_t h, i, j, t, off
    cdef double acc, mx, s, e
    logits_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] logits = logits_arr
    for h in range(n_heads):
        off = h * dh
        for i in range(n):
            mx = -INFINITY
            for j in range(m):
                if col_mask[j]:
                    acc = 0.0
                    for t in range(dh):
                        acc += <double> q[i, off + t] * <double> k[j, off + t]
                    acc *= scale
                    logits[j] = acc
                    if acc > mx:
                        mx = acc
            s = 0.0
            for j in range(m):
                if col_mask[j]:
                    e = exp(logits[j] - mx)
                    probs[h, i, j] = <float> e
                    s += e
                else:
                    probs[h, i, j] = 0.0
            for j in range(m):
                probs[h, i, j] = <float> (probs[h, i, j] / s)
            for t in range(dh):
                acc = 0.0
                for j in range(m):
                    acc += <double> probs[h, i, j] * <double> v[j, off + t]
                out[i, off + t] = <float> acc
    return out_arr, probs_arr


def mh_attn_bwd_f32(float[:, ::1] q, float[:, ::1] k, float[:, ::1] v,
                    float[:, :, ::1] probs, double scale, float[:, ::1] gout):
    cdef Py_ssize_t n = q.shape[0], d = q.shape[1], m = k.shape[0]
    cdef Py_ssize_t n_heads = probs.shape[0]
    cdef Py_ssize_t dh = d // n_heads
    gq64 = np.zeros((n, d), dtype=np.float64)
    gk64 = np.zeros((m, d), dtype=np.float64)
    gv64 = np.zeros((m, d), dtype=np.float64)
    cdef double[:, ::1] gq = gq64
    cdef double[:, ::1] gk = gk64
    cdef double[:, ::1] gv = gv64
    cdef Py_ssize_t h, i, j, t, off
    cdef double acc, dot, gl
    gp_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] gp = gp_arr
    for h in range(n_heads):
        off = h * dh
        for i in range(n):
            dot = 0.0
            for j in range(m):
                acc = 0.0
                for t in range(dh):
                    acc += <double> gout[i, off + t] * <double> v[j, off + t]
                gp[j] = acc
                dot += <double> probs[h, i, j] * acc
            for j in range(m):
                gl = <double> probs[h, i, j] * (gp[j] - dot) * scale
                for t in range(dh):
                    gq[i, off + t] += gl * <double> k[j, off + t]
                    gk[j, off + t] += gl * <double> q[i, off + t]
                    gv[j, off + t] += <double> probs[h, i, j] * <double> gout[i, off + t]
    return (gq64.astype(np.float32), gk64.astype(np.float32), gv64.astype(np.float32))
