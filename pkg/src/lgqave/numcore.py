"""Attention and pooling kernels, the finite-difference gradient oracle, and Adam.

Builds on the tape engine in lgqave.tensor; softmax_rows lives there and is
re-exported here as part of the numeric surface.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, ShapeError
from .tensor import (
    Tensor,
    backward,
    matmul,
    max_rows,
    mean_rows,
    mh_attention,
    param,
    softmax_rows,
)

__all__ = [
    "MhsaParams",
    "AdamState",
    "softmax_rows",
    "mhsa",
    "mhsa_params",
    "pool",
    "grad_check",
    "adam_step",
    "uniform_init",
    "sinusoidal_table",
]


def uniform_init(rng, shape, d_in=None, dtype=np.float32):
    """uniform(-1/sqrt(d_in), 1/sqrt(d_in)); d_in defaults to the input width."""
    if d_in is None:
        d_in = shape[0]
    bound = 1.0 / math.sqrt(d_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def sinusoidal_table(n_positions, width, dtype=np.float32):
    """Standard sin/cos position table, used as the trainable init."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(width, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    tab = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return tab.astype(dtype)


@dataclass
class MhsaParams:
    """Weights for one multi-head self-attention block (bias-free)."""

    n_heads: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    def __post_init__(self):
        d = self.w_q.shape[0]
        for w in (self.w_q, self.w_k, self.w_v, self.w_o):
            if w.shape != (d, d):
                raise ShapeError(f"MHSA weights must be square {d}x{d}, got {w.shape}")
        if self.n_heads < 1 or d % self.n_heads != 0:
            raise ShapeError(f"width {d} not divisible by {self.n_heads} heads")

    @property
    def d_in(self):
        return self.w_q.shape[0]

    @property
    def head_dim(self):
        return self.w_q.shape[0] // self.n_heads

    def tensors(self, prefix):
        return {
            f"{prefix}.w_q": self.w_q,
            f"{prefix}.w_k": self.w_k,
            f"{prefix}.w_v": self.w_v,
            f"{prefix}.w_o": self.w_o,
        }


def mhsa_params(d_in, n_heads, rng, dtype=np.float32):
    mk = lambda: param(uniform_init(rng, (d_in, d_in), dtype=dtype), dtype=dtype)
    return MhsaParams(n_heads, mk(), mk(), mk(), mk())


def mhsa(x, p, key_mask=None):
    """Scaled dot-product multi-head self-attention with output projection."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2 or x.shape[1] != p.d_in:
        raise ShapeError(f"mhsa input {x.shape} vs d_in {p.d_in}")
    q = matmul(x, p.w_q)
    k = matmul(x, p.w_k)
    v = matmul(x, p.w_v)
    core = mh_attention(q, k, v, p.n_heads, 1.0 / math.sqrt(p.head_dim), key_mask)
    return matmul(core, p.w_o)


def pool(x, mode="mean"):
    """Column-wise reduction of a matrix to a vector."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError(f"pool needs a nonempty matrix, got {x.shape}")
    if mode == "mean":
        return mean_rows(x)
    if mode == "max":
        return max_rows(x)
    raise ValueError(f"unknown pool mode {mode!r}")


def grad_check(f, x, eps=1e-4, max_coords=None, rng=None):
    """Max relative error between tape gradients and central differences.

    f is evaluated on float64 copies so the finite-difference quotient is not
    drowned by float32 rounding. When max_coords is given, a seeded sample of
    coordinates is probed instead of every entry.
    """
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    y = f(xt)
    if y.data.shape != ():
        raise ShapeError("grad_check needs a scalar-valued function")
    backward(y)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    flat = base.reshape(-1)
    n = flat.size
    if max_coords is not None and n > max_coords:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)
    else:
        coords = np.arange(n)

    worst = 0.0
    ana_flat = analytic.reshape(-1)
    for c in coords:
        for sign in (+1.0, -1.0):
            shifted = flat.copy()
            shifted[c] += sign * eps
            val = float(f(Tensor(shifted.reshape(base.shape), dtype=np.float64)).data)
            if sign > 0:
                f_plus = val
            else:
                f_minus = val
        numeric = (f_plus - f_minus) / (2.0 * eps)
        err = abs(float(ana_flat[c]) - numeric) / max(1.0, abs(float(ana_flat[c])))
        worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step count."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place on the parameter tensors."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} vs param {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.data.dtype)
    return params, state
