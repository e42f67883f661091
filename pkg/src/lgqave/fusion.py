"""Gamma-weighted fusion of global and local representations, and prediction.

The blend is affine in gamma, with bit-exact boundary behavior: gamma=0
returns the global feature untouched, gamma=1 returns the cross-attention
readout. Similarities are raw signed dot products throughout; the
subjective predictor multiplies video and question similarities per option,
which can flip sign when both factors are negative - kept as written.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyInputError
from .tensor import Tensor, matmul, scale, softmax_rows, stack_vecs, take_row


@dataclass
class FusionParams:
    """Blend weight plus single-head query/key/value maps (d -> d)."""

    gamma: float
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")

    def tensors(self, prefix="fusion"):
        return {f"{prefix}.w_q": self.w_q, f"{prefix}.w_k": self.w_k, f"{prefix}.w_v": self.w_v}


def softmax_vector(v):
    """Softmax over a vector via the row kernel."""
    return take_row(softmax_rows(stack_vecs([v])), 0)


def fuse_final(f_global, locals_, p):
    """(1-gamma) * global + gamma * CrossAtt(global, locals).

    Single-head scaled dot-product attention with the global feature as the
    query and the locals as keys and values; no output projection, so a
    single local with an identity value map passes through unchanged.
    """
    if not locals_:
        raise EmptyInputError("fuse_final needs at least one local representation")
    d = f_global.shape[0]
    loc = stack_vecs(locals_)
    q = matmul(f_global, p.w_q)
    k = matmul(loc, p.w_k)
    v = matmul(loc, p.w_v)
    logits = scale(matmul(k, q), 1.0 / math.sqrt(d))
    att = softmax_vector(logits)
    readout = matmul(v, att, transpose_a=True)
    return scale(f_global, 1.0 - p.gamma) + scale(readout, p.gamma)


def predict_objective(f_final, answers_proj):
    """argmax_l <f_final, A_l>; ties break to the lowest index."""
    f = np.asarray(f_final.data if isinstance(f_final, Tensor) else f_final)
    a = np.asarray(answers_proj.data if isinstance(answers_proj, Tensor) else answers_proj)
    if a.shape[0] < 2:
        raise EmptyInputError("objective prediction needs at least 2 options")
    return int(np.argmax(a @ f))


def predict_subjective(f_final, q_pooled, answers_proj):
    """argmax_l <f_final, A_l> * <q_pooled, A_l> (element-wise product of similarities)."""
    f = np.asarray(f_final.data if isinstance(f_final, Tensor) else f_final)
    q = np.asarray(q_pooled.data if isinstance(q_pooled, Tensor) else q_pooled)
    a = np.asarray(answers_proj.data if isinstance(answers_proj, Tensor) else answers_proj)
    if a.shape[0] < 2:
        raise EmptyInputError("subjective prediction needs at least 2 options")
    return int(np.argmax((a @ f) * (a @ q)))
