"""Dense rank-<=3 tensors with reverse-mode gradients.

A Tensor wraps a numpy array (float32 by default, float64 accepted for
verification runs) plus an optional gradient buffer. Operations record a
tape of parent links and backward closures; backward() walks the tape in
reverse topological order and accumulates into .grad. Tensors are treated
as immutable values after construction; only the optimizer writes to
parameter data in place.

Reductions and softmax denominators accumulate in float64 regardless of the
storage dtype so that sums are deterministic at desk scale.
"""

import threading
from contextlib import contextmanager

import numpy as np

from .backend import mh_attn_bwd, mh_attn_fwd, row_softmax_bwd, row_softmax_fwd
from .errors import EmptyInputError, NumericError, ShapeError

# tape recording is toggled per thread so parallel forward-only evaluation
# cannot race a concurrent training thread
_STATE = threading.local()


def _grad_enabled():
    return getattr(_STATE, "grad_enabled", True)


@contextmanager
def inference_mode():
    """Disable tape recording inside the block (forward-only evaluation)."""
    prev = _grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        if isinstance(data, np.ndarray):
            self.data = data.astype(dtype, copy=False) if data.dtype != dtype else data
        else:
            self.data = np.asarray(data, dtype=dtype)
        if self.data.ndim > 3:
            raise ShapeError(f"rank {self.data.ndim} exceeds 3")
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            # fresh copy: g may alias a buffer another consumer still reads
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=np.float32):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype if not isinstance(x, np.ndarray) else x.dtype)


def param(data, dtype=np.float32):
    return Tensor(data, requires_grad=True, dtype=dtype)


def _make(data, parents, bwd):
    track = any(p.requires_grad for p in parents) and _grad_enabled()
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out._parents = parents if track else ()
    out._bwd = bwd if track else None
    return out


def _topo(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Reverse-mode sweep from a scalar root, accumulating into .grad."""
    if root.data.shape != ():
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    order = _topo(root)
    root.grad = np.ones((), dtype=root.data.dtype)
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, (a, b), None)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    out._bwd = bwd if out.requires_grad else None
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data - b.data, (a, b), None)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(-_unbroadcast(g, b.data.shape))

    out._bwd = bwd if out.requires_grad else None
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b), None)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    out._bwd = bwd if out.requires_grad else None
    return out


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    out = _make(a.data * np.asarray(c, dtype=a.data.dtype), (a,), None)

    def bwd(g):
        a.accumulate_grad(g * np.asarray(c, dtype=a.data.dtype))

    out._bwd = bwd if out.requires_grad else None
    return out


def matmul(a, b, transpose_a=False, transpose_b=False):
    """Matrix product supporting 1-D operands (promoted, then squeezed).

    Transpose flags require 2-D operands.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 2 and b.data.ndim == 2 and not transpose_a and not transpose_b:
        A, B = a.data, b.data
        if A.shape[1] != B.shape[0]:
            raise ShapeError(f"matmul inner dims {A.shape} x {B.shape}")
        out = _make(A @ B, (a, b), None)

        def bwd2(g):
            if a.requires_grad:
                a.accumulate_grad(g @ B.T)
            if b.requires_grad:
                b.accumulate_grad(A.T @ g)

        out._bwd = bwd2 if out.requires_grad else None
        return out
    a1, b1 = a.ndim == 1, b.ndim == 1
    if (transpose_a and a1) or (transpose_b and b1):
        raise ShapeError("transpose flags require 2-D operands")
    A = a.data[None, :] if a1 else a.data
    B = b.data[:, None] if b1 else b.data
    if transpose_a:
        A = A.T
    if transpose_b:
        B = B.T
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul inner dims {A.shape} x {B.shape}")
    R = A @ B
    if a1 and b1:
        data = R[0, 0]
    elif a1:
        data = R[0]
    elif b1:
        data = R[:, 0]
    else:
        data = R
    out = _make(data, (a, b), None)

    def bwd(g):
        G = np.reshape(g, R.shape)
        if a.requires_grad:
            gA = G @ B.T
            if transpose_a:
                gA = gA.T
            a.accumulate_grad(gA[0] if a1 else gA)
        if b.requires_grad:
            gB = A.T @ G
            if transpose_b:
                gB = gB.T
            b.accumulate_grad(gB[:, 0] if b1 else gB)

    out._bwd = bwd if out.requires_grad else None
    return out


def dot(u, v):
    u, v = as_tensor(u), as_tensor(v)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"dot needs equal-length vectors, got {u.shape}, {v.shape}")
    val = np.asarray(
        np.sum(u.data.astype(np.float64) * v.data.astype(np.float64)), dtype=u.data.dtype
    )
    out = _make(val, (u, v), None)

    def bwd(g):
        if u.requires_grad:
            u.accumulate_grad(g * v.data)
        if v.requires_grad:
            v.accumulate_grad(g * u.data)

    out._bwd = bwd if out.requires_grad else None
    return out


def relu(a):
    a = as_tensor(a)
    out = _make(np.maximum(a.data, 0), (a,), None)

    def bwd(g):
        a.accumulate_grad(g * (a.data > 0))

    out._bwd = bwd if out.requires_grad else None
    return out


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    # two-branch form keeps exp() arguments nonpositive
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))
    s = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    out = _make(s, (a,), None)

    def bwd(g):
        a.accumulate_grad(g * s * (1.0 - s))

    out._bwd = bwd if out.requires_grad else None
    return out


def l2norm_rows(a, eps=1e-12):
    """Scale each row to unit L2 norm; rows below eps keep a constant 1/eps scale."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("l2norm_rows needs a matrix")
    norms = np.sqrt(np.sum(a.data.astype(np.float64) ** 2, axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = (a.data / denom).astype(a.data.dtype)
    out = _make(y, (a,), None)

    def bwd(g):
        g64 = g.astype(np.float64)
        live = norms > eps
        proj = np.sum(g64 * a.data, axis=1, keepdims=True) / (denom**2)
        ga = g64 / denom - np.where(live, a.data * proj / denom, 0.0)
        a.accumulate_grad(ga.astype(a.data.dtype))

    out._bwd = bwd if out.requires_grad else None
    return out


def softmax_rows(a, col_mask=None):
    """Row softmax with max-subtraction; optional boolean key mask over columns."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs a nonempty matrix, got {a.shape}")
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax_rows input contains non-finite values")
    p = row_softmax_fwd(a.data, col_mask)
    out = _make(p, (a,), None)

    def bwd(g):
        a.accumulate_grad(row_softmax_bwd(p, g.astype(p.dtype, copy=False)))

    out._bwd = bwd if out.requires_grad else None
    return out


def mh_attention(q, k, v, n_heads, scale_factor, key_mask=None):
    """softmax(q_h k_h^T * scale) v_h per head, concatenated over heads."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention operands must be matrices")
    d = q.shape[1]
    if k.shape[1] != d or v.shape[1] != d or k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention shapes {q.shape}, {k.shape}, {v.shape}")
    if d % n_heads != 0:
        raise ShapeError(f"width {d} not divisible by {n_heads} heads")
    qd = np.ascontiguousarray(q.data)
    kd = np.ascontiguousarray(k.data)
    vd = np.ascontiguousarray(v.data)
    out_data, probs = mh_attn_fwd(qd, kd, vd, n_heads, scale_factor, key_mask)
    out = _make(out_data, (q, k, v), None)

    def bwd(g):
        gq, gk, gv = mh_attn_bwd(
            qd, kd, vd, probs, scale_factor, key_mask, np.ascontiguousarray(g)
        )
        if q.requires_grad:
            q.accumulate_grad(gq)
        if k.requires_grad:
            k.accumulate_grad(gk)
        if v.requires_grad:
            v.accumulate_grad(gv)

    out._bwd = bwd if out.requires_grad else None
    return out


def sum_entries(a):
    a = as_tensor(a)
    val = np.asarray(np.sum(a.data.astype(np.float64)), dtype=a.data.dtype)
    out = _make(val, (a,), None)

    def bwd(g):
        a.accumulate_grad(np.full_like(a.data, g))

    out._bwd = bwd if out.requires_grad else None
    return out


def mean_entries(a):
    a = as_tensor(a)
    n = a.data.size
    if n == 0:
        raise EmptyInputError("mean over empty tensor")
    val = np.asarray(np.sum(a.data.astype(np.float64)) / n, dtype=a.data.dtype)
    out = _make(val, (a,), None)

    def bwd(g):
        a.accumulate_grad(np.full_like(a.data, g / n))

    out._bwd = bwd if out.requires_grad else None
    return out


def mean_rows(a):
    """Column-wise mean of a matrix -> vector (float64 accumulation)."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] == 0:
        raise EmptyInputError(f"mean_rows needs a nonempty matrix, got {a.shape}")
    n = a.shape[0]
    val = (np.sum(a.data.astype(np.float64), axis=0) / n).astype(a.data.dtype)
    out = _make(val, (a,), None)

    def bwd(g):
        a.accumulate_grad(np.broadcast_to(g / n, a.data.shape))

    out._bwd = bwd if out.requires_grad else None
    return out


def max_rows(a):
    """Column-wise max of a matrix -> vector; gradient to first argmax."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] == 0:
        raise EmptyInputError(f"max_rows needs a nonempty matrix, got {a.shape}")
    idx = np.argmax(a.data, axis=0)
    val = a.data[idx, np.arange(a.shape[1])]
    out = _make(val, (a,), None)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[idx, np.arange(a.shape[1])] = g
        a.accumulate_grad(ga)

    out._bwd = bwd if out.requires_grad else None
    return out


def masked_mean_rows(a, row_mask):
    """Mean over rows selected by a boolean mask -> vector."""
    a = as_tensor(a)
    row_mask = np.asarray(row_mask, dtype=bool)
    if row_mask.shape != (a.shape[0],):
        raise ShapeError(f"row mask {row_mask.shape} vs matrix {a.shape}")
    k = int(row_mask.sum())
    if k == 0:
        raise EmptyInputError("masked_mean_rows with all-masked input")
    val = (np.sum(a.data[row_mask].astype(np.float64), axis=0) / k).astype(a.data.dtype)
    out = _make(val, (a,), None)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[row_mask] = g / k
        a.accumulate_grad(ga)

    out._bwd = bwd if out.requires_grad else None
    return out


def logsumexp(a):
    """log(sum(exp(v))) of a vector, max-subtracted, float64 accumulation."""
    a = as_tensor(a)
    if a.ndim != 1 or a.shape[0] == 0:
        raise EmptyInputError(f"logsumexp needs a nonempty vector, got {a.shape}")
    x = a.data.astype(np.float64)
    m = np.max(x)
    e = np.exp(x - m)
    val = np.asarray(m + np.log(np.sum(e)), dtype=a.data.dtype)
    p = (e / np.sum(e)).astype(a.data.dtype)
    out = _make(val, (a,), None)

    def bwd(g):
        a.accumulate_grad(g * p)

    out._bwd = bwd if out.requires_grad else None
    return out


def concat_vecs(parts):
    """Concatenate 1-D tensors into one vector."""
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        if p.ndim != 1:
            raise ShapeError("concat_vecs needs vectors")
    sizes = [p.shape[0] for p in parts]
    out = _make(np.concatenate([p.data for p in parts]), tuple(parts), None)

    def bwd(g):
        off = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate_grad(g[off : off + n])
            off += n

    out._bwd = bwd if out.requires_grad else None
    return out


def stack_vecs(parts):
    """Stack 1-D tensors into a matrix, one row per input."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise EmptyInputError("stack_vecs with no inputs")
    for p in parts:
        if p.ndim != 1 or p.shape != parts[0].shape:
            raise ShapeError("stack_vecs needs equal-length vectors")
    out = _make(np.stack([p.data for p in parts]), tuple(parts), None)

    def bwd(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.accumulate_grad(g[i])

    out._bwd = bwd if out.requires_grad else None
    return out


def stack_scalars(parts):
    """Stack scalar tensors into a vector."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise EmptyInputError("stack_scalars with no inputs")
    for p in parts:
        if p.data.shape != ():
            raise ShapeError("stack_scalars needs scalars")
    out = _make(np.stack([p.data for p in parts]), tuple(parts), None)

    def bwd(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.accumulate_grad(np.asarray(g[i], dtype=p.data.dtype))

    out._bwd = bwd if out.requires_grad else None
    return out


def vstack(mats):
    """Stack 2-D tensors along rows."""
    mats = [as_tensor(m) for m in mats]
    if not mats:
        raise EmptyInputError("vstack with no inputs")
    width = mats[0].shape[1]
    for m in mats:
        if m.ndim != 2 or m.shape[1] != width:
            raise ShapeError("vstack needs matrices of equal width")
    sizes = [m.shape[0] for m in mats]
    out = _make(np.concatenate([m.data for m in mats], axis=0), tuple(mats), None)

    def bwd(g):
        off = 0
        for m, n in zip(mats, sizes):
            if m.requires_grad:
                m.accumulate_grad(g[off : off + n])
            off += n

    out._bwd = bwd if out.requires_grad else None
    return out


def set_rows(base, idx, rows):
    """Constant matrix `base` with `rows` written at positions `idx`."""
    rows = as_tensor(rows)
    idx = np.asarray(idx, dtype=np.intp)
    if rows.shape != (idx.size, base.shape[1]):
        raise ShapeError(f"rows {rows.shape} vs {idx.size} slots of width {base.shape[1]}")
    data = np.array(base, dtype=rows.data.dtype, copy=True)
    data[idx] = rows.data
    out = _make(data, (rows,), None)

    def bwd(g):
        rows.accumulate_grad(g[idx])

    out._bwd = bwd if out.requires_grad else None
    return out


def take_rows(a, idx):
    """Gather rows by integer index (scatter-add on the way back)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = _make(a.data[idx], (a,), None)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a.accumulate_grad(ga)

    out._bwd = bwd if out.requires_grad else None
    return out


def take_row(a, i):
    """Single row of a matrix as a vector."""
    a = as_tensor(a)
    i = int(i)
    out = _make(a.data[i], (a,), None)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[i] = g
        a.accumulate_grad(ga)

    out._bwd = bwd if out.requires_grad else None
    return out


def pad_rows_end(a, count):
    """Append `count` zero rows to a matrix."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("pad_rows_end needs a matrix")
    z = np.zeros((count, a.shape[1]), dtype=a.data.dtype)
    out = _make(np.concatenate([a.data, z], axis=0), (a,), None)

    def bwd(g):
        a.accumulate_grad(g[: a.shape[0]])

    out._bwd = bwd if out.requires_grad else None
    return out


def where_rows(row_mask, a, fixed):
    """Rows from `a` where the mask is set, constant rows from `fixed` elsewhere."""
    a = as_tensor(a)
    row_mask = np.asarray(row_mask, dtype=bool)
    fixed = np.asarray(fixed, dtype=a.data.dtype)
    data = np.where(row_mask[:, None], a.data, fixed)
    out = _make(data, (a,), None)

    def bwd(g):
        a.accumulate_grad(np.where(row_mask[:, None], g, 0.0).astype(a.data.dtype))

    out._bwd = bwd if out.requires_grad else None
    return out
