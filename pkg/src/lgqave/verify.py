"""Gradient-oracle suites shared by the CLI gradcheck command and the tests.

Two layers: op-level checks run the generic central-difference oracle on
small random instances of each differentiable building block; the
full-model sweep backprops the multi-choice loss of a toy episode once and
then probes sampled coordinates of every parameter tensor numerically.
Everything runs in float64 so the quotients are limited by truncation, not
rounding.
"""

import warnings

import numpy as np

from .datamodel import Episode, FrameRecord
from .model import ForwardSettings, ModelDims, cast_model, forward_episode, init_model
from .numcore import MhsaParams, grad_check, mhsa, pool
from .qdgt import crossmodal_refine
from .tensor import (
    Tensor,
    backward,
    l2norm_rows,
    matmul,
    mean_entries,
    relu,
    sigmoid,
    softmax_rows,
    sum_entries,
    zero_grads,
)
from .training import loss_multichoice


def _rand(rng, *shape):
    return rng.normal(size=shape).astype(np.float64)


def op_level_checks(seed=0, eps=1e-5, instances=20):
    """Max relative error per op family over `instances` random cases."""
    rng = np.random.default_rng(seed)
    results = {}

    def run(name, make_f, make_x):
        worst = 0.0
        for _ in range(instances):
            f = make_f()
            worst = max(worst, grad_check(f, Tensor(make_x(), dtype=np.float64), eps=eps))
        results[name] = worst

    run("softmax_rows", lambda: (lambda x: mean_entries(softmax_rows(x))), lambda: _rand(rng, 4, 5))
    run("relu_matmul", lambda: _with_const(rng, lambda w: (lambda x: sum_entries(relu(matmul(x, w))))), lambda: _rand(rng, 3, 6))
    run("sigmoid", lambda: (lambda x: sum_entries(sigmoid(x))), lambda: _rand(rng, 4, 4))
    run("l2norm_rows", lambda: (lambda x: mean_entries(l2norm_rows(x))), lambda: _rand(rng, 4, 6) + 0.5)
    run("pool_mean", lambda: (lambda x: sum_entries(pool(x, "mean"))), lambda: _rand(rng, 5, 4))
    run("pool_max", lambda: (lambda x: sum_entries(pool(x, "max"))), lambda: _rand(rng, 5, 4))
    run("mhsa", lambda: _mhsa_f(rng), lambda: _rand(rng, 3, 8))
    run("crossmodal_refine", lambda: _refine_f(rng), lambda: _rand(rng, 6))
    return results


def _with_const(rng, wrap):
    w = Tensor(_rand(rng, 6, 4), dtype=np.float64)
    return wrap(w)


def _mhsa_f(rng):
    p = MhsaParams(
        2,
        *[Tensor(_rand(rng, 8, 8), requires_grad=True, dtype=np.float64) for _ in range(4)],
    )
    return lambda x: sum_entries(mhsa(x, p))


def _refine_f(rng):
    z = Tensor(_rand(rng, 3, 6), requires_grad=True, dtype=np.float64)
    return lambda x: sum_entries(crossmodal_refine(x, z))


def toy_episode(seed=11, c_vis=12, c_text=10, n_patches=6, n_objects=3, n_options=3):
    """1 frame, a few grounded objects, a small option bank."""
    rng = np.random.default_rng(seed)
    patches = rng.normal(size=(n_patches, c_vis)).astype(np.float32)
    boxes = [(0.1, 0.1, 0.4, 0.5), (0.5, 0.2, 0.9, 0.6), (0.2, 0.55, 0.7, 0.95)][:n_objects]
    roi = rng.normal(size=(n_objects, c_vis)).astype(np.float32)
    spatial = np.asarray(boxes, dtype=np.float32)
    rec = FrameRecord(0, patches, boxes, roi, spatial, patches.mean(0))
    q = rng.normal(size=(4, c_text)).astype(np.float32)
    a = rng.normal(size=(n_options, c_text)).astype(np.float32)
    return Episode("toy", [rec], q, a, "multi_choice", 1, "toy")


def full_model_check(seed=5, d=16, eps=1e-5, coords_per_tensor=8, lambda_=0.0, n_objects=3):
    """Numeric-vs-analytic sweep over every parameter tensor of a toy model.

    Returns {tensor name: max relative error}. Every tensor is probed at up
    to coords_per_tensor seeded coordinates.
    """
    ep = toy_episode(n_objects=n_objects)
    dims = ModelDims(c_visual=12, c_text=10, d=d)
    params = cast_model(init_model(dims, seed=seed), np.float64)
    settings = ForwardSettings()
    mask = np.ones(ep.question_tokens.shape[0], dtype=bool)

    def loss_value():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fwd = forward_episode(params, ep, settings, token_mask=mask)
            total, _, _ = loss_multichoice(ep, fwd, params, other_fwds=(), lambda_=lambda_)
        return total

    tensors = params.tensors()
    zero_grads(tensors.values())
    backward(loss_value())

    rng = np.random.default_rng(0)
    report = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1) if t.grad is not None else np.zeros_like(flat)
        picks = rng.choice(flat.size, size=min(coords_per_tensor, flat.size), replace=False)
        worst = 0.0
        for c in picks:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = float(loss_value().data)
            flat[c] = orig - eps
            f_minus = float(loss_value().data)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, abs(numeric - grad[c]) / max(1.0, abs(grad[c])))
        report[name] = worst
    return report


def run_gradcheck_suite(seed=0, tol_ops=1e-4, tol_model=1e-3):
    """Combined suite; returns (report dict, worst error, ok flag)."""
    report = {}
    for name, err in op_level_checks(seed=seed, instances=5).items():
        report[f"op.{name}"] = err
    for name, err in full_model_check(seed=seed + 5).items():
        report[f"model.{name}"] = err
    worst = max(report.values())
    ok = all(
        err <= (tol_ops if name.startswith("op.") else tol_model)
        for name, err in report.items()
    )
    return report, worst, ok
