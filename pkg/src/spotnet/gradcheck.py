"""Finite-difference verification of every kernel and the full loss.

Each check builds a scalar function of the tensors under test (vector
outputs are contracted with a fixed random projection), asks the kernel
for its analytic gradients, and compares against central differences.
Checks run in float64 by default; float32 needs a larger step and a
looser tolerance because the forward pass itself is only good to ~1e-7.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import NumericError
from .kernels import GradCheckReport, grad_check
from .model import (
    SpotterConfig,
    SpotterParams,
    batch_loss_and_grads,
    init_params,
    kink_margin,
)
from .utils import substream

DEFAULT_EPSILON = {np.float64: 1e-6, np.float32: 5e-3}
DEFAULT_TOLERANCE = {np.float64: 1e-5, np.float32: 1e-3}

# Configs small enough for exhaustive per-coordinate differencing while
# keeping the real kernel width. The float32 one is smaller still: the
# bigger step needed there makes kink-free sample points rarer, and the
# fewer relu units there are, the easier they are to find.
CHECK_CONFIGS = {
    np.float64: SpotterConfig(
        feature_dim=7, clip_len=11, fc1_out=6, conv1_out=5, conv2_out=4,
        fc2_out=4, num_classes=3, kernel_size=9, dropout_rate=0.1,
        regression_weight=10.0,
    ),
    np.float32: SpotterConfig(
        feature_dim=5, clip_len=7, fc1_out=4, conv1_out=4, conv2_out=3,
        fc2_out=3, num_classes=3, kernel_size=9, dropout_rate=0.1,
        regression_weight=10.0,
    ),
}


def _projection(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    return rng.normal(size=shape).astype(dtype)


def check_linear(dtype=np.float64, epsilon=None, tolerance=None, seed=0) -> GradCheckReport:
    rng = substream(seed, "gradcheck", 1)
    eps = epsilon or DEFAULT_EPSILON[dtype]
    tol = tolerance or DEFAULT_TOLERANCE[dtype]
    x = rng.normal(size=(5, 4)).astype(dtype)
    tensors = {
        "x": x,
        "weight": rng.normal(size=(4, 3)).astype(dtype),
        "bias": rng.normal(size=3).astype(dtype),
    }
    proj = _projection(rng, (5, 3), dtype)

    def loss_fn(t):
        out = kernels.linear(t["x"], t["weight"], t["bias"])
        gx, gw, gb = kernels.linear_backward(proj, t["x"], t["weight"])
        return float((out * proj).sum()), {"x": gx, "weight": gw, "bias": gb}

    return grad_check(loss_fn, tensors, eps, tol)


def check_conv1d(dtype=np.float64, epsilon=None, tolerance=None, seed=0) -> GradCheckReport:
    rng = substream(seed, "gradcheck", 2)
    eps = epsilon or DEFAULT_EPSILON[dtype]
    tol = tolerance or DEFAULT_TOLERANCE[dtype]
    tensors = {
        "x": rng.normal(size=(7, 3)).astype(dtype),
        "kernels": rng.normal(size=(5, 3, 2)).astype(dtype),
        "bias": rng.normal(size=2).astype(dtype),
    }
    proj = _projection(rng, (7, 2), dtype)

    def loss_fn(t):
        out = kernels.conv1d_same(t["x"], t["kernels"], t["bias"])
        gx, gk, gb = kernels.conv1d_same_backward(proj, t["x"], t["kernels"])
        return float((out * proj).sum()), {"x": gx, "kernels": gk, "bias": gb}

    return grad_check(loss_fn, tensors, eps, tol)


def check_relu(dtype=np.float64, epsilon=None, tolerance=None, seed=0) -> GradCheckReport:
    rng = substream(seed, "gradcheck", 3)
    eps = epsilon or DEFAULT_EPSILON[dtype]
    tol = tolerance or DEFAULT_TOLERANCE[dtype]
    x = rng.normal(size=(6, 4)).astype(dtype)
    # Stay clear of the kink so central differences are valid.
    x = (x + np.sign(x) * 0.25).astype(dtype)
    proj = _projection(rng, x.shape, dtype)

    def loss_fn(t):
        out = kernels.relu(t["x"])
        return float((out * proj).sum()), {"x": kernels.relu_backward(proj, t["x"])}

    return grad_check(loss_fn, {"x": x}, eps, tol)


def check_dropout(dtype=np.float64, epsilon=None, tolerance=None, seed=0) -> GradCheckReport:
    rng = substream(seed, "gradcheck", 4)
    eps = epsilon or DEFAULT_EPSILON[dtype]
    tol = tolerance or DEFAULT_TOLERANCE[dtype]
    x = rng.normal(size=(6, 4)).astype(dtype)
    proj = _projection(rng, x.shape, dtype)
    rate = 0.3

    def loss_fn(t):
        # Re-seeding fixes the mask, making the op differentiable.
        out, keep = kernels.dropout_train(t["x"], rate, substream(7, "dropout"))
        return float((out * proj).sum()), {"x": kernels.dropout_backward(proj, keep, rate)}

    return grad_check(loss_fn, {"x": x}, eps, tol)


def check_max_over_time(dtype=np.float64, epsilon=None, tolerance=None, seed=0) -> GradCheckReport:
    rng = substream(seed, "gradcheck", 5)
    eps = epsilon or DEFAULT_EPSILON[dtype]
    tol = tolerance or DEFAULT_TOLERANCE[dtype]
    while True:
        x = rng.normal(size=(7, 4)).astype(dtype)
        top2 = np.partition(x, -2, axis=-2)[-2:, :]
        if (top2[1] - top2[0]).min() > 100 * eps:
            break
    proj = _projection(rng, (4,), dtype)

    def loss_fn(t):
        out = kernels.max_over_time(t["x"])
        return float((out * proj).sum()), {"x": kernels.max_over_time_backward(proj, t["x"])}

    return grad_check(loss_fn, {"x": x}, eps, tol)


def check_softmax(dtype=np.float64, epsilon=None, tolerance=None, seed=0) -> GradCheckReport:
    rng = substream(seed, "gradcheck", 6)
    eps = epsilon or DEFAULT_EPSILON[dtype]
    tol = tolerance or DEFAULT_TOLERANCE[dtype]
    logits = rng.normal(size=5).astype(dtype)
    proj = _projection(rng, (5,), dtype)

    def loss_fn(t):
        p = kernels.softmax(t["logits"])
        # d/dl sum(p*proj) = p * (proj - sum(p*proj))
        grad = p * (proj - float((p * proj).sum()))
        return float((p * proj).sum()), {"logits": grad.astype(dtype)}

    return grad_check(loss_fn, {"logits": logits}, eps, tol)


def _best_shift(values: np.ndarray, guard_max_tie: bool) -> float:
    """Bias shift pushing one channel's pre-activations away from zero.

    Candidates are the midpoints of gaps between sorted values plus a
    clearance beyond either extreme; the winner maximizes the smallest
    |value + shift| (and, for the layer feeding max pooling, the post-relu
    top-2 separation, so the argmax stays unique)."""
    vs = np.sort(values.astype(np.float64))
    clearance = 0.35
    cands = [clearance - vs[0], -(vs[-1] + clearance)]
    for a, b in zip(vs[:-1], vs[1:]):
        if b - a > 1e-12:
            cands.append(-(a + b) / 2.0)
    best_shift, best_margin = 0.0, -np.inf
    for d in cands:
        shifted = vs + d
        margin = float(np.abs(shifted).min())
        if guard_max_tie:
            r = np.sort(np.maximum(shifted, 0.0))
            margin = min(margin, float(r[-1] - r[-2]))
        if margin > best_margin:
            best_shift, best_margin = d, margin
    return best_shift


def _clear_kinks(params: SpotterParams, clips: np.ndarray, config: SpotterConfig) -> None:
    """Move each layer's biases so every relu input and max-pool gap at
    this sample point is well separated from the kink.

    A step of size ``epsilon`` on one parameter moves a pre-activation by
    roughly ``epsilon`` times the upstream magnitude, so margins of many
    epsilons make central differences trustworthy.
    """
    dtype = clips.dtype

    def shift_bias(name: str, pre: np.ndarray, guard_max_tie: bool = False) -> None:
        bias = params[name]
        for j in range(bias.shape[0]):
            bias[j] += dtype.type(_best_shift(pre[..., j].reshape(-1), guard_max_tie))

    pre = kernels.linear(clips, params["fc1_w"], params["fc1_b"])
    shift_bias("fc1_b", pre)
    h = kernels.relu(kernels.linear(clips, params["fc1_w"], params["fc1_b"]))
    pre = kernels.conv1d_same(h, params["conv1_k"], params["conv1_b"])
    shift_bias("conv1_b", pre)
    h = kernels.relu(kernels.conv1d_same(h, params["conv1_k"], params["conv1_b"]))
    pre = kernels.conv1d_same(h, params["conv2_k"], params["conv2_b"])
    shift_bias("conv2_b", pre, guard_max_tie=True)
    h = kernels.relu(kernels.conv1d_same(h, params["conv2_k"], params["conv2_b"]))
    pooled = kernels.max_over_time(h)
    pre = kernels.linear(pooled, params["fc2_w"], params["fc2_b"])
    shift_bias("fc2_b", pre)


def _sample_clips(config: SpotterConfig, params: SpotterParams, dtype, rng,
                  margin: float, tries: int = 50) -> np.ndarray:
    """Draw a small batch and condition the biases until the forward pass
    sits at least ``margin`` away from every relu/max kink."""
    for _ in range(tries):
        clips = rng.normal(size=(2, config.clip_len, config.feature_dim)).astype(dtype)
        _clear_kinks(params, clips, config)
        if kink_margin(params, clips, config) > margin:
            return clips
    raise NumericError("could not sample inputs away from activation kinks")


def check_full_model(
    dtype=np.float64, epsilon=None, tolerance=None, seed=0, inject_error: bool = False,
    config: SpotterConfig | None = None,
) -> GradCheckReport:
    """End-to-end loss (one foreground plus one background clip) against
    finite differences over every parameter tensor."""
    eps = epsilon or DEFAULT_EPSILON[dtype]
    tol = tolerance or DEFAULT_TOLERANCE[dtype]
    if config is None:
        config = CHECK_CONFIGS[dtype]
    rng = substream(seed, "gradcheck", 7)
    params = init_params(config, rng, dtype=dtype)
    clips = _sample_clips(config, params, dtype, rng, margin=8 * eps)
    labels = np.array([1, config.background_label])
    offsets = np.array([0.375, 0.0])

    def loss_fn(tensors):
        p = SpotterParams(dict(tensors))
        out = batch_loss_and_grads(
            p, clips, labels, offsets, config, training=False
        )
        grads = out.grads
        if inject_error:
            grads = dict(grads)
            grads["fc1_w"] = grads["fc1_w"] * 1.5 + 0.01
        return out.loss, grads

    return grad_check(loss_fn, dict(params.tensors), eps, tol)


KERNEL_CHECKS = (
    ("linear", check_linear),
    ("conv1d_same", check_conv1d),
    ("relu", check_relu),
    ("dropout", check_dropout),
    ("max_over_time", check_max_over_time),
    ("softmax", check_softmax),
)


def run_all(
    dtype=np.float64, epsilon=None, tolerance=None, seed=0, inject_error: bool = False,
) -> list[tuple[str, GradCheckReport]]:
    reports = [(name, fn(dtype, epsilon, tolerance, seed)) for name, fn in KERNEL_CHECKS]
    reports.append((
        "full_model",
        check_full_model(dtype, epsilon, tolerance, seed, inject_error=inject_error),
    ))
    return reports
