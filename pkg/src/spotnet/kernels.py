"""Dense array kernels with hand-derived gradients.

This is the only module that does array math. Every forward function
accepts a single clip ``[T, C]`` or a batch ``[B, T, C]`` (plain vectors
for the post-pooling stages) and has a matching ``*_backward`` that
consumes the cached forward inputs. float32 is the training dtype;
float64 is used when checking gradients against finite differences,
where float32 round-off would swamp the comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, NumericError


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map over the last axis: ``out[..., j] = sum_i x[..., i] w[i, j] + b[j]``."""
    if weight.ndim != 2:
        raise DimensionError(f"linear: weight must be 2-d, got shape {weight.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input has {x.shape[-1]} channels, weight expects {weight.shape[0]}"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"linear: bias shape {bias.shape} does not match {weight.shape[1]} outputs"
        )
    return x @ weight + bias


def linear_backward(
    grad: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`linear` w.r.t. input, weight and bias."""
    cin, cout = weight.shape
    grad_x = grad @ weight.T
    x2 = x.reshape(-1, cin)
    g2 = grad.reshape(-1, cout)
    grad_w = x2.T @ g2
    grad_b = g2.sum(axis=0)
    return grad_x, grad_w, grad_b


def _time_windows(x: np.ndarray, k: int) -> np.ndarray:
    """Zero-pad the time axis and return ``[..., T, k, C]`` sliding windows."""
    pad = k // 2
    widths = [(0, 0)] * x.ndim
    widths[-2] = (pad, pad)
    padded = np.pad(x, widths)
    win = sliding_window_view(padded, k, axis=-2)  # [..., T, C, k]
    return np.moveaxis(win, -1, -2)


def conv1d_same(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Temporal convolution, stride 1, zero padding: output keeps the input length.

    ``kernels`` has shape ``[k, Cin, Cout]`` with tap ``d`` multiplying the
    frame at offset ``d - (k - 1) / 2`` from the output position.
    """
    if kernels.ndim != 3:
        raise DimensionError(f"conv1d_same: kernels must be 3-d, got shape {kernels.shape}")
    k, cin, cout = kernels.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same: kernel size must be odd, got {k}")
    if x.ndim < 2 or x.shape[-1] != cin:
        raise DimensionError(
            f"conv1d_same: input shape {x.shape} does not match {cin} input channels"
        )
    if x.shape[-2] < 1:
        raise DimensionError("conv1d_same: input must contain at least one frame")
    if bias.shape != (cout,):
        raise DimensionError(
            f"conv1d_same: bias shape {bias.shape} does not match {cout} outputs"
        )
    win = _time_windows(x, k)
    flat = win.reshape(-1, k * cin) @ kernels.reshape(k * cin, cout)
    out = flat.reshape(x.shape[:-1] + (cout,))
    return out + bias


def conv1d_same_backward(
    grad: np.ndarray, x: np.ndarray, kernels: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv1d_same` w.r.t. input, kernels and bias."""
    k, cin, cout = kernels.shape
    win = _time_windows(x, k).reshape(-1, k * cin)
    g2 = grad.reshape(-1, cout)
    grad_k = (win.T @ g2).reshape(k, cin, cout)
    grad_b = g2.sum(axis=0)
    # The input gradient is the same convolution with taps reversed.
    gwin = _time_windows(grad, k).reshape(-1, k * cout)
    flipped = np.ascontiguousarray(kernels[::-1].transpose(0, 2, 1)).reshape(k * cout, cin)
    grad_x = (gwin @ flipped).reshape(x.shape)
    return grad_x, grad_k, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise ``max(0, x)``."""
    return np.maximum(x, 0)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad * (x > 0)


def dropout(
    x: np.ndarray, rate: float, training: bool, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Inverted dropout: zero entries with probability ``rate`` and rescale
    survivors by ``1 / (1 - rate)`` during training; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    out, _ = dropout_train(x, rate, rng)
    return out


def dropout_train(
    x: np.ndarray, rate: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Training-mode dropout returning ``(output, keep_mask)`` for backward."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout: rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = x.dtype.type(1.0 / (1.0 - rate))
    return x * keep * scale, keep


def dropout_backward(grad: np.ndarray, keep: np.ndarray, rate: float) -> np.ndarray:
    return grad * keep * grad.dtype.type(1.0 / (1.0 - rate))


def max_over_time(x: np.ndarray) -> np.ndarray:
    """Per-channel maximum over the time axis, removing it."""
    if x.ndim < 2:
        raise DimensionError(f"max_over_time: expected [..., T, C], got shape {x.shape}")
    if x.shape[-2] == 0:
        raise DimensionError("max_over_time: input has no frames")
    return x.max(axis=-2)


def max_over_time_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Route gradient to the (first, on ties) argmax row of each channel."""
    idx = np.argmax(x, axis=-2)
    grad_x = np.zeros_like(x)
    np.put_along_axis(grad_x, idx[..., None, :], grad[..., None, :], axis=-2)
    return grad_x


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax: logits contain non-finite values")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    """Stable logistic function, used by the offset head and its loss."""
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


@dataclass
class GradTape:
    """Backward closures recorded in forward order.

    Each entry maps the gradient flowing into an op's output to the
    gradient of its input, depositing parameter gradients into ``grads``
    as a side effect. Replaying reversed yields gradients with the same
    shapes as the parameters.
    """

    grads: dict[str, np.ndarray] = field(default_factory=dict)
    _ops: list[tuple[str, Callable[[np.ndarray], np.ndarray]]] = field(default_factory=list)

    def record(self, op_id: str, backward_fn: Callable[[np.ndarray], np.ndarray]) -> None:
        self._ops.append((op_id, backward_fn))

    def add_grad(self, name: str, value: np.ndarray) -> None:
        if name in self.grads:
            self.grads[name] = self.grads[name] + value
        else:
            self.grads[name] = value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Run recorded ops newest-first; returns the input gradient."""
        for _, fn in reversed(self._ops):
            grad = fn(grad)
        return grad

    @property
    def op_ids(self) -> list[str]:
        return [name for name, _ in self._ops]


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    epsilon: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            status = "ok" if e.passed else "FAIL"
            out.append(f"{e.name:<12s} max_rel_err={e.max_rel_error:.3e}  {status}")
        return out


def grad_check(
    loss_fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    epsilon: float = 1e-6,
    tolerance: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``loss_fn`` must be deterministic in ``params`` and return
    ``(loss, grads)`` with one gradient array per parameter. The error is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``, i.e. relative
    for large gradients and absolute near zero.
    """
    _, grads = loss_fn(params)
    entries = []
    for name, arr in params.items():
        analytic = grads[name]
        if analytic.shape != arr.shape:
            raise DimensionError(
                f"grad_check: gradient for {name} has shape {analytic.shape}, "
                f"parameter has {arr.shape}"
            )
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + epsilon
            loss_plus, _ = loss_fn(params)
            arr[idx] = orig - epsilon
            loss_minus, _ = loss_fn(params)
            arr[idx] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
        entries.append(GradCheckEntry(name, worst, worst < tolerance))
    return GradCheckReport(entries, epsilon, tolerance)
