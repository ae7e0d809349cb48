"""The dual-head spotter: trunk assembly, losses, and checkpoint I/O.

The trunk projects per-frame features, mixes time with two same-length
convolutions, max-pools the time axis away and feeds two sibling heads:
a ``C + 1``-way classifier (the extra class is background) and a single
raw offset scalar squashed through a sigmoid when used.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, DimensionError, NumericError
from .kernels import GradTape

CHECKPOINT_MAGIC = b"RMSN"
CHECKPOINT_VERSION = 1

# Class id layout is frozen so file formats stay stable:
# goal=0, card=1, substitution=2, background=C.
CLASS_NAMES = ("goal", "card", "substitution")


def class_names(num_classes: int) -> tuple[str, ...]:
    if num_classes == len(CLASS_NAMES):
        return CLASS_NAMES
    return tuple(f"class{i}" for i in range(num_classes))


@dataclass(frozen=True)
class SpotterConfig:
    feature_dim: int = 512
    clip_len: int = 41
    fc1_out: int = 256
    conv1_out: int = 256
    conv2_out: int = 128
    fc2_out: int = 64
    num_classes: int = 3
    kernel_size: int = 9
    dropout_rate: float = 0.1
    regression_weight: float = 10.0
    # Layer activations are a recorded choice, not given by the architecture
    # table; turning them off makes the purely linear reading testable.
    use_activations: bool = True

    def __post_init__(self) -> None:
        for name in ("feature_dim", "clip_len", "fc1_out", "conv1_out",
                     "conv2_out", "fc2_out", "num_classes", "kernel_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.regression_weight < 0.0:
            raise ConfigError(f"regression_weight must be >= 0, got {self.regression_weight}")

    @property
    def background_label(self) -> int:
        return self.num_classes

    @property
    def num_logits(self) -> int:
        return self.num_classes + 1

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "SpotterConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


PARAM_ORDER = (
    "fc1_w", "fc1_b",
    "conv1_k", "conv1_b",
    "conv2_k", "conv2_b",
    "fc2_w", "fc2_b",
    "cls_w", "cls_b",
    "regr_w", "regr_b",
)


@dataclass
class SpotterParams:
    """All learnable tensors, keyed and ordered per :data:`PARAM_ORDER`."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def copy(self) -> "SpotterParams":
        return SpotterParams({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "SpotterParams":
        return SpotterParams({k: v.astype(dtype) for k, v in self.tensors.items()})

    def check_finite(self) -> None:
        for name, arr in self.tensors.items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"parameter {name} contains non-finite values")


def expected_shapes(config: SpotterConfig) -> dict[str, tuple[int, ...]]:
    k = config.kernel_size
    return {
        "fc1_w": (config.feature_dim, config.fc1_out),
        "fc1_b": (config.fc1_out,),
        "conv1_k": (k, config.fc1_out, config.conv1_out),
        "conv1_b": (config.conv1_out,),
        "conv2_k": (k, config.conv1_out, config.conv2_out),
        "conv2_b": (config.conv2_out,),
        "fc2_w": (config.conv2_out, config.fc2_out),
        "fc2_b": (config.fc2_out,),
        "cls_w": (config.fc2_out, config.num_logits),
        "cls_b": (config.num_logits,),
        "regr_w": (config.fc2_out, 1),
        "regr_b": (1,),
    }


def init_params(
    config: SpotterConfig, rng: np.random.Generator, dtype=np.float32
) -> SpotterParams:
    """Weights uniform in ``±sqrt(1 / fan_in)``, biases zero."""
    fan_in = {
        "fc1_w": config.feature_dim,
        "conv1_k": config.kernel_size * config.fc1_out,
        "conv2_k": config.kernel_size * config.conv1_out,
        "fc2_w": config.conv2_out,
        "cls_w": config.fc2_out,
        "regr_w": config.fc2_out,
    }
    params = SpotterParams()
    for name, shape in expected_shapes(config).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = np.sqrt(1.0 / fan_in[name])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


@dataclass
class ClipOutput:
    logits: np.ndarray          # [C + 1]
    probabilities: np.ndarray   # softmax of logits
    raw_offset: float           # unconstrained head output
    offset: float               # sigmoid(raw_offset), in (0, 1)


def _check_clip_shape(clips: np.ndarray, config: SpotterConfig) -> None:
    if clips.ndim not in (2, 3) or clips.shape[-2:] != (config.clip_len, config.feature_dim):
        raise DimensionError(
            f"expected clip shape [{config.clip_len}, {config.feature_dim}] "
            f"(optionally batched), got {clips.shape}"
        )


def forward_trunk(
    params: SpotterParams,
    clips: np.ndarray,
    config: SpotterConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    tape: GradTape | None = None,
) -> np.ndarray:
    """Shared trunk over ``[B, L, D]`` clips, returning the head input
    features ``[B, fc2_out]``. With ``tape`` given, backward closures are
    recorded in forward order."""
    _check_clip_shape(clips, config)
    if training and config.dropout_rate > 0.0 and rng is None:
        raise ConfigError("training-mode forward needs an rng for dropout")

    rec = tape.record if tape is not None else None

    def dense(name_w: str, name_b: str, x: np.ndarray) -> np.ndarray:
        out = kernels.linear(x, params[name_w], params[name_b])
        if rec:
            def bw(g, x=x, name_w=name_w, name_b=name_b):
                gx, gw, gb = kernels.linear_backward(g, x, params[name_w])
                tape.add_grad(name_w, gw)
                tape.add_grad(name_b, gb)
                return gx
            rec(name_w[:-2], bw)
        return out

    def conv(name_k: str, name_b: str, x: np.ndarray) -> np.ndarray:
        out = kernels.conv1d_same(x, params[name_k], params[name_b])
        if rec:
            def bw(g, x=x, name_k=name_k, name_b=name_b):
                gx, gk, gb = kernels.conv1d_same_backward(g, x, params[name_k])
                tape.add_grad(name_k, gk)
                tape.add_grad(name_b, gb)
                return gx
            rec(name_k[:-2], bw)
        return out

    def activation(x: np.ndarray) -> np.ndarray:
        if not config.use_activations:
            return x
        out = kernels.relu(x)
        if rec:
            rec("relu", lambda g, x=x: kernels.relu_backward(g, x))
        return out

    h = activation(dense("fc1_w", "fc1_b", clips))
    h = activation(conv("conv1_k", "conv1_b", h))
    h = activation(conv("conv2_k", "conv2_b", h))

    if training and config.dropout_rate > 0.0:
        h, keep = kernels.dropout_train(h, config.dropout_rate, rng)
        if rec:
            rec("dropout", lambda g, keep=keep: kernels.dropout_backward(
                g, keep, config.dropout_rate))

    pooled_in = h
    h = kernels.max_over_time(h)
    if rec:
        rec("max_over_time", lambda g, x=pooled_in: kernels.max_over_time_backward(g, x))

    return activation(dense("fc2_w", "fc2_b", h))


def forward_batch(
    params: SpotterParams,
    clips: np.ndarray,
    config: SpotterConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Full forward over ``[B, L, D]`` clips: ``(logits [B, C+1], raw [B])``."""
    feat = forward_trunk(params, clips, config, training=training, rng=rng)
    logits = kernels.linear(feat, params["cls_w"], params["cls_b"])
    raw = kernels.linear(feat, params["regr_w"], params["regr_b"])[..., 0]
    return logits, raw


def forward(
    params: SpotterParams,
    clip: np.ndarray,
    config: SpotterConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ClipOutput:
    """Single-clip forward pass returning probabilities and the squashed offset."""
    if clip.ndim != 2:
        raise DimensionError(f"forward expects a single [L, D] clip, got shape {clip.shape}")
    logits, raw = forward_batch(params, clip[None], config, training=training, rng=rng)
    logits = logits[0]
    raw_offset = float(raw[0])
    return ClipOutput(
        logits=logits,
        probabilities=kernels.softmax(logits),
        raw_offset=raw_offset,
        offset=float(kernels.sigmoid(raw_offset)),
    )


def classification_loss(probabilities: np.ndarray, label: int) -> float:
    """Cross entropy ``-log p[label]`` of an already-normalized distribution."""
    if not 0 <= label < probabilities.shape[-1]:
        raise DataError(
            f"label {label} out of range for {probabilities.shape[-1]} classes"
        )
    return float(-np.log(probabilities[label]))


def regression_loss(raw_offset: float, target: float) -> float:
    """Squared error between the squashed offset and the target in [0, 1]."""
    if not 0.0 <= target <= 1.0:
        raise DataError(f"offset target must be in [0, 1], got {target}")
    return float((kernels.sigmoid(raw_offset) - target) ** 2)


def total_loss(
    output: ClipOutput, label: int, offset: float | None,
    regression_weight: float, background_label: int,
) -> float:
    """Per-clip training loss: cross entropy plus, for foreground clips only,
    the weighted offset term."""
    loss = classification_loss(output.probabilities, label)
    if label != background_label:
        if offset is None:
            raise DataError("foreground clip is missing its offset target")
        loss += regression_weight * regression_loss(output.raw_offset, offset)
    return loss


@dataclass
class BatchLoss:
    loss: float
    cls_loss: float
    regr_loss: float
    grads: dict[str, np.ndarray]


def batch_loss_and_grads(
    params: SpotterParams,
    clips: np.ndarray,
    labels: np.ndarray,
    offsets: np.ndarray,
    config: SpotterConfig,
    training: bool = True,
    rng: np.random.Generator | None = None,
) -> BatchLoss:
    """Mean loss over a batch with gradients for every parameter.

    ``offsets`` holds the normalized offset target per clip; entries for
    background clips are ignored — their regression branch contributes
    zero loss and exactly zero gradient.
    """
    if clips.ndim != 3:
        raise DimensionError(f"expected batched clips [B, L, D], got shape {clips.shape}")
    batch = clips.shape[0]
    if labels.shape != (batch,) or offsets.shape != (batch,):
        raise DimensionError("labels/offsets must have one entry per clip")
    if np.any(labels < 0) or np.any(labels > config.background_label):
        raise DataError("labels must lie in [0, num_classes]")

    tape = GradTape()
    feat = forward_trunk(params, clips, config, training=training, rng=rng, tape=tape)
    logits = kernels.linear(feat, params["cls_w"], params["cls_b"])
    raw = kernels.linear(feat, params["regr_w"], params["regr_b"])[..., 0]
    raise_if_nonfinite(logits, "logits")

    probs = kernels.softmax(logits)
    fg = labels != config.background_label

    onehot = np.zeros_like(probs)
    onehot[np.arange(batch), labels] = 1.0
    # Clamp inside the log only: keeps the reported loss finite when a
    # probability underflows; the gradient (probs - onehot) needs no clamp.
    picked = np.maximum(probs[np.arange(batch), labels], np.finfo(probs.dtype).tiny)
    cls_losses = -np.log(picked)

    sig = kernels.sigmoid(raw)
    safe_targets = np.where(fg, offsets, 0.0)
    if np.any(fg & ((safe_targets < 0.0) | (safe_targets > 1.0))):
        raise DataError("foreground offset targets must be in [0, 1]")
    residual = np.where(fg, sig - safe_targets, 0.0)
    regr_losses = residual ** 2

    inv_b = 1.0 / batch
    grad_logits = ((probs - onehot) * inv_b).astype(logits.dtype)
    grad_raw = (
        config.regression_weight * 2.0 * residual * sig * (1.0 - sig) * inv_b
    ).astype(raw.dtype)

    gx_cls, gw_cls, gb_cls = kernels.linear_backward(grad_logits, feat, params["cls_w"])
    tape.add_grad("cls_w", gw_cls)
    tape.add_grad("cls_b", gb_cls)
    gx_regr, gw_regr, gb_regr = kernels.linear_backward(
        grad_raw[..., None], feat, params["regr_w"]
    )
    tape.add_grad("regr_w", gw_regr)
    tape.add_grad("regr_b", gb_regr)
    tape.backward(gx_cls + gx_regr)

    return BatchLoss(
        loss=float(np.mean(cls_losses) + config.regression_weight * np.mean(regr_losses)),
        cls_loss=float(np.mean(cls_losses)),
        regr_loss=float(np.mean(regr_losses)),
        grads=tape.grads,
    )


def raise_if_nonfinite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contain non-finite values")


def kink_margin(
    params: SpotterParams, clips: np.ndarray, config: SpotterConfig
) -> float:
    """Distance of the forward pass from its nearest non-smooth point.

    Finite differences are only trustworthy away from relu zero crossings
    and max-pool ties; callers resample inputs while this margin is small.
    """
    _check_clip_shape(clips, config)
    if clips.ndim == 2:
        clips = clips[None]
    margins = []
    h = kernels.linear(clips, params["fc1_w"], params["fc1_b"])
    margins.append(np.abs(h).min())
    h = kernels.relu(h) if config.use_activations else h
    h = kernels.conv1d_same(h, params["conv1_k"], params["conv1_b"])
    margins.append(np.abs(h).min())
    h = kernels.relu(h) if config.use_activations else h
    h = kernels.conv1d_same(h, params["conv2_k"], params["conv2_b"])
    margins.append(np.abs(h).min())
    h = kernels.relu(h) if config.use_activations else h
    top2 = np.partition(h, -2, axis=-2)[..., -2:, :]
    margins.append((top2[..., 1, :] - top2[..., 0, :]).min())
    pooled = kernels.max_over_time(h)
    h2 = kernels.linear(pooled, params["fc2_w"], params["fc2_b"])
    margins.append(np.abs(h2).min())
    return float(min(margins))


def save_checkpoint(path, config: SpotterConfig, params: SpotterParams) -> None:
    """Binary checkpoint: magic, version, JSON config block, then each
    tensor as a shape header plus little-endian float32 data, fixed order."""
    shapes = expected_shapes(config)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in PARAM_ORDER:
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            if arr.shape != shapes[name]:
                raise DimensionError(
                    f"checkpoint: tensor {name} has shape {arr.shape}, "
                    f"expected {shapes[name]}"
                )
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[SpotterConfig, SpotterParams]:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)

    def take(n: int, what: str) -> bytes:
        chunk = buf.read(n)
        if len(chunk) != n:
            raise DataError(f"checkpoint truncated while reading {what}")
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", take(4, "config length"))
    try:
        config = SpotterConfig.from_dict(json.loads(take(blob_len, "config")))
    except (json.JSONDecodeError, TypeError) as exc:
        raise DataError(f"checkpoint config block is invalid: {exc}") from exc

    shapes = expected_shapes(config)
    params = SpotterParams()
    for name in PARAM_ORDER:
        (ndim,) = struct.unpack("<I", take(4, f"{name} ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name} shape"))
        if shape != shapes[name]:
            raise DataError(
                f"checkpoint tensor {name} has shape {shape}, expected {shapes[name]}"
            )
        count = int(np.prod(shape))
        raw = take(4 * count, f"{name} data")
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if buf.read(1):
        raise DataError("checkpoint has trailing bytes")
    params.check_finite()
    return config, params
