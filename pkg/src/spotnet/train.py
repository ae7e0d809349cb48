"""The optimization loop: momentum SGD, warm-up plus cosine schedule,
weight decay, early stopping on validation average mAP, checkpointing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import ClipStore, MaskPolicy, MatchRecord, apply_mask, epoch_sample
from .errors import ConfigError, NumericError
from .evaluate import average_map, ground_truth_from_matches
from .infer import spot_matches
from .model import SpotterConfig, SpotterParams, batch_loss_and_grads, init_params
from .utils import substream


@dataclass
class TrainPlan:
    max_epochs: int = 50
    batch_size: int = 64
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    patience: int = 10
    n_foreground: int = 3000

    def __post_init__(self) -> None:
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("max_epochs, batch_size and patience must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.base_lr < 0 or self.weight_decay < 0:
            raise ConfigError("base_lr and weight_decay must be >= 0")
        if self.n_foreground < 1:
            raise ConfigError("n_foreground must be >= 1")


@dataclass
class OptimizerState:
    """One momentum buffer per parameter tensor."""

    velocities: dict[str, np.ndarray]
    momentum: float = 0.9
    weight_decay: float = 1e-4

    @classmethod
    def for_params(cls, params: SpotterParams, plan: TrainPlan) -> "OptimizerState":
        return cls(
            velocities={k: np.zeros_like(v) for k, v in params.tensors.items()},
            momentum=plan.momentum,
            weight_decay=plan.weight_decay,
        )


def sgd_step(
    params: SpotterParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> None:
    """``v <- m*v + g + wd*w``; ``w <- w - lr*v`` (decay folded into the
    gradient). Refuses to touch anything if any gradient is non-finite,
    leaving parameters and buffers at the last good step."""
    for name, w in params.tensors.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ConfigError(
                f"gradient for {name} has shape {g.shape}, parameter has {w.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    for name, w in params.tensors.items():
        v = state.velocities[name]
        v *= state.momentum
        v += grads[name]
        if state.weight_decay:
            v += state.weight_decay * w
        w -= (lr * v).astype(w.dtype)


def lr_at(step: int, steps_per_epoch: int, plan: TrainPlan) -> float:
    """Linear warm-up across the first epoch reaching the base rate on its
    last step, then cosine decay to zero at the end of training."""
    if steps_per_epoch < 1:
        raise ConfigError("steps_per_epoch must be >= 1")
    if step < steps_per_epoch:
        return plan.base_lr * (step + 1) / steps_per_epoch
    if plan.max_epochs <= 1:
        return plan.base_lr
    progress = (step / steps_per_epoch - 1.0) / (plan.max_epochs - 1)
    progress = min(progress, 1.0)
    return plan.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def early_stop_check(history: Sequence[float], patience: int) -> tuple[bool, int]:
    """Stop after ``patience`` consecutive epochs without strict improvement.

    Returns ``(stop, best_epoch)`` with epochs numbered from 1; ties keep
    the earliest best.
    """
    if not history:
        raise ConfigError("early stopping needs at least one epoch of history")
    best_idx = 0
    for i, value in enumerate(history):
        if value > history[best_idx]:
            best_idx = i
    return (len(history) - 1 - best_idx) >= patience, best_idx + 1


@dataclass
class EpochMetrics:
    loss: float
    cls_loss: float
    regr_loss: float
    final_lr: float
    steps: int


def train_epoch(
    params: SpotterParams,
    state: OptimizerState,
    samples: Sequence,
    store: ClipStore,
    config: SpotterConfig,
    plan: TrainPlan,
    policy: MaskPolicy | None,
    background_feats: Sequence[np.ndarray],
    mask_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
    global_step: int,
    steps_per_epoch: int,
) -> tuple[EpochMetrics, int]:
    """One pass over the epoch's samples in batches, masking eligible
    foreground clips, stepping after every batch."""
    total = cls_total = regr_total = 0.0
    count = 0
    lr = 0.0
    for base in range(0, len(samples), plan.batch_size):
        batch = samples[base:base + plan.batch_size]
        clips = np.empty((len(batch), config.clip_len, config.feature_dim), dtype=np.float32)
        labels = np.empty(len(batch), dtype=np.int64)
        offsets = np.zeros(len(batch), dtype=np.float64)
        for i, sample in enumerate(batch):
            feats = store.features(sample)
            if policy is not None and sample.is_foreground:
                feats = apply_mask(feats, sample, policy, background_feats, mask_rng)
            clips[i] = feats
            labels[i] = sample.label
            if sample.is_foreground:
                offsets[i] = sample.offset
        result = batch_loss_and_grads(
            params, clips, labels, offsets, config, training=True, rng=dropout_rng
        )
        lr = lr_at(global_step, steps_per_epoch, plan)
        sgd_step(params, result.grads, state, lr)
        global_step += 1
        total += result.loss * len(batch)
        cls_total += result.cls_loss * len(batch)
        regr_total += result.regr_loss * len(batch)
        count += len(batch)
    metrics = EpochMetrics(
        loss=total / count,
        cls_loss=cls_total / count,
        regr_loss=regr_total / count,
        final_lr=lr,
        steps=math.ceil(len(samples) / plan.batch_size),
    )
    return metrics, global_step


@dataclass
class TrainResult:
    params: SpotterParams          # best-by-validation (final when no validation)
    final_params: SpotterParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    @property
    def val_history(self) -> list[float]:
        return [rec["val_average_map"] for rec in self.history
                if rec.get("val_average_map") is not None]


def fit(
    train_matches: Sequence[MatchRecord],
    config: SpotterConfig,
    plan: TrainPlan,
    policy: MaskPolicy | None = None,
    val_matches: Sequence[MatchRecord] | None = None,
    seed: int = 0,
    deltas: Sequence[float] | None = None,
    log_fn: Callable[[dict], None] | None = None,
    drop_halftime_subs_window: float | None = 120.0,
) -> TrainResult:
    """Full training run per the standard recipe.

    Masking applies only when ``policy`` is given. With validation matches,
    the best checkpoint by validation average mAP is kept and early
    stopping uses ``plan.patience``; otherwise the final parameters win.
    """
    store = ClipStore.from_matches(
        train_matches, config.clip_len, config.num_classes,
        drop_halftime_subs_window=drop_halftime_subs_window,
    )
    background_feats = store.background_features()
    params = init_params(config, substream(seed, "init"))
    state = OptimizerState.for_params(params, plan)

    per_class = plan.n_foreground // config.num_classes
    epoch_size = per_class * config.num_classes + per_class
    steps_per_epoch = math.ceil(epoch_size / plan.batch_size)

    val_gt = ground_truth_from_matches(val_matches) if val_matches else None

    result = TrainResult(params=params, final_params=params)
    best_map = -math.inf
    global_step = 0
    for epoch in range(1, plan.max_epochs + 1):
        samples = epoch_sample(
            store.foreground, store.background, plan.n_foreground,
            config.num_classes, substream(seed, "sampling", epoch),
        )
        metrics, global_step = train_epoch(
            params, state, samples, store, config, plan, policy,
            background_feats,
            substream(seed, "masking", epoch),
            substream(seed, "dropout", epoch),
            global_step, steps_per_epoch,
        )
        record = {
            "epoch": epoch,
            "train_loss": metrics.loss,
            "train_cls_loss": metrics.cls_loss,
            "train_regr_loss": metrics.regr_loss,
            "lr_final": metrics.final_lr,
            "val_average_map": None,
        }
        if val_matches:
            preds = spot_matches(params, config, val_matches)
            report = average_map(preds, val_gt, deltas, config.num_classes)
            record["val_average_map"] = report.average_map
            if report.average_map > best_map:
                best_map = report.average_map
                result.params = params.copy()
                result.best_epoch = epoch
        result.history.append(record)
        result.stopped_epoch = epoch
        if log_fn is not None:
            log_fn(record)
        if val_matches:
            stop, _ = early_stop_check(result.val_history, plan.patience)
            if stop:
                break
    result.final_params = params
    if not val_matches:
        result.params = params
        result.best_epoch = result.stopped_epoch
    return result


def jsonl_logger(path):
    """A ``log_fn`` that appends one JSON record per epoch to ``path``."""
    fh = open(path, "a", encoding="utf-8")

    def log(record: dict) -> None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()

    return log
