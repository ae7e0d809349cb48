"""Sliding-window inference over full matches.

Windows are scored in one batched forward pass (dropout off, no masking).
A window whose argmax class is background emits nothing; any other window
emits one spot at ``start + round(sigmoid(raw) * L)`` with the softmax
probability of the winning class as its confidence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .data import MatchRecord
from .errors import DataError, DimensionError
from .model import SpotterConfig, SpotterParams, class_names, forward_batch


@dataclass(frozen=True)
class SpotPrediction:
    match_id: str
    frame: int
    seconds: float
    label: int
    class_name: str
    confidence: float


@dataclass
class VoteDensity:
    """Per-frame counts of how often stride-1 windows spotted that frame."""

    match_id: str
    counts: np.ndarray

    @property
    def total_votes(self) -> int:
        return int(self.counts.sum())


def window_starts(n_frames: int, clip_len: int, stride: int) -> list[int]:
    """Window origins covering the match; a flush-right window is added
    when the stride does not land exactly on the final position."""
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    if n_frames < clip_len:
        raise DimensionError(
            f"match has {n_frames} frames, shorter than one {clip_len}-frame window"
        )
    starts = list(range(0, n_frames - clip_len + 1, stride))
    if starts[-1] != n_frames - clip_len:
        starts.append(n_frames - clip_len)
    return starts


def _score_windows(
    params: SpotterParams,
    config: SpotterConfig,
    match: MatchRecord,
    starts: list[int],
    batch_size: int = 512,
) -> tuple[np.ndarray, np.ndarray]:
    probs = np.empty((len(starts), config.num_logits), dtype=np.float64)
    offsets = np.empty(len(starts), dtype=np.float64)
    for base in range(0, len(starts), batch_size):
        chunk = starts[base:base + batch_size]
        clips = np.stack([
            match.features[s:s + config.clip_len] for s in chunk
        ])
        logits, raw = forward_batch(params, clips, config, training=False)
        probs[base:base + len(chunk)] = kernels.softmax(logits)
        offsets[base:base + len(chunk)] = kernels.sigmoid(raw)
    return probs, offsets


def spot_match(
    params: SpotterParams,
    config: SpotterConfig,
    match: MatchRecord,
    stride: int | None = None,
    fixed_center: bool = False,
) -> list[SpotPrediction]:
    """Predictions for one match, sorted by window start; no suppression.

    ``fixed_center`` ignores the learned offset and places every spot at
    the middle of its window (the offset-free evaluation convention).
    """
    if match.features.shape[1] != config.feature_dim:
        raise DimensionError(
            f"match {match.match_id} has {match.features.shape[1]}-d features, "
            f"model expects {config.feature_dim}"
        )
    if stride is None:
        stride = config.clip_len
    starts = window_starts(match.num_frames, config.clip_len, stride)
    probs, offsets = _score_windows(params, config, match, starts)
    names = class_names(config.num_classes)

    predictions = []
    for i, start in enumerate(starts):
        label = int(np.argmax(probs[i]))
        if label == config.background_label:
            continue
        rel = 0.5 if fixed_center else float(offsets[i])
        frame = min(start + int(round(rel * config.clip_len)), match.num_frames - 1)
        predictions.append(SpotPrediction(
            match_id=match.match_id,
            frame=frame,
            seconds=frame / match.feature_rate,
            label=label,
            class_name=names[label],
            confidence=float(probs[i, label]),
        ))
    return predictions


def vote_density(
    params: SpotterParams,
    config: SpotterConfig,
    match: MatchRecord,
) -> VoteDensity:
    """Stride-1 sweep: every non-background window casts one vote at its
    predicted absolute frame."""
    preds = spot_match(params, config, match, stride=1)
    counts = np.zeros(match.num_frames, dtype=np.int64)
    for p in preds:
        counts[p.frame] += 1
    return VoteDensity(match_id=match.match_id, counts=counts)


def spot_matches(
    params: SpotterParams,
    config: SpotterConfig,
    matches,
    stride: int | None = None,
    fixed_center: bool = False,
) -> list[SpotPrediction]:
    out = []
    for match in matches:
        out.extend(spot_match(params, config, match, stride=stride,
                              fixed_center=fixed_center))
    return out


def write_predictions(path, predictions, matches=None) -> None:
    """One JSON record per line: match id, global seconds, half, class
    name, confidence; sorted by match then time, so files diff cleanly."""
    half_of = {}
    if matches is not None:
        half_of = {m.match_id: m for m in matches}
    rows = sorted(predictions, key=lambda p: (p.match_id, p.seconds, -p.confidence))
    with open(path, "w", encoding="utf-8") as fh:
        for p in rows:
            half = 1
            if p.match_id in half_of:
                half, _ = half_of[p.match_id].frame_to_game_time(p.frame)
            fh.write(json.dumps({
                "match_id": p.match_id,
                "seconds": round(p.seconds, 3),
                "half": half,
                "class": p.class_name,
                "confidence": float(p.confidence),
            }) + "\n")


def read_predictions(path, num_classes: int = 3) -> list[SpotPrediction]:
    """Parse a predictions file. The feature rate is not recorded there,
    so ``frame`` is a coarse placeholder; scoring uses ``seconds``."""
    names = class_names(num_classes)
    name_to_id = {n: i for i, n in enumerate(names)}
    preds = []
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid prediction record: {exc}") from exc
            for key in ("match_id", "seconds", "class", "confidence"):
                if key not in doc:
                    raise DataError(f"{path}:{line_no}: missing key {key!r}")
            if doc["class"] not in name_to_id:
                raise DataError(f"{path}:{line_no}: unknown class {doc['class']!r}")
            seconds = float(doc["seconds"])
            preds.append(SpotPrediction(
                match_id=str(doc["match_id"]),
                frame=int(round(seconds)),
                seconds=seconds,
                label=name_to_id[doc["class"]],
                class_name=doc["class"],
                confidence=float(doc["confidence"]),
            ))
    return preds
