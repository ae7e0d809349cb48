"""Tolerance-swept spotting metric.

For a tolerance ``delta``, a prediction is a true positive when an
unmatched ground-truth spot of its class in the same match lies within
``delta`` seconds (closest unmatched first, one-to-one). Per-class AP is
the area under the precision-recall curve with the monotone precision
envelope; mAP averages the event classes; the headline number averages
the mAP curve over the tolerance grid with the trapezoid rule.

Accumulation order is part of the contract: predictions are ranked by
descending confidence (ties by match id, then time), AP sums run over
true positives in rank order, the class mean runs in class-id order and
the trapezoid in grid order. Tests reproduce these sums exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .data import MatchRecord
from .errors import ConfigError


@dataclass(frozen=True)
class GroundTruthSpot:
    match_id: str
    seconds: float
    label: int


def default_delta_grid() -> list[float]:
    """5 s to 60 s in 5 s steps."""
    return [float(d) for d in range(5, 61, 5)]


def ground_truth_from_matches(matches: Iterable[MatchRecord]) -> list[GroundTruthSpot]:
    spots = []
    for match in matches:
        for ev in match.events:
            spots.append(GroundTruthSpot(match.match_id, match.event_seconds(ev), ev.label))
    return spots


def _ranked(predictions: Sequence) -> list:
    return sorted(predictions, key=lambda p: (-p.confidence, p.match_id, p.seconds))


def match_predictions(
    predictions: Sequence,
    ground_truth: Sequence[GroundTruthSpot],
    delta: float,
    label: int,
) -> tuple[list[bool], int]:
    """Greedy one-to-one matching for one class at one tolerance.

    Returns the true-positive flag per prediction in rank order plus the
    ground-truth count. Each ground truth can be consumed once; a
    prediction takes the closest still-unmatched spot within ``delta``.
    """
    if delta <= 0:
        raise ConfigError(f"tolerance must be positive, got {delta}")
    gt_by_match: dict[str, list[float]] = {}
    used_by_match: dict[str, list[bool]] = {}
    n_gt = 0
    for spot in ground_truth:
        if spot.label != label:
            continue
        gt_by_match.setdefault(spot.match_id, []).append(spot.seconds)
        n_gt += 1
    for mid, times in gt_by_match.items():
        times.sort()
        used_by_match[mid] = [False] * len(times)

    flags = []
    for pred in _ranked([p for p in predictions if p.label == label]):
        times = gt_by_match.get(pred.match_id)
        hit = None
        if times is not None:
            used = used_by_match[pred.match_id]
            best_dist = None
            for j, sec in enumerate(times):
                if used[j]:
                    continue
                dist = abs(pred.seconds - sec)
                if dist <= delta and (best_dist is None or dist < best_dist):
                    best_dist = dist
                    hit = j
        if hit is None:
            flags.append(False)
        else:
            used_by_match[pred.match_id][hit] = True
            flags.append(True)
    return flags, n_gt


def ap_from_flags(flags: Sequence[bool], n_gt: int) -> float:
    """All-points-interpolated AP from ranked true-positive flags."""
    if n_gt == 0:
        return 0.0
    precisions = []
    tp = 0
    for i, flag in enumerate(flags):
        if flag:
            tp += 1
        precisions.append(tp / (i + 1))
    envelope = list(precisions)
    for i in range(len(envelope) - 2, -1, -1):
        if envelope[i + 1] > envelope[i]:
            envelope[i] = envelope[i + 1]
    ap = 0.0
    tp = 0
    prev_recall = 0.0
    for i, flag in enumerate(flags):
        if not flag:
            continue
        tp += 1
        recall = tp / n_gt
        ap += (recall - prev_recall) * envelope[i]
        prev_recall = recall
    return ap


def ap_at_delta(
    predictions: Sequence,
    ground_truth: Sequence[GroundTruthSpot],
    delta: float,
    label: int,
) -> float:
    """Average precision of one class at one tolerance.

    A class with no ground truth scores 0 regardless of predictions.
    """
    flags, n_gt = match_predictions(predictions, ground_truth, delta, label)
    return ap_from_flags(flags, n_gt)


def map_at_delta(
    predictions: Sequence,
    ground_truth: Sequence[GroundTruthSpot],
    delta: float,
    num_classes: int,
) -> float:
    """Unweighted mean AP over the event classes (background has no spots)."""
    if num_classes < 1:
        raise ConfigError("num_classes must be >= 1")
    total = 0.0
    for label in range(num_classes):
        total += ap_at_delta(predictions, ground_truth, delta, label)
    return total / num_classes


@dataclass
class EvalReport:
    deltas: list[float]
    ap_per_class: list[list[float]]   # [num_classes][len(deltas)]
    map_curve: list[float]
    average_map: float
    per_class_average: list[float]
    num_classes: int


def trapezoid_mean(deltas: Sequence[float], values: Sequence[float]) -> float:
    """Area under the curve divided by the grid span."""
    area = 0.0
    for i in range(len(deltas) - 1):
        area += (deltas[i + 1] - deltas[i]) * (values[i] + values[i + 1]) * 0.5
    return area / (deltas[-1] - deltas[0])


def average_map(
    predictions: Sequence,
    ground_truth: Sequence[GroundTruthSpot],
    deltas: Sequence[float] | None = None,
    num_classes: int = 3,
) -> EvalReport:
    """mAP at every grid tolerance plus its trapezoidal mean over the grid."""
    if deltas is None:
        deltas = default_delta_grid()
    deltas = [float(d) for d in deltas]
    if len(deltas) < 2:
        raise ConfigError("tolerance grid needs at least two points")
    if any(b <= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError("tolerance grid must be strictly increasing")

    ap_rows = []
    for label in range(num_classes):
        ap_rows.append([ap_at_delta(predictions, ground_truth, d, label) for d in deltas])
    map_curve = []
    for j in range(len(deltas)):
        total = 0.0
        for label in range(num_classes):
            total += ap_rows[label][j]
        map_curve.append(total / num_classes)
    return EvalReport(
        deltas=deltas,
        ap_per_class=ap_rows,
        map_curve=map_curve,
        average_map=trapezoid_mean(deltas, map_curve),
        per_class_average=[trapezoid_mean(deltas, row) for row in ap_rows],
        num_classes=num_classes,
    )


def export_curves(report: EvalReport, out_dir, class_labels: Sequence[str] | None = None) -> dict[str, Path]:
    """Write plot-ready CSV tables plus a JSON summary; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if class_labels is None:
        class_labels = [f"class{i}" for i in range(report.num_classes)]

    map_path = out_dir / "map_curve.csv"
    with open(map_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta_s", "map"])
        for d, v in zip(report.deltas, report.map_curve):
            writer.writerow([f"{d:g}", repr(v)])

    ap_path = out_dir / "ap_per_class.csv"
    with open(ap_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta_s"] + [f"ap_{name}" for name in class_labels])
        for j, d in enumerate(report.deltas):
            writer.writerow([f"{d:g}"] + [repr(report.ap_per_class[c][j])
                                          for c in range(report.num_classes)])

    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump({
            "average_map": report.average_map,
            "deltas": report.deltas,
            "map_curve": report.map_curve,
            "per_class_average": {
                name: report.per_class_average[c] for c, name in enumerate(class_labels)
            },
        }, fh, indent=1)
        fh.write("\n")
    return {"map_curve": map_path, "ap_per_class": ap_path, "summary": summary_path}


def read_map_curve(path) -> list[tuple[float, float]]:
    """Parse an exported (delta, mAP) table back into pairs."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["delta_s", "map"]:
            raise ConfigError(f"{path}: not a mAP curve table")
        for row in reader:
            rows.append((float(row[0]), float(row[1])))
    return rows
