"""On-disk formats: binary feature files, JSON label files, and the
plain-array importer for externally extracted features."""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from .data import Event, MatchRecord
from .errors import DataError
from .model import class_names

FEATURE_MAGIC = b"RMSF"
FEATURE_VERSION = 1

_GAME_TIME_RE = re.compile(r"^([12]) - (\d{1,3}):([0-5]\d)$")


def parse_game_time(text: str) -> tuple[int, int]:
    """Parse ``"H - MM:SS"`` into (half, seconds within the half)."""
    m = _GAME_TIME_RE.match(text)
    if not m:
        raise DataError(f"bad game time {text!r}, expected 'H - MM:SS' with H in 1..2")
    half, minutes, seconds = int(m.group(1)), int(m.group(2)), int(m.group(3))
    return half, 60 * minutes + seconds


def format_game_time(half: int, seconds: float) -> str:
    whole = int(seconds)
    return f"{half} - {whole // 60:02d}:{whole % 60:02d}"


def write_features(path, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise DataError(f"feature matrix must be 2-d, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise DataError(f"{path}: truncated feature file header")
        if header[:4] != FEATURE_MAGIC:
            raise DataError(f"{path}: not a feature file (bad magic)")
        version, rows, cols = struct.unpack("<III", header[4:])
        if version != FEATURE_VERSION:
            raise DataError(f"{path}: unsupported feature file version {version}")
        payload = fh.read(4 * rows * cols)
        if len(payload) != 4 * rows * cols:
            raise DataError(f"{path}: truncated feature file payload")
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after feature payload")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


def import_plain_features(path) -> np.ndarray:
    """Read an externally produced dump: u32 ndim, u32 dims, then
    little-endian float32 data row-major."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) != 4:
            raise DataError(f"{path}: missing shape header")
        (ndim,) = struct.unpack("<I", head)
        if not 1 <= ndim <= 4:
            raise DataError(f"{path}: implausible ndim {ndim}")
        dims_raw = fh.read(4 * ndim)
        if len(dims_raw) != 4 * ndim:
            raise DataError(f"{path}: truncated shape header")
        shape = struct.unpack(f"<{ndim}I", dims_raw)
        count = int(np.prod(shape))
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise DataError(f"{path}: truncated payload for shape {shape}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def write_labels(path, match: MatchRecord, num_classes: int = 3) -> None:
    names = class_names(num_classes)
    annotations = []
    for ev in match.events:
        half, half_seconds = match.frame_to_game_time(ev.frame)
        annotations.append({
            "gameTime": format_game_time(half, half_seconds),
            "label": names[ev.label],
            "position": int(round(half_seconds * 1000)),
        })
    doc = {
        "match_id": match.match_id,
        "feature_rate": match.feature_rate,
        "half_frames": list(match.half_frames),
        "annotations": annotations,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_labels(path, num_classes: int = 3) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid label file: {exc}") from exc
    for key in ("match_id", "feature_rate", "annotations"):
        if key not in doc:
            raise DataError(f"{path}: label file missing key {key!r}")
    return doc


def load_match(feature_path, label_path, num_classes: int = 3) -> MatchRecord:
    """Load a feature file plus its label file into a validated record."""
    features = read_features(feature_path)
    doc = read_labels(label_path, num_classes)
    rate = float(doc["feature_rate"])
    if rate <= 0:
        raise DataError(f"{label_path}: feature_rate must be positive")
    half_frames = tuple(int(v) for v in doc.get("half_frames", (features.shape[0], 0)))
    if len(half_frames) != 2:
        raise DataError(f"{label_path}: half_frames must hold two counts")

    names = class_names(num_classes)
    name_to_id = {name: i for i, name in enumerate(names)}
    events = []
    for ann in doc["annotations"]:
        if "label" not in ann:
            raise DataError(f"{label_path}: annotation missing label")
        if ann["label"] not in name_to_id:
            raise DataError(f"{label_path}: unknown event label {ann['label']!r}")
        if "gameTime" not in ann:
            raise DataError(f"{label_path}: annotation missing gameTime")
        half, half_seconds = parse_game_time(ann["gameTime"])
        if "position" in ann:
            # gameTime is rounded to whole seconds; position carries the
            # exact millisecond offset when the writer knew it.
            half_seconds = float(ann["position"]) / 1000.0
        frame = int(round(half_seconds * rate))
        if half == 2:
            frame += half_frames[0]
        if frame >= features.shape[0]:
            raise DataError(
                f"{label_path}: event at frame {frame} beyond "
                f"{features.shape[0]} feature frames"
            )
        events.append(Event(frame=frame, label=name_to_id[ann["label"]], half=half))

    return MatchRecord(
        match_id=str(doc["match_id"]),
        features=features,
        events=events,
        feature_rate=rate,
        half_frames=half_frames,
    )


def save_match(directory, match: MatchRecord, num_classes: int = 3) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    feature_path = directory / f"{match.match_id}.rmsf"
    label_path = directory / f"{match.match_id}.json"
    write_features(feature_path, match.features)
    write_labels(label_path, match, num_classes)
    return feature_path, label_path


def load_split(directory, num_classes: int = 3) -> list[MatchRecord]:
    """Load every match in a split directory (paired .rmsf/.json files)."""
    directory = Path(directory)
    feature_files = sorted(directory.glob("*.rmsf"))
    if not feature_files:
        raise DataError(f"{directory}: no .rmsf feature files found")
    matches = []
    for fpath in feature_files:
        lpath = fpath.with_suffix(".json")
        if not lpath.exists():
            raise DataError(f"{fpath}: missing label file {lpath.name}")
        matches.append(load_match(fpath, lpath, num_classes))
    return matches
