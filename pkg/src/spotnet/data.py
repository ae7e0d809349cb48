"""Match records, clip extraction, balanced epoch sampling, and masking.

All timestamps live in feature-frame units; seconds appear only at I/O
boundaries through each match's ``feature_rate``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, DimensionError

SUBSTITUTION_LABEL = 2


@dataclass(frozen=True)
class Event:
    """One annotated spot: the frame index at feature rate, its class id,
    and which half of the match it belongs to."""

    frame: int
    label: int
    half: int = 1


@dataclass
class MatchRecord:
    """A match's per-frame feature matrix plus its ground-truth events.

    ``half_frames`` gives the number of frames in each half; events in
    half 2 carry frame indices offset by ``half_frames[0]``.
    """

    match_id: str
    features: np.ndarray          # [N, D] float32
    events: list[Event]
    feature_rate: float = 2.0
    half_frames: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise DimensionError(
                f"match {self.match_id}: features must be [N, D], "
                f"got shape {self.features.shape}"
            )
        if self.feature_rate <= 0:
            raise DataError(f"match {self.match_id}: feature_rate must be positive")
        n = self.features.shape[0]
        if self.half_frames is None:
            self.half_frames = (n, 0)
        if sum(self.half_frames) != n:
            raise DataError(
                f"match {self.match_id}: half_frames {self.half_frames} "
                f"do not sum to {n} frames"
            )
        self.events = sorted(self.events, key=lambda e: e.frame)
        for ev in self.events:
            if not 0 <= ev.frame < n:
                raise DataError(
                    f"match {self.match_id}: event frame {ev.frame} outside "
                    f"[0, {n})"
                )
            if ev.half not in (1, 2):
                raise DataError(f"match {self.match_id}: event half must be 1 or 2")
            if ev.label < 0:
                raise DataError(f"match {self.match_id}: negative event label")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    def event_seconds(self, event: Event) -> float:
        """Global seconds from the start of the match."""
        return event.frame / self.feature_rate

    def frame_to_game_time(self, frame: int) -> tuple[int, float]:
        """Map a global frame index to (half, seconds within that half)."""
        n1 = self.half_frames[0]
        if frame < n1 or self.half_frames[1] == 0:
            return 1, frame / self.feature_rate
        return 2, (frame - n1) / self.feature_rate


@dataclass(frozen=True)
class ClipSample:
    """A length-L window: foreground samples carry the anchor event frame,
    background samples have ``event_frame=None`` and the background label."""

    match_id: str
    start: int
    length: int
    label: int
    event_frame: int | None = None

    @property
    def offset(self) -> float | None:
        """Normalized event position inside the window, in [0, 1)."""
        if self.event_frame is None:
            return None
        return (self.event_frame - self.start) / self.length

    @property
    def is_foreground(self) -> bool:
        return self.event_frame is not None


@dataclass(frozen=True)
class MaskPolicy:
    """Masking augmentation knobs: probability ``p``, eligibility bound ``q``
    on the normalized offset, and which side of the event gets replaced."""

    p: float = 1.0 / 3.0
    q: float = 0.5
    side: str = "before"

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise DataError(f"mask probability must be in [0, 1], got {self.p}")
        if not 0.0 <= self.q <= 1.0:
            raise DataError(f"mask offset bound must be in [0, 1], got {self.q}")
        if self.side not in ("before", "after"):
            raise DataError(f"mask side must be 'before' or 'after', got {self.side!r}")


def extract_foreground_clips(match: MatchRecord, clip_len: int) -> list[ClipSample]:
    """Every length-L window containing each event, stride 1.

    An interior event yields L clips whose offsets sweep 0 .. (L-1)/L;
    events near the match edges yield fewer.
    """
    n = match.num_frames
    if clip_len > n:
        raise DimensionError(
            f"match {match.match_id}: clip_len {clip_len} exceeds {n} frames"
        )
    clips = []
    for ev in match.events:
        lo = max(0, ev.frame - clip_len + 1)
        hi = min(ev.frame, n - clip_len)
        for start in range(lo, hi + 1):
            clips.append(ClipSample(match.match_id, start, clip_len, ev.label, ev.frame))
    return clips


def extract_background_clips(
    match: MatchRecord, clip_len: int, background_label: int
) -> list[ClipSample]:
    """Non-overlapping length-L windows tiling the event-free stretches;
    tails shorter than L are discarded."""
    n = match.num_frames
    if clip_len > n:
        raise DimensionError(
            f"match {match.match_id}: clip_len {clip_len} exceeds {n} frames"
        )
    event_frames = [ev.frame for ev in match.events]
    clips = []
    seg_start = 0
    for boundary in event_frames + [n]:
        seg_len = boundary - seg_start
        for i in range(seg_len // clip_len):
            clips.append(ClipSample(
                match.match_id, seg_start + i * clip_len, clip_len, background_label
            ))
        seg_start = boundary + 1
    return clips


def drop_halftime_substitutions(
    match: MatchRecord, window_s: float = 120.0,
    substitution_label: int = SUBSTITUTION_LABEL,
) -> MatchRecord:
    """Remove substitution events within ``window_s`` seconds of the half
    boundary; they carry no visual signal. Other events are untouched."""
    if match.half_frames[1] == 0 or not match.events:
        return match
    boundary_s = match.half_frames[0] / match.feature_rate
    kept = [
        ev for ev in match.events
        if not (ev.label == substitution_label
                and abs(match.event_seconds(ev) - boundary_s) <= window_s)
    ]
    if len(kept) == len(match.events):
        return match
    return MatchRecord(
        match.match_id, match.features, kept, match.feature_rate, match.half_frames
    )


def epoch_sample(
    foreground_pool: Sequence[ClipSample],
    background_pool: Sequence[ClipSample],
    n_foreground: int,
    num_classes: int,
    rng: np.random.Generator,
) -> list[ClipSample]:
    """One epoch's clips: ``n_foreground`` split evenly across the event
    classes plus ``n_foreground / num_classes`` background clips, shuffled.

    Sampling is without replacement per class while the pool allows, with
    replacement otherwise.
    """
    per_class = n_foreground // num_classes
    by_label: dict[int, list[ClipSample]] = {c: [] for c in range(num_classes)}
    for clip in foreground_pool:
        if clip.label in by_label:
            by_label[clip.label].append(clip)

    chosen: list[ClipSample] = []
    for label in range(num_classes):
        pool = by_label[label]
        if not pool:
            raise DataError(f"no foreground clips available for class {label}")
        chosen.extend(_draw(pool, per_class, rng))
    if not background_pool:
        raise DataError("no background clips available")
    chosen.extend(_draw(list(background_pool), per_class, rng))
    perm = rng.permutation(len(chosen))
    return [chosen[i] for i in perm]


def _draw(pool: list[ClipSample], count: int, rng: np.random.Generator) -> list[ClipSample]:
    if count <= len(pool):
        idx = rng.choice(len(pool), size=count, replace=False)
    else:
        idx = rng.integers(0, len(pool), size=count)
    return [pool[i] for i in idx]


def apply_mask(
    clip_features: np.ndarray,
    sample: ClipSample,
    policy: MaskPolicy,
    background_clips: Sequence[np.ndarray],
    rng: np.random.Generator,
) -> np.ndarray:
    """Masking augmentation on one foreground clip.

    With probability ``p``, when the event offset is eligible, the frames
    strictly before the event frame are replaced with a contiguous run of
    equal length drawn from one randomly chosen background clip; the event
    frame and everything after stay untouched. ``side='after'`` mirrors
    the rule onto the frames strictly after the event.

    The eligibility draw always consumes one uniform variate so the rng
    stream advances identically whether or not a clip gets masked.
    """
    if not sample.is_foreground:
        raise ValueError("apply_mask expects a foreground clip")
    if not background_clips:
        raise DataError("masking needs a non-empty background pool")
    length = sample.length
    if clip_features.shape[0] != length:
        raise DimensionError(
            f"clip has {clip_features.shape[0]} frames, sample says {length}"
        )

    r = sample.offset
    u = rng.random()
    if policy.side == "before":
        eligible = r <= policy.q
        lo, hi = 0, sample.event_frame - sample.start
    else:
        eligible = r >= 1.0 - policy.q
        lo, hi = sample.event_frame - sample.start + 1, length
    run = hi - lo
    if not eligible or u >= policy.p or run <= 0:
        return clip_features

    source = background_clips[int(rng.integers(len(background_clips)))]
    if source.shape[0] < run:
        raise DataError(
            f"background clip with {source.shape[0]} frames cannot fill a "
            f"run of {run}"
        )
    offset = int(rng.integers(source.shape[0] - run + 1))
    out = clip_features.copy()
    out[lo:hi] = source[offset:offset + run]
    return out


@dataclass
class ClipStore:
    """Loaded matches plus their extracted clip pools.

    Features are served as views into the match arrays, so pools stay
    cheap even when every window of every event is enumerated.
    """

    matches: dict[str, MatchRecord]
    clip_len: int
    num_classes: int
    foreground: list[ClipSample] = field(init=False)
    background: list[ClipSample] = field(init=False)

    def __post_init__(self) -> None:
        self.foreground = []
        self.background = []
        for match in self.matches.values():
            self.foreground.extend(extract_foreground_clips(match, self.clip_len))
            self.background.extend(
                extract_background_clips(match, self.clip_len, self.num_classes)
            )

    @classmethod
    def from_matches(
        cls,
        matches: Sequence[MatchRecord],
        clip_len: int,
        num_classes: int,
        drop_halftime_subs_window: float | None = None,
    ) -> "ClipStore":
        prepared = {}
        for match in matches:
            if drop_halftime_subs_window is not None:
                match = drop_halftime_substitutions(match, drop_halftime_subs_window)
            if match.match_id in prepared:
                raise DataError(f"duplicate match id {match.match_id!r}")
            prepared[match.match_id] = match
        return cls(prepared, clip_len, num_classes)

    def features(self, sample: ClipSample) -> np.ndarray:
        match = self.matches[sample.match_id]
        return match.features[sample.start:sample.start + sample.length]

    def background_features(self) -> list[np.ndarray]:
        return [self.features(s) for s in self.background]
