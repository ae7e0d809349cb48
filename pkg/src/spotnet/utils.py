"""Seed-derived random substreams.

All randomness flows from one root seed; each component draws from its
own named substream so runs stay reproducible component by component
(e.g. changing the masking policy never perturbs the sampler's stream).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_SUBSTREAMS = {
    "init": 0,
    "sampling": 1,
    "masking": 2,
    "dropout": 3,
    "synth": 4,
    "synth-bank": 5,
    "gradcheck": 6,
}


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """A generator for the named substream, optionally sub-keyed (per epoch,
    per split, ...)."""
    if name not in _SUBSTREAMS:
        raise ConfigError(f"unknown rng substream {name!r}")
    entropy = [int(seed), _SUBSTREAMS[name], *[int(i) for i in indices]]
    return np.random.default_rng(np.random.SeedSequence(entropy))
