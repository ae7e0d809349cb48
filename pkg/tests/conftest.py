import numpy as np
import pytest

from spotnet import MatchRecord, Event, SpotterConfig


@pytest.fixture
def tiny_config():
    """Small everything but the real kernel width."""
    return SpotterConfig(
        feature_dim=6, clip_len=9, fc1_out=5, conv1_out=5, conv2_out=4,
        fc2_out=4, num_classes=3, kernel_size=9,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_match(match_id="m0", n_frames=300, dim=6, events=(), rate=2.0, seed=0):
    gen = np.random.default_rng(seed)
    features = gen.normal(size=(n_frames, dim)).astype(np.float32)
    evs = [Event(frame=f, label=c, half=1 if f < n_frames // 2 else 2)
           for f, c in events]
    return MatchRecord(
        match_id=match_id, features=features, events=evs,
        feature_rate=rate, half_frames=(n_frames // 2, n_frames - n_frames // 2),
    )


@pytest.fixture
def match_factory():
    return make_match
