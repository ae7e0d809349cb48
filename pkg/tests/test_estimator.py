import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spotnet import EventSpotter, SynthSpec, synth_generate
from spotnet.errors import DataError, DimensionError


def _corpus(seed=0, matches=3):
    spec = SynthSpec(num_matches=matches, match_minutes=6.0, feature_dim=8,
                     num_classes=2, event_spacing_s=45.0)
    return synth_generate(spec, np.random.default_rng(seed))


def _small_spotter(**overrides):
    defaults = dict(
        feature_dim=8, clip_len=21, num_classes=2, max_epochs=3,
        batch_size=32, n_foreground=96, seed=0,
    )
    defaults.update(overrides)
    return EventSpotter(**defaults)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        est = _small_spotter()
        params = est.get_params()
        assert params["clip_len"] == 21
        est2 = EventSpotter(**params)
        assert est2.get_params() == params

    def test_set_params_chains(self):
        est = _small_spotter().set_params(mask_prob=0.5)
        assert est.mask_prob == 0.5

    def test_clone(self):
        est = _small_spotter(mask_side="after")
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            _small_spotter().predict(_corpus())


class TestFitPredict:
    def test_fit_returns_self_and_predicts(self):
        matches = _corpus()
        est = _small_spotter()
        assert est.fit(matches) is est
        per_match = est.predict(matches)
        assert len(per_match) == len(matches)
        for preds in per_match:
            for p in preds:
                assert p.label in (0, 1)
                assert 0 < p.confidence <= 1

    def test_score_in_unit_interval(self):
        matches = _corpus()
        est = _small_spotter().fit(matches)
        score = est.score(matches)
        assert 0.0 <= score <= 1.0

    def test_validation_enables_best_epoch(self):
        matches = _corpus(matches=4)
        est = _small_spotter()
        est.fit(matches[:3], validation=matches[3:])
        assert est.best_epoch_ >= 1
        assert any(rec["val_average_map"] is not None for rec in est.history_)

    def test_input_validation(self):
        est = _small_spotter()
        with pytest.raises(DataError):
            est.fit([])
        with pytest.raises(DataError):
            est.fit(["not a match"])

    def test_feature_dim_mismatch_rejected(self):
        matches = _corpus()
        est = _small_spotter(feature_dim=16)
        with pytest.raises(DimensionError):
            est.fit(matches)


class TestSaveLoad:
    def test_round_trip_predictions_identical(self, tmp_path):
        matches = _corpus()
        est = _small_spotter().fit(matches)
        path = tmp_path / "model.rmsn"
        est.save(path)
        loaded = EventSpotter.load(path)
        a = est.predict(matches)
        b = loaded.predict(matches)
        for pa, pb in zip(a, b):
            assert [(p.frame, p.label) for p in pa] == [(p.frame, p.label) for p in pb]
        assert loaded.get_params()["clip_len"] == 21
