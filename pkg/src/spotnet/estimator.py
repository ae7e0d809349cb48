"""Scikit-learn style front end.

``EventSpotter`` wraps the whole pipeline behind fit/predict/score with
``get_params``/``set_params`` from :class:`sklearn.base.BaseEstimator`,
so it clones, grid-searches and pipelines like any other estimator. X is
a sequence of :class:`~spotnet.data.MatchRecord`; the targets live inside
the records, so ``y`` is accepted and ignored.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import MaskPolicy, MatchRecord
from .errors import DataError, DimensionError
from .evaluate import EvalReport, average_map, ground_truth_from_matches
from .infer import SpotPrediction, spot_match
from .model import SpotterConfig, load_checkpoint, save_checkpoint
from .train import TrainPlan, fit as train_fit


def check_matches(
    X: Sequence[MatchRecord], feature_dim: int | None = None, clip_len: int | None = None
) -> list[MatchRecord]:
    """Validate an input collection of match records."""
    matches = list(X)
    if not matches:
        raise DataError("need at least one match")
    for m in matches:
        if not isinstance(m, MatchRecord):
            raise DataError(f"expected MatchRecord inputs, got {type(m).__name__}")
        if not np.all(np.isfinite(m.features)):
            raise DataError(f"match {m.match_id} has non-finite features")
        if feature_dim is not None and m.features.shape[1] != feature_dim:
            raise DimensionError(
                f"match {m.match_id} has {m.features.shape[1]}-d features, "
                f"expected {feature_dim}"
            )
        if clip_len is not None and m.num_frames < clip_len:
            raise DimensionError(
                f"match {m.match_id} is shorter than one {clip_len}-frame window"
            )
    return matches


class EventSpotter(BaseEstimator):
    """Dual-head temporal event spotter with balanced sampling and masking.

    Parameters mirror the training recipe defaults; pass
    ``validation=...`` to :meth:`fit` to enable early stopping and
    best-checkpoint selection.
    """

    def __init__(
        self,
        feature_dim: int = 512,
        clip_len: int = 41,
        num_classes: int = 3,
        kernel_size: int = 9,
        dropout_rate: float = 0.1,
        regression_weight: float = 10.0,
        masking: bool = True,
        mask_prob: float = 1.0 / 3.0,
        mask_max_offset: float = 0.5,
        mask_side: str = "before",
        max_epochs: int = 50,
        batch_size: int = 64,
        learning_rate: float = 0.05,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        patience: int = 10,
        n_foreground: int = 3000,
        seed: int = 0,
    ):
        self.feature_dim = feature_dim
        self.clip_len = clip_len
        self.num_classes = num_classes
        self.kernel_size = kernel_size
        self.dropout_rate = dropout_rate
        self.regression_weight = regression_weight
        self.masking = masking
        self.mask_prob = mask_prob
        self.mask_max_offset = mask_max_offset
        self.mask_side = mask_side
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.patience = patience
        self.n_foreground = n_foreground
        self.seed = seed

    def _config(self) -> SpotterConfig:
        return SpotterConfig(
            feature_dim=self.feature_dim,
            clip_len=self.clip_len,
            num_classes=self.num_classes,
            kernel_size=self.kernel_size,
            dropout_rate=self.dropout_rate,
            regression_weight=self.regression_weight,
        )

    def _plan(self) -> TrainPlan:
        return TrainPlan(
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            base_lr=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            patience=self.patience,
            n_foreground=self.n_foreground,
        )

    def _policy(self) -> MaskPolicy | None:
        if not self.masking:
            return None
        return MaskPolicy(p=self.mask_prob, q=self.mask_max_offset, side=self.mask_side)

    def fit(self, X: Sequence[MatchRecord], y=None, *,
            validation: Sequence[MatchRecord] | None = None,
            log_fn=None) -> "EventSpotter":
        config = self._config()
        matches = check_matches(X, config.feature_dim, config.clip_len)
        val = check_matches(validation, config.feature_dim, config.clip_len) \
            if validation else None
        result = train_fit(
            matches, config, self._plan(), policy=self._policy(),
            val_matches=val, seed=self.seed, log_fn=log_fn,
        )
        self.config_ = config
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError("this EventSpotter is not fitted; call fit or load")

    def predict(self, X: Sequence[MatchRecord], *,
                stride: int | None = None,
                fixed_center: bool = False) -> list[list[SpotPrediction]]:
        """Per-match lists of spot predictions."""
        self._require_fitted()
        matches = check_matches(X, self.config_.feature_dim, self.config_.clip_len)
        return [
            spot_match(self.params_, self.config_, m, stride=stride,
                       fixed_center=fixed_center)
            for m in matches
        ]

    def evaluate(self, X: Sequence[MatchRecord],
                 deltas: Sequence[float] | None = None,
                 fixed_center: bool = False) -> EvalReport:
        """Full tolerance-swept report against the matches' own events."""
        self._require_fitted()
        matches = check_matches(X, self.config_.feature_dim, self.config_.clip_len)
        preds = []
        for per_match in self.predict(matches, fixed_center=fixed_center):
            preds.extend(per_match)
        return average_map(
            preds, ground_truth_from_matches(matches), deltas, self.config_.num_classes
        )

    def score(self, X: Sequence[MatchRecord], y=None) -> float:
        """Average mAP on the default 5..60 s tolerance grid."""
        return self.evaluate(X).average_map

    def save(self, path) -> None:
        self._require_fitted()
        save_checkpoint(path, self.config_, self.params_)

    @classmethod
    def load(cls, path) -> "EventSpotter":
        config, params = load_checkpoint(path)
        est = cls(
            feature_dim=config.feature_dim,
            clip_len=config.clip_len,
            num_classes=config.num_classes,
            kernel_size=config.kernel_size,
            dropout_rate=config.dropout_rate,
            regression_weight=config.regression_weight,
        )
        est.config_ = config
        est.params_ = params
        est.history_ = []
        est.best_epoch_ = 0
        return est
