"""Temporal event spotting over pre-extracted frame features."""

from .data import (
    ClipSample,
    ClipStore,
    Event,
    MaskPolicy,
    MatchRecord,
    apply_mask,
    drop_halftime_substitutions,
    epoch_sample,
    extract_background_clips,
    extract_foreground_clips,
)
from .errors import ConfigError, DataError, DimensionError, NumericError, SpotnetError
from .estimator import EventSpotter
from .evaluate import (
    EvalReport,
    GroundTruthSpot,
    ap_at_delta,
    average_map,
    default_delta_grid,
    export_curves,
    ground_truth_from_matches,
    map_at_delta,
)
from .infer import SpotPrediction, VoteDensity, spot_match, spot_matches, vote_density
from .io import load_match, load_split, parse_game_time, save_match
from .model import (
    ClipOutput,
    SpotterConfig,
    SpotterParams,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .synth import SignatureBank, SynthSpec, signature_bank, synth_generate
from .train import TrainPlan, TrainResult, early_stop_check, fit, lr_at, sgd_step

__version__ = "0.1.0"

__all__ = [
    "ClipOutput",
    "ClipSample",
    "ClipStore",
    "ConfigError",
    "DataError",
    "DimensionError",
    "EvalReport",
    "Event",
    "EventSpotter",
    "GroundTruthSpot",
    "MaskPolicy",
    "MatchRecord",
    "NumericError",
    "SignatureBank",
    "SpotPrediction",
    "SpotterConfig",
    "SpotterParams",
    "SpotnetError",
    "SynthSpec",
    "TrainPlan",
    "TrainResult",
    "VoteDensity",
    "ap_at_delta",
    "apply_mask",
    "average_map",
    "default_delta_grid",
    "drop_halftime_substitutions",
    "early_stop_check",
    "epoch_sample",
    "export_curves",
    "extract_background_clips",
    "extract_foreground_clips",
    "fit",
    "forward",
    "ground_truth_from_matches",
    "init_params",
    "load_checkpoint",
    "load_match",
    "load_split",
    "lr_at",
    "map_at_delta",
    "parse_game_time",
    "save_checkpoint",
    "save_match",
    "sgd_step",
    "signature_bank",
    "spot_match",
    "spot_matches",
    "synth_generate",
    "vote_density",
]
