"""Tile classifiers: hand-built features, a softmax baseline, screeners,
the hybrid ensemble orchestrator, and a remote-inference client."""

from .features import FEATURE_NAMES, FeatureError, extract_features
from .softmax import (
    ModelError,
    classify_tiles,
    tile_features,
    SoftmaxModel,
    TilePrediction,
    TrainingParams,
    load_model,
    predict,
    predict_proba,
    save_model,
    train_binary_screener,
    train_multiclass,
    train_softmax,
)
from .ensemble import (
    EnsembleConfig,
    EnsembleError,
    EnsembleMember,
    MergedTileMap,
    ensemble_digest,
    run_ensemble,
)
from .remote import RemoteError, remote_predict

__all__ = [
    "FEATURE_NAMES",
    "FeatureError",
    "extract_features",
    "ModelError",
    "classify_tiles",
    "tile_features",
    "SoftmaxModel",
    "TilePrediction",
    "TrainingParams",
    "load_model",
    "predict",
    "predict_proba",
    "save_model",
    "train_binary_screener",
    "train_multiclass",
    "train_softmax",
    "EnsembleConfig",
    "EnsembleError",
    "EnsembleMember",
    "MergedTileMap",
    "ensemble_digest",
    "run_ensemble",
    "RemoteError",
    "remote_predict",
]
