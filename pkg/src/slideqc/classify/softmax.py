"""Deterministic softmax-regression baseline over the hand-defined features.

Full-batch gradient descent from a zero init on z-scored features: no
stochasticity, so runs are reproducible and the analytic gradient is
checkable against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..annotations import ARTIFACT_CLASSES, CLASS_INDEX, NEGATIVE_INDICES
from ..dataset import LabeledTile, tile_raster
from ..pyramid import TileAddress
from .features import extract_features

MODEL_MAGIC = b"PQMD"
MODEL_VERSION = 1

NEGATIVE_LABEL = "negative"


class ModelError(Exception):
    """Invalid training input, dimension mismatch, or a bad model file."""


@dataclass
class TrainingParams:
    learning_rate: float = 0.5
    epochs: int = 400
    l2: float = 1e-4


@dataclass
class SoftmaxModel:
    class_names: tuple[str, ...]
    weights: np.ndarray  # (classes, features)
    bias: np.ndarray  # (classes,)
    feat_mean: np.ndarray
    feat_std: np.ndarray
    loss_history: list[float] = field(default_factory=list, repr=False)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TilePrediction:
    address: TileAddress
    class_names: tuple[str, ...]
    probabilities: np.ndarray
    top_label: str
    top_probability: float


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_loss_and_grads(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus l2*||W||^2 with its analytic gradients."""
    n = x.shape[0]
    probs = _softmax(x @ weights.T + bias)
    log_likelihood = -np.log(np.clip(probs[np.arange(n), y], 1e-300, None))
    loss = float(log_likelihood.mean() + l2 * np.sum(weights**2))
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1.0
    delta = (probs - onehot) / n
    grad_w = delta.T @ x + 2.0 * l2 * weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


def train_softmax(
    features: np.ndarray,
    labels: np.ndarray,
    class_names: tuple[str, ...],
    params: TrainingParams | None = None,
    seed: int = 0,  # unused with the zero init; kept for interface stability
) -> SoftmaxModel:
    params = params or TrainingParams()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ModelError(f"features {x.shape} do not match {y.shape[0]} labels")
    if not np.all(np.isfinite(x)):
        raise ModelError("non-finite feature value")
    if len(np.unique(y)) < 2:
        raise ModelError("need at least 2 classes present to train")
    if y.min() < 0 or y.max() >= len(class_names):
        raise ModelError("label outside class list")

    feat_mean = x.mean(axis=0)
    feat_std = x.std(axis=0)
    feat_std[feat_std == 0.0] = 1.0
    xn = (x - feat_mean) / feat_std

    k, f = len(class_names), x.shape[1]
    weights = np.zeros((k, f))
    bias = np.zeros(k)
    history = []
    for _ in range(params.epochs):
        loss, grad_w, grad_b = softmax_loss_and_grads(weights, bias, xn, y, params.l2)
        history.append(loss)
        weights -= params.learning_rate * grad_w
        bias -= params.learning_rate * grad_b

    return SoftmaxModel(
        class_names=tuple(class_names), weights=weights, bias=bias,
        feat_mean=feat_mean, feat_std=feat_std, loss_history=history,
    )


def predict_proba(model: SoftmaxModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.n_features:
        raise ModelError(f"expected {model.n_features} features, got {x.shape[1]}")
    xn = (x - model.feat_mean) / model.feat_std
    probs = _softmax(xn @ model.weights.T + model.bias)
    return probs[0] if single else probs


def predict(model: SoftmaxModel, features: np.ndarray, address: TileAddress | None = None) -> TilePrediction:
    probs = predict_proba(model, features)
    top = int(np.argmax(probs))  # first max, so ties break to the lowest index
    return TilePrediction(
        address=address, class_names=model.class_names, probabilities=probs,
        top_label=model.class_names[top], top_probability=float(probs[top]),
    )


def tile_features(tiles: list[LabeledTile]) -> np.ndarray:
    return np.stack([extract_features(tile_raster(t)) for t in tiles])


def train_binary_screener(
    class_name: str,
    tiles: list[LabeledTile],
    params: TrainingParams | None = None,
) -> SoftmaxModel:
    """One-vs-background screener: positives of one artifact class against
    negative (background/tissue) tiles; other artifact tiles are excluded."""
    if class_name not in ARTIFACT_CLASSES:
        raise ModelError(f"not an artifact class: {class_name!r}")
    target = CLASS_INDEX[class_name]
    kept = [t for t in tiles if t.label == target or t.label in NEGATIVE_INDICES]
    labels = np.array([1 if t.label == target else 0 for t in kept], dtype=np.int64)
    if not (labels == 1).any():
        raise ModelError(f"no positive tiles for {class_name}")
    if not (labels == 0).any():
        raise ModelError(f"no negative tiles for {class_name}")
    return train_softmax(tile_features(kept), labels, (NEGATIVE_LABEL, class_name), params)


def train_multiclass(
    class_names: list[str],
    tiles: list[LabeledTile],
    params: TrainingParams | None = None,
) -> SoftmaxModel:
    """Multi-artifact tile classifier: the listed classes against negative."""
    for name in class_names:
        if name not in ARTIFACT_CLASSES:
            raise ModelError(f"not an artifact class: {name!r}")
    model_classes = (NEGATIVE_LABEL, *class_names)
    wanted = {CLASS_INDEX[name]: i + 1 for i, name in enumerate(class_names)}
    kept = [t for t in tiles if t.label in wanted or t.label in NEGATIVE_INDICES]
    labels = np.array([wanted.get(t.label, 0) for t in kept], dtype=np.int64)
    for i, name in enumerate(class_names):
        if not (labels == i + 1).any():
            raise ModelError(f"no tiles for {name}")
    return train_softmax(tile_features(kept), labels, model_classes, params)


def classify_tiles(model: SoftmaxModel, tiles: list[LabeledTile]) -> list[int]:
    """Predicted labels mapped back into the global class index space."""
    probs = predict_proba(model, tile_features(tiles))
    out = []
    for row in probs:
        name = model.class_names[int(np.argmax(row))]
        out.append(CLASS_INDEX["background"] if name == NEGATIVE_LABEL else CLASS_INDEX[name])
    return out


# ---------------------------------------------------------------------------
# model files: magic, class list, normalization stats, weights (f64 LE)
# ---------------------------------------------------------------------------

def save_model(model: SoftmaxModel, path: str | Path) -> None:
    k, f = model.weights.shape
    parts = [MODEL_MAGIC, struct.pack("<HHH", MODEL_VERSION, k, f)]
    for name in model.class_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    for arr in (model.feat_mean, model.feat_std, model.weights, model.bias):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> SoftmaxModel:
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != MODEL_MAGIC:
        raise ModelError(f"{path}: bad model magic")
    version, k, f = struct.unpack("<HHH", data[4:10])
    if version != MODEL_VERSION:
        raise ModelError(f"{path}: unsupported model version {version}")
    pos = 10
    names = []
    try:
        for _ in range(k):
            (n,) = struct.unpack("<I", data[pos : pos + 4])
            pos += 4
            names.append(data[pos : pos + n].decode("utf-8"))
            pos += n
        need = 8 * (f + f + k * f + k)
        if len(data) - pos != need:
            raise ModelError(f"{path}: expected {need} bytes of arrays, got {len(data) - pos}")
        arr = np.frombuffer(data, dtype="<f8", offset=pos)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ModelError(f"{path}: truncated model file: {exc}") from exc
    feat_mean = arr[:f].copy()
    feat_std = arr[f : 2 * f].copy()
    weights = arr[2 * f : 2 * f + k * f].reshape(k, f).copy()
    bias = arr[2 * f + k * f :].copy()
    return SoftmaxModel(
        class_names=tuple(names), weights=weights, bias=bias,
        feat_mean=feat_mean, feat_std=feat_std,
    )
