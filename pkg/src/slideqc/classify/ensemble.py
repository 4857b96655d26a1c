"""Hybrid screening ensemble: binary screeners plus multiclass members, each
at its own tile size and level, merged onto one reference grid.

Members emit detections (class, probability) for tiles whose class
probability clears the member threshold. Detections project onto reference
cells they overlap by at least 25%, and each cell keeps the max-probability
artifact (ties to the lowest class index). Merging is order-independent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..annotations import ARTIFACT_CLASSES, CLASS_INDEX
from ..pyramid import SlidePyramid, downsample_for_level, read_tile, tile_grid, tile_to_png
from ..util import parallel_map
from .features import extract_features
from .remote import remote_predict
from .softmax import SoftmaxModel, load_model, predict_proba

OVERLAP_FRACTION = 0.25
DEFAULT_THRESHOLD = 0.5
REMOTE_BATCH_SIZE = 64


class EnsembleError(Exception):
    """Invalid ensemble configuration or an unloadable member."""


@dataclass
class EnsembleMember:
    name: str
    class_subset: tuple[str, ...]
    level: int
    tile_size: int
    model_path: str | None = None
    endpoint: str | None = None
    remote_model: str | None = None
    thresholds: dict[str, float] = field(default_factory=dict)

    def threshold_for(self, class_name: str) -> float:
        return float(self.thresholds.get(class_name, DEFAULT_THRESHOLD))

    def validate(self) -> None:
        if not self.class_subset:
            raise EnsembleError(f"member {self.name!r} has an empty class subset")
        for name in self.class_subset:
            if name not in ARTIFACT_CLASSES:
                raise EnsembleError(f"member {self.name!r}: {name!r} is not an artifact class")
        if (self.model_path is None) == (self.endpoint is None):
            raise EnsembleError(
                f"member {self.name!r} needs exactly one of model_path or endpoint"
            )


@dataclass
class EnsembleConfig:
    members: list[EnsembleMember]
    reference_level: int = 2
    reference_tile_size: int = 256

    def validate(self) -> None:
        if not self.members:
            raise EnsembleError("ensemble has no members")
        names = [m.name for m in self.members]
        if len(set(names)) != len(names):
            raise EnsembleError("duplicate member names")
        for member in self.members:
            member.validate()

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "EnsembleConfig":
        members = []
        for entry in doc.get("members", []):
            model_path = entry.get("model")
            if model_path is not None and base_dir is not None:
                model_path = str(Path(base_dir) / model_path)
            members.append(
                EnsembleMember(
                    name=entry["name"],
                    class_subset=tuple(entry["classes"]),
                    level=int(entry["level"]),
                    tile_size=int(entry["tile_size"]),
                    model_path=model_path,
                    endpoint=entry.get("endpoint"),
                    remote_model=entry.get("remote_model"),
                    thresholds={k: float(v) for k, v in entry.get("thresholds", {}).items()},
                )
            )
        reference = doc.get("reference", {})
        config = cls(
            members=members,
            reference_level=int(reference.get("level", 2)),
            reference_tile_size=int(reference.get("tile_size", 256)),
        )
        config.validate()
        return config


@dataclass
class MergedTileMap:
    slide_id: str
    level: int
    tile_size: int
    cols: int
    rows: int
    labels: list[int]  # row-major class indices, 0 = negative
    probs: list[float]  # 0.0 where negative

    def to_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "level": self.level,
            "tile_size": self.tile_size,
            "cols": self.cols,
            "rows": self.rows,
            "labels": self.labels,
            "probs": self.probs,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MergedTileMap":
        return cls(
            slide_id=doc["slide_id"], level=int(doc["level"]), tile_size=int(doc["tile_size"]),
            cols=int(doc["cols"]), rows=int(doc["rows"]),
            labels=[int(v) for v in doc["labels"]], probs=[float(v) for v in doc["probs"]],
        )


@dataclass(frozen=True)
class Detection:
    class_index: int
    probability: float
    x0: float
    y0: float
    x1: float
    y1: float  # L0 coordinates


def ensemble_digest(doc: dict) -> str:
    """Digest of the ensemble layout as configured (run-dir independent)."""
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _load_member_model(
    member: EnsembleMember, model_cache: dict[str, SoftmaxModel]
) -> SoftmaxModel:
    model = model_cache.get(member.model_path)
    if model is None:
        try:
            model = load_model(member.model_path)
        except Exception as exc:
            raise EnsembleError(f"member {member.name!r}: cannot load model: {exc}") from exc
        model_cache[member.model_path] = model
    missing = set(member.class_subset) - set(model.class_names)
    if missing:
        raise EnsembleError(f"member {member.name!r}: model lacks classes {sorted(missing)}")
    return model


def _remote_probabilities(
    member: EnsembleMember, pyramid: SlidePyramid, addresses: list
) -> tuple[tuple[str, ...], list]:
    tiles = [(f"c{a.col}_r{a.row}", tile_to_png(read_tile(pyramid, a))) for a in addresses]
    classes: tuple[str, ...] | None = None
    by_id: dict[str, np.ndarray] = {}
    for start in range(0, len(tiles), REMOTE_BATCH_SIZE):
        batch = tiles[start : start + REMOTE_BATCH_SIZE]
        batch_classes, batch_probs = remote_predict(
            member.endpoint, member.remote_model or member.name,
            member.level, member.tile_size, batch,
        )
        if classes is None:
            classes = batch_classes
        elif classes != batch_classes:
            raise EnsembleError(f"member {member.name!r}: class list changed between batches")
        by_id.update(batch_probs)
    missing = set(member.class_subset) - set(classes or ())
    if missing:
        raise EnsembleError(f"member {member.name!r}: endpoint lacks classes {sorted(missing)}")
    return classes, [by_id[f"c{a.col}_r{a.row}"] for a in addresses]


def _detections_from_rows(
    member: EnsembleMember, addresses: list, class_names: tuple[str, ...], rows
) -> list[Detection]:
    ds = downsample_for_level(member.level)
    t = member.tile_size
    col_of = {name: i for i, name in enumerate(class_names)}
    detections = []
    for address, probs in zip(addresses, rows):
        for class_name in member.class_subset:
            p = float(probs[col_of[class_name]])
            if p < member.threshold_for(class_name):
                continue
            detections.append(
                Detection(
                    class_index=CLASS_INDEX[class_name], probability=p,
                    x0=address.col * t * ds, y0=address.row * t * ds,
                    x1=(address.col * t + address.valid_width) * ds,
                    y1=(address.row * t + address.valid_height) * ds,
                )
            )
    return detections


def _all_detections(
    pyramid: SlidePyramid,
    config: EnsembleConfig,
    model_cache: dict[str, SoftmaxModel],
    workers: int,
) -> list[Detection]:
    """Evaluate every member; native members sharing a grid share features."""
    detections: list[Detection] = []
    native_by_grid: dict[tuple[int, int], list[EnsembleMember]] = {}
    for member in config.members:
        if member.model_path is not None:
            native_by_grid.setdefault((member.level, member.tile_size), []).append(member)

    for (level, tile_size), members in sorted(native_by_grid.items()):
        _, _, addresses = tile_grid(pyramid, level, tile_size)
        features = parallel_map(
            lambda a: extract_features(read_tile(pyramid, a)), addresses, workers=workers
        )
        matrix = np.stack(features)
        for member in members:
            model = _load_member_model(member, model_cache)
            rows = predict_proba(model, matrix)
            detections.extend(_detections_from_rows(member, addresses, model.class_names, rows))

    for member in config.members:
        if member.endpoint is not None:
            _, _, addresses = tile_grid(pyramid, member.level, member.tile_size)
            classes, rows = _remote_probabilities(member, pyramid, addresses)
            detections.extend(_detections_from_rows(member, addresses, classes, rows))
    return detections


def project_detections(
    detections: list[Detection],
    cols: int,
    rows: int,
    addresses: list,
    tile_size: int,
    ref_ds: int,
) -> tuple[list[int], list[float]]:
    """Merge L0 detection rectangles onto the reference grid.

    A cell receives a detection when the overlap covers at least 25% of the
    cell's valid area; each cell keeps the max-probability class, ties to the
    lowest class index. The result is independent of detection order.
    """
    t = tile_size
    best: dict[int, tuple[float, int]] = {}  # cell -> (probability, class_index)
    for det in detections:
        c_lo = max(0, int(det.x0 // (t * ref_ds)))
        c_hi = min(cols - 1, int(np.ceil(det.x1 / (t * ref_ds))))
        r_lo = max(0, int(det.y0 // (t * ref_ds)))
        r_hi = min(rows - 1, int(np.ceil(det.y1 / (t * ref_ds))))
        for row in range(r_lo, r_hi + 1):
            for col in range(c_lo, c_hi + 1):
                cell = addresses[row * cols + col]
                cx0, cy0 = col * t * ref_ds, row * t * ref_ds
                cx1 = (col * t + cell.valid_width) * ref_ds
                cy1 = (row * t + cell.valid_height) * ref_ds
                overlap = max(0.0, min(det.x1, cx1) - max(det.x0, cx0)) * max(
                    0.0, min(det.y1, cy1) - max(det.y0, cy0)
                )
                cell_area = (cx1 - cx0) * (cy1 - cy0)
                if cell_area <= 0 or overlap < OVERLAP_FRACTION * cell_area:
                    continue
                key = row * cols + col
                incumbent = best.get(key)
                candidate = (det.probability, det.class_index)
                if incumbent is None:
                    best[key] = candidate
                elif candidate[0] > incumbent[0] or (
                    candidate[0] == incumbent[0] and candidate[1] < incumbent[1]
                ):
                    best[key] = candidate

    labels = [0] * (cols * rows)
    probs = [0.0] * (cols * rows)
    for key, (p, ci) in best.items():
        labels[key] = ci
        probs[key] = p
    return labels, probs


def run_ensemble(
    pyramid: SlidePyramid,
    config: EnsembleConfig,
    workers: int = 1,
    model_cache: dict[str, SoftmaxModel] | None = None,
) -> MergedTileMap:
    """Classify with every member and merge detections onto the reference grid."""
    config.validate()
    if model_cache is None:
        model_cache = {}
    cols, rows, addresses = tile_grid(pyramid, config.reference_level, config.reference_tile_size)
    ref_ds = downsample_for_level(config.reference_level)
    detections = _all_detections(pyramid, config, model_cache, workers)
    labels, probs = project_detections(
        detections, cols, rows, addresses, config.reference_tile_size, ref_ds
    )
    return MergedTileMap(
        slide_id=pyramid.slide_id, level=config.reference_level,
        tile_size=config.reference_tile_size, cols=cols, rows=rows,
        labels=labels, probs=probs,
    )
