"""Run configuration: one JSON file drives every pipeline stage.

Scalar fields can be overridden from the command line; the resolved config
is copied into the run directory so that reruns and the review service see
exactly what the pipeline saw.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .annotations import CLASS_INDEX, LabelPolicy
from .classify.softmax import TrainingParams
from .dataset import BalancePolicy
from .synth import CorpusConfig
from .triage import TriagePolicy
from .util import read_json


class ConfigError(Exception):
    pass


DEFAULT_CONFIG: dict = {
    "seed": 1234,
    "timestamp": None,  # ISO string pins report timestamps for reproducible runs
    "corpus_dir": "corpus",
    "corpus": {
        "slide_count": 8,
        "width": 2048,
        "height": 1536,
        "base_magnification": 40.0,
        "clean_slides": 1,
        "pen_colors": ["blue", "green", "black"],
        "classes": {},
    },
    "label_policy": {
        "default_threshold": 0.05,
        "thresholds": {},
        "tissue_foreground_threshold": 0.05,
    },
    "grid": {"level": 2, "tile_size": 256},
    "tally": {"levels": [2, 4, 6], "tile_size": 256},
    "balance": {"factor": 2.0},
    "shards": {"max_records": 256},
    "train": {
        "screeners": [],
        "multiclass": [],
        "learning_rate": 0.5,
        "epochs": 400,
        "l2": 1e-4,
    },
    "ensemble": {"reference": {"level": 2, "tile_size": 256}, "members": []},
    "triage": {"tau_default": 0.005, "tau": {}, "n_min": 5},
    "ablation": {"levels": [2, 4], "tile_sizes": [128, 256, 512]},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path) -> dict:
    try:
        doc = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return _deep_merge(DEFAULT_CONFIG, doc)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``--set dotted.key=value`` overrides; values parse as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} walks through a non-object")
        node[parts[-1]] = value
    return cfg


def corpus_config(cfg: dict) -> CorpusConfig:
    c = cfg["corpus"]
    return CorpusConfig(
        slide_count=int(c["slide_count"]),
        width=int(c["width"]),
        height=int(c["height"]),
        seed=int(cfg["seed"]),
        base_magnification=float(c["base_magnification"]),
        classes=c.get("classes", {}),
        clean_slides=int(c.get("clean_slides", 0)),
        pen_colors=tuple(c.get("pen_colors", ["blue", "green", "black"])),
    )


def label_policy(cfg: dict) -> LabelPolicy:
    lp = cfg["label_policy"]
    thresholds = {}
    for name, theta in lp.get("thresholds", {}).items():
        if name not in CLASS_INDEX:
            raise ConfigError(f"label threshold for unknown class {name!r}")
        thresholds[CLASS_INDEX[name]] = float(theta)
    return LabelPolicy(
        thresholds=thresholds,
        default_threshold=float(lp["default_threshold"]),
        tissue_foreground_threshold=float(lp["tissue_foreground_threshold"]),
    )


def balance_policy(cfg: dict) -> BalancePolicy:
    return BalancePolicy(factor=float(cfg["balance"]["factor"]))


def triage_policy(cfg: dict) -> TriagePolicy:
    t = cfg["triage"]
    return TriagePolicy(
        tau_default=float(t["tau_default"]),
        tau={k: float(v) for k, v in t.get("tau", {}).items()},
        n_min=int(t["n_min"]),
    )


def training_params(cfg: dict) -> TrainingParams:
    t = cfg["train"]
    return TrainingParams(
        learning_rate=float(t["learning_rate"]), epochs=int(t["epochs"]), l2=float(t["l2"])
    )


def grid_points(cfg: dict) -> list[tuple[int, int]]:
    """Every (level, tile_size) the pipeline needs tiles for."""
    points = {(int(cfg["grid"]["level"]), int(cfg["grid"]["tile_size"]))}
    for member in cfg["ensemble"].get("members", []):
        points.add((int(member["level"]), int(member["tile_size"])))
    tally = cfg.get("tally", {})
    for level in tally.get("levels", []):
        points.add((int(level), int(tally.get("tile_size", 256))))
    ablation = cfg.get("ablation", {})
    for level in ablation.get("levels", []):
        for tile_size in ablation.get("tile_sizes", []):
            points.add((int(level), int(tile_size)))
    return sorted(points)


def demo_config() -> dict:
    """The 12-slide synthetic demo: trained screeners for pen/fold/focus plus a
    pen/fold/chatter multiclass member, everything pinned for reproducibility."""
    return _deep_merge(
        DEFAULT_CONFIG,
        {
            "seed": 20260809,
            "timestamp": "2026-08-09T00:00:00+00:00",
            "corpus": {
                "slide_count": 12,
                "width": 4096,
                "height": 3072,
                "clean_slides": 2,
                "pen_colors": ["blue", "green"],
                "classes": {
                    "pen": {"probability": 1.0, "count_range": [3, 4]},
                    "fold": {"probability": 1.0, "count_range": [2, 3]},
                    "focus": {"probability": 1.0, "count_range": [2, 2]},
                    "chatter": {"probability": 1.0, "count_range": [2, 3]},
                    "dust": {"probability": 0.4, "count_range": [1, 2]},
                    "debris": {"probability": 0.3, "count_range": [1, 2]},
                    "air_bubble": {"probability": 0.3, "count_range": [1, 1]},
                    "coverslip_scratch": {"probability": 0.25, "count_range": [1, 1]},
                    "tissue_scratch": {"probability": 0.3, "count_range": [1, 2]},
                    "dropped_tissue": {"probability": 0.25, "count_range": [1, 1]},
                },
            },
            # tiles barely clipped by a blur disc look sharp, so focus uses a
            # higher area threshold to keep its positive set learnable
            "label_policy": {"thresholds": {"focus": 0.25}},
            "ablation": {"levels": [2, 4], "tile_sizes": [256, 512]},
            "train": {
                "screeners": ["pen", "fold", "focus"],
                "multiclass": ["pen", "fold", "chatter"],
                "epochs": 600,
            },
            "ensemble": {
                "reference": {"level": 2, "tile_size": 256},
                "members": [
                    {"name": "pen-screener", "classes": ["pen"], "level": 2,
                     "tile_size": 256, "model": "models/screener_pen.pqmd"},
                    {"name": "fold-screener", "classes": ["fold"], "level": 2,
                     "tile_size": 256, "model": "models/screener_fold.pqmd"},
                    {"name": "focus-screener", "classes": ["focus"], "level": 2,
                     "tile_size": 256, "model": "models/screener_focus.pqmd"},
                    {"name": "pfc-multiclass", "classes": ["pen", "fold", "chatter"],
                     "level": 2, "tile_size": 256, "model": "models/multiclass.pqmd"},
                ],
            },
        },
    )
