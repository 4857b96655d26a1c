"""Slide-level triage: aggregate merged tile maps into flags, a heatmap,
a routing decision, and suggested reprocessing steps."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .annotations import ARTIFACT_CLASSES, CLASS_COLORS, CLASS_NAMES
from .classify.ensemble import MergedTileMap

SCHEMA_VERSION = 1

ROUTING_AUTO_PASS = "auto_pass"
ROUTING_MANUAL_REVIEW = "manual_review"

REPROCESS_STEPS = ("rescan", "recut", "restain", "recoverslip", "reembed", "clean_and_rescan")

# Physical step suggested when a class is flagged. Pen is absent on purpose:
# ink is often an intentional margin marking, so it only gets a review note.
STEP_FOR_CLASS = {
    "fold": "recut",
    "chatter": "recut",
    "tissue_scratch": "recut",
    "focus": "rescan",
    "dropped_tissue": "rescan",
    "debris": "recoverslip",
    "coverslip_scratch": "recoverslip",
    "air_bubble": "recoverslip",
    "dust": "recoverslip",  # upgraded to clean_and_rescan when dust is the only flag
}

HEATMAP_BLOCK = 24
LEGEND_ROW_HEIGHT = 18


class TriageError(Exception):
    pass


@dataclass
class TriagePolicy:
    """Both gates must pass to flag a class: an absolute tile count and a
    fraction of total slide tiles."""

    tau_default: float = 0.005
    tau: dict[str, float] = field(default_factory=dict)
    n_min: int = 5

    def tau_for(self, class_name: str) -> float:
        value = float(self.tau.get(class_name, self.tau_default))
        if not (0.0 < value <= 1.0):
            raise TriageError(f"tau for {class_name} must be in (0, 1], got {value}")
        return value

    def __post_init__(self) -> None:
        if self.n_min < 1:
            raise TriageError(f"n_min must be >= 1, got {self.n_min}")


@dataclass
class SlideReport:
    slide_id: str
    level: int
    tile_size: int
    cols: int
    rows: int
    labels: list[int]
    probs: list[float]
    class_counts: dict[str, int]
    class_fractions: dict[str, float]
    flags: list[str]
    routing: str
    suggested_steps: list[str]
    ensemble_digest: str
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "slide_id": self.slide_id,
            "reference": {
                "level": self.level, "tile_size": self.tile_size,
                "cols": self.cols, "rows": self.rows,
            },
            "tiles": {"labels": self.labels, "probs": self.probs},
            "class_counts": self.class_counts,
            "class_fractions": self.class_fractions,
            "flags": self.flags,
            "routing": self.routing,
            "suggested_steps": self.suggested_steps,
            "ensemble_digest": self.ensemble_digest,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SlideReport":
        ref = doc["reference"]
        return cls(
            slide_id=doc["slide_id"], level=int(ref["level"]), tile_size=int(ref["tile_size"]),
            cols=int(ref["cols"]), rows=int(ref["rows"]),
            labels=[int(v) for v in doc["tiles"]["labels"]],
            probs=[float(v) for v in doc["tiles"]["probs"]],
            class_counts={k: int(v) for k, v in doc["class_counts"].items()},
            class_fractions={k: float(v) for k, v in doc["class_fractions"].items()},
            flags=list(doc["flags"]), routing=doc["routing"],
            suggested_steps=list(doc["suggested_steps"]),
            ensemble_digest=doc["ensemble_digest"], timestamp=doc["timestamp"],
        )


def aggregate_slide(
    tile_map: MergedTileMap,
    policy: TriagePolicy | None = None,
    ensemble_digest: str = "",
    timestamp: str = "",
) -> SlideReport:
    """Flag classes meeting both policy gates and derive routing and steps."""
    if policy is None:
        policy = TriagePolicy()
    total = len(tile_map.labels)
    if total == 0:
        raise TriageError("empty tile map")

    counts = {name: 0 for name in CLASS_NAMES}
    for label in tile_map.labels:
        counts[CLASS_NAMES[label]] += 1
    fractions = {name: counts[name] / total for name in CLASS_NAMES}

    flags = [
        name
        for name in ARTIFACT_CLASSES
        if counts[name] >= policy.n_min and fractions[name] >= policy.tau_for(name)
    ]

    steps: list[str] = []
    for name in flags:
        step = STEP_FOR_CLASS.get(name)
        if name == "dust" and flags == ["dust"]:
            step = "clean_and_rescan"
        if step and step not in steps:
            steps.append(step)

    return SlideReport(
        slide_id=tile_map.slide_id,
        level=tile_map.level, tile_size=tile_map.tile_size,
        cols=tile_map.cols, rows=tile_map.rows,
        labels=list(tile_map.labels), probs=list(tile_map.probs),
        class_counts=counts, class_fractions=fractions,
        flags=flags,
        routing=ROUTING_MANUAL_REVIEW if flags else ROUTING_AUTO_PASS,
        suggested_steps=steps,
        ensemble_digest=ensemble_digest,
        timestamp=timestamp,
    )


def route(report: SlideReport) -> tuple[str, list[str]]:
    """Routing decision plus one human-readable line per flagged class."""
    lines = []
    for name in report.flags:
        count = report.class_counts[name]
        fraction = report.class_fractions[name]
        if name == "pen":
            action = "review manually; pen ink is often an intentional marking (no reprocess step)"
        else:
            step = STEP_FOR_CLASS.get(name, "rescan")
            if name == "dust" and report.flags == ["dust"]:
                step = "clean_and_rescan"
            action = f"suggest {step}"
        lines.append(f"{name}: {count} tiles ({fraction:.1%}) - {action}")
    return report.routing, lines


def render_heatmap(tile_map: MergedTileMap, block: int = HEATMAP_BLOCK) -> np.ndarray:
    """One color block per reference cell plus a legend strip underneath."""
    if not tile_map.labels:
        raise TriageError("empty tile map")
    grid = np.zeros((tile_map.rows * block, tile_map.cols * block, 3), dtype=np.uint8)
    for row in range(tile_map.rows):
        for col in range(tile_map.cols):
            name = CLASS_NAMES[tile_map.labels[row * tile_map.cols + col]]
            grid[row * block : (row + 1) * block, col * block : (col + 1) * block] = CLASS_COLORS[name]

    legend_width = max(grid.shape[1], 200)
    legend = Image.new("RGB", (legend_width, LEGEND_ROW_HEIGHT * len(CLASS_NAMES) + 4), (250, 250, 250))
    draw = ImageDraw.Draw(legend)
    font = ImageFont.load_default()
    for i, name in enumerate(CLASS_NAMES):
        y = 2 + i * LEGEND_ROW_HEIGHT
        draw.rectangle([4, y, 4 + 12, y + 12], fill=CLASS_COLORS[name], outline=(0, 0, 0))
        draw.text((22, y), name, fill=(20, 20, 20), font=font)

    canvas = np.full(
        (grid.shape[0] + legend.size[1], max(grid.shape[1], legend.size[0]), 3), 250, dtype=np.uint8
    )
    canvas[: grid.shape[0], : grid.shape[1]] = grid
    canvas[grid.shape[0] :, : legend.size[0]] = np.asarray(legend)
    return canvas


def heatmap_png(tile_map: MergedTileMap, block: int = HEATMAP_BLOCK) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(render_heatmap(tile_map, block), "RGB").save(
        buf, format="PNG", compress_level=3
    )
    return buf.getvalue()
