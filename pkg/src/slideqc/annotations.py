"""Polygon annotations: parsing, rasterization to class masks, tile labeling.

Annotations are polygons in L0 pixel coordinates, one class index each.
A tile's label is the artifact class with the most covered area, provided
that area clears the class threshold; otherwise the tile is negative
(tissue if it has enough stained foreground, else background).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .pyramid import SlidePyramid, TileAddress, downsample_for_level

# Class indices are dense and stable: 0/1 are the negative classes, 2..11 the
# ten artifact classes in alphabetical order.
CLASS_NAMES = (
    "background",
    "tissue",
    "air_bubble",
    "chatter",
    "coverslip_scratch",
    "debris",
    "dropped_tissue",
    "dust",
    "focus",
    "fold",
    "pen",
    "tissue_scratch",
)
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}
ARTIFACT_CLASSES = CLASS_NAMES[2:]
ARTIFACT_INDICES = tuple(range(2, len(CLASS_NAMES)))
NEGATIVE_INDICES = (0, 1)

# Annotated in source data but rejected: too rare to train on.
COVERSLIP_EDGE_INDEX = 12
COVERSLIP_EDGE_NAME = "coverslip_edge"

# Fixed display colors, shared by heatmaps, mask palettes, and the review UI.
CLASS_COLORS: dict[str, tuple[int, int, int]] = {
    "background": (255, 255, 255),
    "tissue": (224, 224, 224),
    "air_bubble": (135, 206, 250),
    "chatter": (255, 140, 0),
    "coverslip_scratch": (0, 150, 136),
    "debris": (121, 85, 72),
    "dropped_tissue": (0, 200, 0),
    "dust": (112, 128, 144),
    "focus": (255, 0, 255),
    "fold": (220, 20, 60),
    "pen": (0, 0, 255),
    "tissue_scratch": (255, 215, 0),
}

# Luminance at or above this is blank glass rather than stained tissue.
TISSUE_LUMINANCE_CUTOFF = 0.88


class AnnotationError(Exception):
    """Malformed annotation document or degenerate polygon."""


@dataclass(frozen=True)
class Polygon:
    class_index: int
    points: tuple[tuple[float, float], ...]  # L0 pixel coordinates


@dataclass
class AnnotationSet:
    slide_id: str
    polygons: list[Polygon] = field(default_factory=list)
    dropped_coverslip_edge: int = 0


@dataclass
class LabelPolicy:
    """Per-class area thresholds for tile labeling.

    The source data's thresholds are configurable per class and default to 5%
    of tile area; ties break to the lowest class index.
    """

    thresholds: dict[int, float] = field(default_factory=dict)
    default_threshold: float = 0.05
    tissue_foreground_threshold: float = 0.05

    def threshold_for(self, class_index: int) -> float:
        theta = self.thresholds.get(class_index, self.default_threshold)
        if not (0.0 < theta <= 1.0):
            raise ValueError(f"threshold for class {class_index} must be in (0, 1], got {theta}")
        return theta


def parse_annotations(data: bytes | str) -> AnnotationSet:
    """Parse a ``<slide_id>.ann.json`` document into a validated AnnotationSet.

    Coverslip-edge polygons are dropped (counted, not kept); any other unknown
    class index is an error.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed annotation document: {exc}") from exc
    if not isinstance(doc, dict) or "slide_id" not in doc or "annotations" not in doc:
        raise AnnotationError("annotation document must have slide_id and annotations")

    out = AnnotationSet(slide_id=str(doc["slide_id"]))
    for entry in doc["annotations"]:
        try:
            class_index = int(entry["class"])
            points = [(float(x), float(y)) for x, y in entry["points"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"malformed annotation entry: {exc}") from exc
        if class_index == COVERSLIP_EDGE_INDEX:
            out.dropped_coverslip_edge += 1
            continue
        if class_index not in ARTIFACT_INDICES:
            raise AnnotationError(f"unknown class index {class_index}")
        if len(points) < 3:
            raise AnnotationError(f"degenerate polygon with {len(points)} vertices")
        for x, y in points:
            if not (np.isfinite(x) and np.isfinite(y)) or x < 0 or y < 0:
                raise AnnotationError(f"invalid coordinate ({x}, {y})")
        out.polygons.append(Polygon(class_index=class_index, points=tuple(points)))
    return out


def annotation_set_to_json(ann: AnnotationSet) -> str:
    doc = {
        "slide_id": ann.slide_id,
        "annotations": [
            {"class": p.class_index, "points": [[x, y] for x, y in p.points]}
            for p in ann.polygons
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _fill_polygon_rows(
    mask: np.ndarray,
    points: np.ndarray,
    class_index: int,
    x_offset: float,
    y_offset: float,
) -> None:
    """Scanline even-odd fill at pixel centers, writing class_index in place.

    A pixel (i, j) of ``mask`` samples the point (x_offset + j + 0.5,
    y_offset + i + 0.5). A center is inside when an odd number of edge
    crossings lie strictly to its right, matching the classic ray cast.
    """
    h, w = mask.shape
    x1 = points[:, 0]
    y1 = points[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)

    ymin = float(np.min(y1))
    ymax = float(np.max(y1))
    row_lo = max(0, int(np.floor(ymin - y_offset - 0.5)))
    row_hi = min(h - 1, int(np.ceil(ymax - y_offset)))
    if row_hi < row_lo:
        return

    centers_x = x_offset + np.arange(w) + 0.5
    for i in range(row_lo, row_hi + 1):
        py = y_offset + i + 0.5
        crosses = (y1 > py) != (y2 > py)
        if not crosses.any():
            continue
        cx = x1[crosses] + (py - y1[crosses]) * (x2[crosses] - x1[crosses]) / (
            y2[crosses] - y1[crosses]
        )
        cx.sort()
        right = len(cx) - np.searchsorted(cx, centers_x, side="right")
        mask[i, right % 2 == 1] = class_index


def rasterize(
    annotation_set: AnnotationSet, tile_address: TileAddress, pyramid: SlidePyramid
) -> np.ndarray:
    """Rasterize a tile's class mask over its valid region.

    Polygons are scaled from L0 by the level downsample; overlaps resolve by
    insertion order (later polygons overwrite earlier ones); uncovered pixels
    are background (0).
    """
    pyramid.level_geometry(tile_address.level)  # validates the level is declared
    ds = downsample_for_level(tile_address.level)
    t = tile_address.tile_size
    mask = np.zeros((tile_address.valid_height, tile_address.valid_width), dtype=np.uint8)
    x_offset = float(tile_address.col * t)
    y_offset = float(tile_address.row * t)
    x_max = x_offset + tile_address.valid_width
    y_max = y_offset + tile_address.valid_height
    for polygon in annotation_set.polygons:
        points = np.asarray(polygon.points, dtype=np.float64) / ds
        if (
            points[:, 0].max() < x_offset
            or points[:, 0].min() > x_max
            or points[:, 1].max() < y_offset
            or points[:, 1].min() > y_max
        ):
            continue
        _fill_polygon_rows(mask, points, polygon.class_index, x_offset, y_offset)
    return mask


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma of a uint8 RGB array, scaled to [0, 1]."""
    r = rgb[..., 0].astype(np.float64)
    g = rgb[..., 1].astype(np.float64)
    b = rgb[..., 2].astype(np.float64)
    return (0.299 * r + 0.587 * g + 0.114 * b) / 255.0


def tissue_foreground(
    tile_rgb: np.ndarray, unscanned_fill: tuple[int, int, int] = (0, 255, 0)
) -> float:
    """Fraction of pixels that look like stained tissue.

    A pixel counts when its luminance is below the blank-glass cutoff and it
    is not the unscanned-area fill color.
    """
    if tile_rgb.size == 0:
        return 0.0
    lum = luminance(tile_rgb)
    fill = np.all(tile_rgb == np.asarray(unscanned_fill, dtype=np.uint8), axis=-1)
    return float(np.mean((lum < TISSUE_LUMINANCE_CUTOFF) & ~fill))


def label_tile(
    mask: np.ndarray,
    tile_rgb: np.ndarray,
    policy: LabelPolicy | None = None,
    unscanned_fill: tuple[int, int, int] = (0, 255, 0),
) -> int:
    """Assign the tile's single label by the majority-area rule.

    The winning artifact class is the one covering the largest fraction of
    valid pixels (ties to the lowest index). If the winner misses its
    threshold, the tile is negative: tissue when enough stained foreground is
    present, background otherwise.
    """
    if policy is None:
        policy = LabelPolicy()
    vh, vw = mask.shape
    if tile_rgb.shape[0] < vh or tile_rgb.shape[1] < vw:
        raise ValueError(
            f"tile {tile_rgb.shape[1]}x{tile_rgb.shape[0]} smaller than mask {vw}x{vh}"
        )
    valid_rgb = tile_rgb[:vh, :vw]
    total = mask.size
    if total == 0:
        raise ValueError("empty mask")

    counts = np.bincount(mask.ravel(), minlength=len(CLASS_NAMES))
    artifact_fractions = counts[2:] / total
    winner_offset = int(np.argmax(artifact_fractions))  # first max = lowest index
    winner = winner_offset + 2
    if artifact_fractions[winner_offset] >= policy.threshold_for(winner):
        return winner
    if tissue_foreground(valid_rgb, unscanned_fill) >= policy.tissue_foreground_threshold:
        return CLASS_INDEX["tissue"]
    return CLASS_INDEX["background"]
