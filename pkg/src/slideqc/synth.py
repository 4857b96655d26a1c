"""Synthetic H&E-like slides with planted artifacts and exact ground truth.

Replaces a private slide corpus at desk scale: a seeded tissue generator,
one renderer per artifact class, and a corpus writer that emits pyramid
containers plus polygon annotations. Every output is a pure function of the
configured seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .annotations import (
    ARTIFACT_CLASSES,
    CLASS_INDEX,
    Polygon,
    AnnotationSet,
    annotation_set_to_json,
    luminance,
    _fill_polygon_rows,
)
from .pyramid import DEFAULT_UNSCANNED_FILL, build_pyramid
from .util import parallel_map, write_json

TISSUE_PINK = np.array([236.0, 168.0, 200.0])
TISSUE_DEEP = np.array([212.0, 118.0, 168.0])
NUCLEUS_PURPLE = np.array([96, 54, 132], dtype=np.uint8)

PEN_COLORS = {
    "blue": (24, 32, 200),
    "green": (12, 140, 60),
    "black": (30, 30, 30),
}


class SynthError(Exception):
    """Bad generator configuration or out-of-bounds placement."""


@dataclass(frozen=True)
class ArtifactSpec:
    artifact_class: str
    seed: int
    placement: dict


@dataclass
class CorpusConfig:
    slide_count: int
    width: int
    height: int
    seed: int
    base_magnification: float = 40.0
    # class name -> {"probability": float, "count_range": [lo, hi]}
    classes: dict[str, dict] = field(default_factory=dict)
    # the first N slides carry no artifacts, giving deterministic negatives
    clean_slides: int = 0
    pen_colors: tuple[str, ...] = ("blue", "green", "black")

    def validate(self) -> None:
        if self.slide_count < 1 or self.width < 1 or self.height < 1:
            raise SynthError("slide_count and dimensions must be positive")
        for name, conf in self.classes.items():
            if name not in ARTIFACT_CLASSES:
                raise SynthError(f"unknown artifact class {name!r}")
            p = float(conf.get("probability", 0.0))
            if not (0.0 <= p <= 1.0):
                raise SynthError(f"probability for {name} must be in [0, 1]")
        for color in self.pen_colors:
            if color not in PEN_COLORS:
                raise SynthError(f"unknown pen color {color!r}")


def generate_tissue(seed: int, width: int, height: int) -> np.ndarray:
    """Deterministic blobby H&E-like texture on a white background.

    2-6 smooth tissue regions in eosin pink with purple nuclear speckle; the
    tissue fraction is steered by a field quantile so it lands in roughly
    [0.25, 0.55] of the canvas.
    """
    if width < 1 or height < 1:
        raise SynthError("zero dimension")
    rng = np.random.default_rng(seed)

    cw, ch = max(2, math.ceil(width / 8)), max(2, math.ceil(height / 8))
    yy, xx = np.mgrid[0:ch, 0:cw].astype(np.float32)
    fieldv = np.zeros((ch, cw), dtype=np.float32)
    for _ in range(int(rng.integers(2, 7))):
        cx = rng.uniform(0.12, 0.88) * cw
        cy = rng.uniform(0.12, 0.88) * ch
        rx = rng.uniform(0.12, 0.34) * cw
        ry = rng.uniform(0.12, 0.34) * ch
        theta = rng.uniform(0.0, math.pi)
        dx, dy = xx - cx, yy - cy
        u = math.cos(theta) * dx + math.sin(theta) * dy
        v = -math.sin(theta) * dx + math.cos(theta) * dy
        fieldv += np.exp(-((u / rx) ** 2 + (v / ry) ** 2)).astype(np.float32)
    noise = gaussian_filter(rng.standard_normal((ch, cw)).astype(np.float32), sigma=3.0)
    noise_std = float(noise.std())
    if noise_std > 0:
        fieldv += 0.22 * float(fieldv.std() + 1e-6) / noise_std * noise

    target = float(rng.uniform(0.25, 0.55))
    threshold = float(np.quantile(fieldv, 1.0 - target))

    fine = np.asarray(
        Image.fromarray(fieldv, mode="F").resize((width, height), Image.BILINEAR)
    )
    tissue = fine >= threshold

    image = np.full((height, width, 3), 255, dtype=np.uint8)
    span = max(float(fieldv.max()) - threshold, 1e-6)
    depth = np.clip((fine - threshold) / span, 0.0, 1.0) ** 0.7
    color = TISSUE_PINK[None, None, :] + depth[..., None] * (TISSUE_DEEP - TISSUE_PINK)[None, None, :]

    # fine-grained stain texture, generated coarse and upsampled to keep it cheap
    tw, th = max(2, width // 4), max(2, height // 4)
    tex = rng.standard_normal((th, tw)).astype(np.float32)
    tex = gaussian_filter(tex, sigma=1.0)
    tex = np.asarray(Image.fromarray(tex, mode="F").resize((width, height), Image.BILINEAR))
    tex_std = float(tex.std())
    if tex_std > 0:
        color = color + (tex / tex_std * 6.0)[..., None]

    image[tissue] = np.clip(color[tissue], 0, 255).astype(np.uint8)

    # nuclear speckle: small purple dots scattered over tissue
    n_target = int(tissue.sum() * 0.0012)
    if n_target and tissue.any():
        ys = rng.integers(0, height - 1, size=n_target * 3)
        xs = rng.integers(0, width - 1, size=n_target * 3)
        keep = tissue[ys, xs]
        ys, xs = ys[keep][:n_target], xs[keep][:n_target]
        for dy in (0, 1):
            for dx in (0, 1):
                image[ys + dy, xs + dx] = NUCLEUS_PURPLE
    return image


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

def _segment_quad(x0: float, y0: float, x1: float, y1: float, width: float) -> list[tuple[float, float]]:
    dx, dy = x1 - x0, y1 - y0
    norm = math.hypot(dx, dy)
    if norm == 0:
        raise SynthError("zero-length segment")
    nx, ny = -dy / norm * width / 2.0, dx / norm * width / 2.0
    return [(x0 + nx, y0 + ny), (x1 + nx, y1 + ny), (x1 - nx, y1 - ny), (x0 - nx, y0 - ny)]


def _rotated_rect(cx: float, cy: float, angle: float, length: float, width: float) -> list[tuple[float, float]]:
    ax, ay = math.cos(angle), math.sin(angle)
    x0, y0 = cx - ax * length / 2.0, cy - ay * length / 2.0
    x1, y1 = cx + ax * length / 2.0, cy + ay * length / 2.0
    return _segment_quad(x0, y0, x1, y1, width)


def _circle_polygon(cx: float, cy: float, radius: float, n: int = 32) -> list[tuple[float, float]]:
    return [
        (cx + radius * math.cos(2 * math.pi * k / n), cy + radius * math.sin(2 * math.pi * k / n))
        for k in range(n)
    ]


def _rect_polygon(x0: float, y0: float, x1: float, y1: float) -> list[tuple[float, float]]:
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _polygon_window(
    points: list[tuple[float, float]], width: int, height: int, pad: int = 0
) -> tuple[int, int, np.ndarray]:
    """Bounding window of a polygon plus its boolean pixel-center mask."""
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x0 = max(0, int(math.floor(min(xs))) - pad)
    y0 = max(0, int(math.floor(min(ys))) - pad)
    x1 = min(width, int(math.ceil(max(xs))) + pad)
    y1 = min(height, int(math.ceil(max(ys))) + pad)
    mask = np.zeros((max(y1 - y0, 0), max(x1 - x0, 0)), dtype=np.uint8)
    if mask.size:
        _fill_polygon_rows(mask, np.asarray(points, dtype=np.float64), 1, float(x0), float(y0))
    return x0, y0, mask.astype(bool)


def _check_bounds(points: list[tuple[float, float]], width: int, height: int) -> None:
    for x, y in points:
        if not (0.0 <= x <= width and 0.0 <= y <= height):
            raise SynthError(f"placement vertex ({x:.1f}, {y:.1f}) outside {width}x{height} slide")


def _signed_distance_grid(x0: int, y0: int, shape: tuple[int, int],
                          ax: float, ay: float, px: float, py: float) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates of pixel centers along (along, across) axes of a line through (px, py)."""
    yy, xx = np.mgrid[y0 : y0 + shape[0], x0 : x0 + shape[1]].astype(np.float64)
    xx += 0.5
    yy += 0.5
    along = (xx - px) * ax + (yy - py) * ay
    across = -(xx - px) * ay + (yy - py) * ax
    return along, across


# ---------------------------------------------------------------------------
# renderers: each returns the ground-truth polygon and edits only inside it
# ---------------------------------------------------------------------------

def _render_pen(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    width = float(place.get("width", rng.uniform(20, 60)))
    poly = _segment_quad(place["x0"], place["y0"], place["x1"], place["y1"], width)
    _check_bounds(poly, img.shape[1], img.shape[0])
    color_name = place.get("color") or rng.choice(list(PEN_COLORS))
    color = np.array(PEN_COLORS[color_name], dtype=np.float64)
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    alpha = gaussian_filter(mask.astype(np.float32), sigma=1.0)
    alpha = np.clip(alpha * 1.2, 0.0, 1.0) * mask  # soft edge, confined to the stroke
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]].astype(np.float64)
    a = (alpha * 0.88)[..., None]
    img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] = np.clip(
        crop * (1 - a) + color[None, None, :] * a, 0, 255
    ).astype(np.uint8)
    return poly


def _render_fold(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    poly = _rotated_rect(place["cx"], place["cy"], place["angle"], place["length"], place["width"])
    _check_bounds(poly, img.shape[1], img.shape[0])
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    # doubled-over tissue: average with a 3 px shifted copy, luminance x0.55
    sx = int(round(3 * math.cos(place["angle"] + math.pi / 2)))
    sy = int(round(3 * math.sin(place["angle"] + math.pi / 2)))
    h, w = img.shape[:2]
    ys = np.clip(np.arange(y0, y0 + mask.shape[0]) + sy, 0, h - 1)
    xs = np.clip(np.arange(x0, x0 + mask.shape[1]) + sx, 0, w - 1)
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]].astype(np.float64)
    shifted = img[np.ix_(ys, xs)].astype(np.float64)
    layered = 0.55 * 0.5 * (crop + shifted)
    out = np.where(mask[..., None], layered, crop)
    img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] = np.clip(out, 0, 255).astype(np.uint8)
    return poly


def _render_chatter(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    poly = _rotated_rect(place["cx"], place["cy"], place["angle"], place["length"], place["width"])
    _check_bounds(poly, img.shape[1], img.shape[0])
    period = float(place.get("period", rng.uniform(8, 24)))
    amplitude = float(place.get("amplitude", 0.15))
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
    tissue = luminance(crop) < 0.88
    ax, ay = math.cos(place["angle"]), math.sin(place["angle"])
    along, _ = _signed_distance_grid(x0, y0, mask.shape, ax, ay, place["cx"], place["cy"])
    factor = 1.0 + amplitude * np.sin(2 * math.pi * along / period)
    sel = mask & tissue
    out = crop.astype(np.float64)
    out[sel] *= factor[sel][:, None]
    img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] = np.clip(out, 0, 255).astype(np.uint8)
    return poly


def _blur_rgb(crop: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur of an RGB crop; large sigmas run on a decimated copy."""
    step = max(1, int(sigma / 4.0))
    if step == 1:
        return np.stack(
            [gaussian_filter(crop[..., c].astype(np.float32), sigma=sigma) for c in range(3)],
            axis=-1,
        )
    small = crop[::step, ::step].astype(np.float32)
    blurred = np.stack(
        [gaussian_filter(small[..., c], sigma=sigma / step) for c in range(3)], axis=-1
    )
    h, w = crop.shape[:2]
    out = np.empty((h, w, 3), dtype=np.float32)
    for c in range(3):
        out[..., c] = np.asarray(
            Image.fromarray(blurred[..., c], mode="F").resize((w, h), Image.BILINEAR)
        )
    return out


def _render_focus(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    r = float(place["radius"])
    poly = _circle_polygon(place["cx"], place["cy"], r)
    _check_bounds(poly, img.shape[1], img.shape[0])
    sigma = max(r / 6.0, 2.0)
    pad = int(math.ceil(2 * sigma))
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    ex0, ey0 = max(0, x0 - pad), max(0, y0 - pad)
    ex1 = min(img.shape[1], x0 + mask.shape[1] + pad)
    ey1 = min(img.shape[0], y0 + mask.shape[0] + pad)
    blurred = _blur_rgb(img[ey0:ey1, ex0:ex1], sigma)
    sub = blurred[y0 - ey0 : y0 - ey0 + mask.shape[0], x0 - ex0 : x0 - ex0 + mask.shape[1]]
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
    crop[mask] = np.clip(sub[mask], 0, 255).astype(np.uint8)
    return poly


def _render_air_bubble(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    r = float(place["radius"])
    poly = _circle_polygon(place["cx"], place["cy"], r)
    _check_bounds(poly, img.shape[1], img.shape[0])
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    yy, xx = np.mgrid[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]].astype(np.float64)
    dist = np.hypot(xx + 0.5 - place["cx"], yy + 0.5 - place["cy"])
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
    tissue = luminance(crop) < 0.88
    out = crop.astype(np.float64)
    interior = mask & (dist < r - 4)
    rim = mask & (dist >= r - 4)
    out[interior] = np.clip(out[interior] * 1.10, 0, 255)  # brightened trapped air
    out[rim] *= 0.45  # hard dark edge
    # cornflaking where the bubble dried over tissue
    flake = interior & tissue & (rng.random(mask.shape) < 0.10)
    brown = np.array([152.0, 96.0, 44.0])
    out[flake] = 0.3 * out[flake] + 0.7 * brown
    img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] = np.clip(out, 0, 255).astype(np.uint8)
    return poly


def _render_dust(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    r = float(place["radius"])
    poly = _circle_polygon(place["cx"], place["cy"], r, n=24)
    _check_bounds(poly, img.shape[1], img.shape[0])
    count = int(place.get("count", rng.integers(5, 31)))
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    yy, xx = np.mgrid[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]].astype(np.float64)
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
    out = crop.astype(np.float64)
    for _ in range(count):
        ang = rng.uniform(0, 2 * math.pi)
        rad = rng.uniform(0, r * 0.8)
        sx, sy = place["cx"] + rad * math.cos(ang), place["cy"] + rad * math.sin(ang)
        speck_r = rng.uniform(1.0, 3.0)
        shade = rng.uniform(25, 70)
        speck = mask & (np.hypot(xx + 0.5 - sx, yy + 0.5 - sy) <= speck_r)
        out[speck] = shade
    img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] = np.clip(out, 0, 255).astype(np.uint8)
    return poly


def _render_debris(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    r = float(place["radius"])
    n = int(rng.integers(10, 15))
    radii = r * rng.uniform(0.6, 1.3, size=n)
    poly = [
        (
            place["cx"] + radii[k] * math.cos(2 * math.pi * k / n),
            place["cy"] + radii[k] * math.sin(2 * math.pi * k / n),
        )
        for k in range(n)
    ]
    _check_bounds(poly, img.shape[1], img.shape[0])
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]].astype(np.float64)
    grain = rng.uniform(-18, 18, size=mask.shape)
    base = np.array([62.0, 46.0, 36.0])
    out = crop.copy()
    out[mask] = 0.15 * crop[mask] + 0.85 * base + grain[mask][:, None]
    img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] = np.clip(out, 0, 255).astype(np.uint8)
    return poly


def _render_tissue_scratch(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    width = float(place.get("width", rng.uniform(3, 8)))
    poly = _segment_quad(place["x0"], place["y0"], place["x1"], place["y1"], width)
    _check_bounds(poly, img.shape[1], img.shape[0])
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
    out = crop.astype(np.float64)
    out[mask] = 0.08 * out[mask] + 0.92 * 252.0  # torn-out tissue shows glass
    img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] = np.clip(out, 0, 255).astype(np.uint8)
    return poly


def _render_coverslip_scratch(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    core = float(place.get("width", rng.uniform(2, 4)))
    halo = 5.0
    poly = _segment_quad(place["x0"], place["y0"], place["x1"], place["y1"], core + 2 * halo)
    poly = [
        (min(max(x, 0.0), float(img.shape[1])), min(max(y, 0.0), float(img.shape[0])))
        for x, y in poly
    ]
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if not mask.any():
        return poly
    dx, dy = place["x1"] - place["x0"], place["y1"] - place["y0"]
    norm = math.hypot(dx, dy)
    ax, ay = dx / norm, dy / norm
    _, across = _signed_distance_grid(x0, y0, mask.shape, ax, ay, place["x0"], place["y0"])
    crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
    out = crop.astype(np.float64)
    core_sel = mask & (np.abs(across) <= core / 2)
    hi_sel = mask & (across > core / 2)
    lo_sel = mask & (across < -core / 2)
    out[core_sel] = np.clip(out[core_sel] * 1.35 + 30, 0, 255)
    out[hi_sel] *= 1.2  # refraction halo
    out[lo_sel] *= 0.8
    img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] = np.clip(out, 0, 255).astype(np.uint8)
    return poly


def _render_dropped_tissue(img: np.ndarray, rng: np.random.Generator, place: dict) -> list[tuple[float, float]]:
    poly = _rect_polygon(place["x0"], place["y0"], place["x1"], place["y1"])
    _check_bounds(poly, img.shape[1], img.shape[0])
    x0, y0, mask = _polygon_window(poly, img.shape[1], img.shape[0])
    if mask.any():
        crop = img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
        crop[mask] = np.asarray(DEFAULT_UNSCANNED_FILL, dtype=np.uint8)
    return poly


RENDERERS = {
    "pen": _render_pen,
    "fold": _render_fold,
    "chatter": _render_chatter,
    "focus": _render_focus,
    "air_bubble": _render_air_bubble,
    "dust": _render_dust,
    "debris": _render_debris,
    "tissue_scratch": _render_tissue_scratch,
    "coverslip_scratch": _render_coverslip_scratch,
    "dropped_tissue": _render_dropped_tissue,
}

# Pixels outside the ground-truth polygon are never written; soft edges are
# feathered inward, so no dilation allowance is needed.
FEATHER_RADIUS = {name: 0 for name in RENDERERS}


def apply_artifact(image: np.ndarray, spec: ArtifactSpec) -> tuple[np.ndarray, list[tuple[float, float]]]:
    """Render one artifact, returning the new image and its ground-truth polygon."""
    if spec.artifact_class not in RENDERERS:
        raise SynthError(f"no renderer for class {spec.artifact_class!r}")
    rng = np.random.default_rng(spec.seed)
    out = image.copy()
    polygon = RENDERERS[spec.artifact_class](out, rng, dict(spec.placement))
    return out, polygon


# ---------------------------------------------------------------------------
# placement samplers
# ---------------------------------------------------------------------------

def _sample_tissue_point(rng: np.random.Generator, tissue: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(tissue)
    if len(xs) == 0:
        return tissue.shape[1] / 2.0, tissue.shape[0] / 2.0
    k = int(rng.integers(len(xs)))
    return float(xs[k]), float(ys[k])


def _inner_segment(rng: np.random.Generator, w: int, h: int, frac_lo: float, frac_hi: float,
                   margin: float) -> tuple[float, float, float, float]:
    length = rng.uniform(frac_lo, frac_hi) * min(w, h)
    for _ in range(64):
        x0 = rng.uniform(margin, w - margin)
        y0 = rng.uniform(margin, h - margin)
        ang = rng.uniform(0, 2 * math.pi)
        x1 = x0 + length * math.cos(ang)
        y1 = y0 + length * math.sin(ang)
        if margin <= x1 <= w - margin and margin <= y1 <= h - margin:
            return x0, y0, x1, y1
    return margin, margin, margin + length / math.sqrt(2), margin + length / math.sqrt(2)


def sample_placement(
    artifact_class: str,
    rng: np.random.Generator,
    width: int,
    height: int,
    tissue: np.ndarray,
    pen_colors: tuple[str, ...] = ("blue", "green", "black"),
) -> dict:
    """Draw renderer parameters for one artifact, sized for the slide."""
    w, h = width, height
    if artifact_class == "pen":
        x0, y0, x1, y1 = _inner_segment(rng, w, h, 0.5, 0.8, margin=80)
        return {"x0": x0, "y0": y0, "x1": x1, "y1": y1,
                "width": float(rng.uniform(40, 70)),
                "color": str(rng.choice(list(pen_colors)))}
    if artifact_class == "fold":
        cx, cy = _sample_tissue_point(rng, tissue)
        margin = 0.45 * min(w, h)
        cx = min(max(cx, margin), w - margin)
        cy = min(max(cy, margin), h - margin)
        return {"cx": cx, "cy": cy, "angle": float(rng.uniform(0, math.pi)),
                "length": float(rng.uniform(0.45, 0.62) * min(w, h)),
                "width": float(rng.uniform(130, 260))}
    if artifact_class == "chatter":
        cx, cy = _sample_tissue_point(rng, tissue)
        margin = 0.35 * min(w, h)
        cx = min(max(cx, margin), w - margin)
        cy = min(max(cy, margin), h - margin)
        return {"cx": cx, "cy": cy, "angle": float(rng.uniform(0, math.pi)),
                "length": float(rng.uniform(0.32, 0.48) * min(w, h)),
                "width": float(rng.uniform(240, 420)),
                "period": float(rng.uniform(8, 24)), "amplitude": 0.15}
    if artifact_class == "focus":
        cx, cy = _sample_tissue_point(rng, tissue)
        r = float(rng.uniform(0.15, 0.23) * min(w, h))
        cx = min(max(cx, r + 2), w - r - 2)
        cy = min(max(cy, r + 2), h - r - 2)
        return {"cx": cx, "cy": cy, "radius": r}
    if artifact_class == "air_bubble":
        r = float(rng.uniform(0.06, 0.14) * min(w, h))
        return {"cx": float(rng.uniform(r + 2, w - r - 2)),
                "cy": float(rng.uniform(r + 2, h - r - 2)), "radius": r}
    if artifact_class == "dust":
        r = float(rng.uniform(40, 90))
        return {"cx": float(rng.uniform(r + 2, w - r - 2)),
                "cy": float(rng.uniform(r + 2, h - r - 2)),
                "radius": r, "count": int(rng.integers(5, 31))}
    if artifact_class == "debris":
        r = float(rng.uniform(15, 60))
        pad = 1.5 * r
        return {"cx": float(rng.uniform(pad, w - pad)),
                "cy": float(rng.uniform(pad, h - pad)), "radius": r}
    if artifact_class == "tissue_scratch":
        x0, y0 = _sample_tissue_point(rng, tissue)
        x1, y1 = _sample_tissue_point(rng, tissue)
        if math.hypot(x1 - x0, y1 - y0) < 8:
            x1, y1 = min(x0 + 200, w - 8.0), min(y0 + 150, h - 8.0)
        clamp = lambda v, hi: min(max(v, 8.0), hi - 8.0)
        return {"x0": clamp(x0, w), "y0": clamp(y0, h),
                "x1": clamp(x1, w), "y1": clamp(y1, h),
                "width": float(rng.uniform(3, 8))}
    if artifact_class == "coverslip_scratch":
        if rng.random() < 0.5:
            return {"x0": 0.0, "y0": float(rng.uniform(0.1, 0.9) * h),
                    "x1": float(w), "y1": float(rng.uniform(0.1, 0.9) * h),
                    "width": float(rng.uniform(2, 4))}
        return {"x0": float(rng.uniform(0.1, 0.9) * w), "y0": 0.0,
                "x1": float(rng.uniform(0.1, 0.9) * w), "y1": float(h),
                "width": float(rng.uniform(2, 4))}
    if artifact_class == "dropped_tissue":
        rw = rng.uniform(0.12, 0.22) * w
        rh = rng.uniform(0.12, 0.22) * h
        x0 = rng.uniform(2, w - rw - 2)
        y0 = rng.uniform(2, h - rh - 2)
        return {"x0": float(x0), "y0": float(y0), "x1": float(x0 + rw), "y1": float(y0 + rh)}
    raise SynthError(f"no placement sampler for {artifact_class!r}")


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

def _generate_slide(config: CorpusConfig, index: int, out_dir: Path) -> dict:
    slide_id = f"synth-{index:03d}"
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(index,)))
    tissue_seed = int(rng.integers(0, 2**63 - 1))
    image = generate_tissue(tissue_seed, config.width, config.height)
    tissue = luminance(image) < 0.88

    ann = AnnotationSet(slide_id=slide_id)
    planted: list[str] = []
    if index >= config.clean_slides:
        for name in sorted(config.classes, key=lambda n: CLASS_INDEX[n]):
            conf = config.classes[name]
            if rng.random() >= float(conf.get("probability", 0.0)):
                continue
            lo, hi = conf.get("count_range", [1, 1])
            for _ in range(int(rng.integers(int(lo), int(hi) + 1))):
                placement = sample_placement(name, rng, config.width, config.height,
                                             tissue, config.pen_colors)
                spec = ArtifactSpec(artifact_class=name, seed=int(rng.integers(0, 2**63 - 1)),
                                    placement=placement)
                image, polygon = apply_artifact(image, spec)
                ann.polygons.append(Polygon(class_index=CLASS_INDEX[name], points=tuple(polygon)))
            planted.append(name)

    build_pyramid(image, slide_id, config.base_magnification, out_dir / slide_id)
    ann_name = f"{slide_id}.ann.json"
    (out_dir / ann_name).write_text(annotation_set_to_json(ann), "utf-8")
    return {"slide_id": slide_id, "planted_classes": planted, "annotation_file": ann_name}


def generate_corpus(config: CorpusConfig, out_dir: str | Path, workers: int = 1) -> dict:
    """Write the full synthetic corpus and its ``corpus.json`` manifest."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = parallel_map(
        lambda i: _generate_slide(config, i, out), range(config.slide_count), workers=workers
    )
    manifest = {"seed": config.seed, "slides": entries}
    write_json(out / "corpus.json", manifest)
    return manifest
