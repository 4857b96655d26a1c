"""Pyramidal slide containers: level geometry, tile grids, and region reads.

A slide container is a directory holding ``pyramid.json`` plus one
lossless-compressed RGB raster ``L<k>.png`` per declared level. Levels are
indexed by even integers (L0 native, L2 half size, ...), with a downsample of
``2**(level/2)`` relative to L0. Under a 40x base objective this yields the
usual 20x/10x/5x ladder at L2/L4/L6.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

ALLOWED_LEVELS = (0, 2, 4, 6, 8)
SUPPORTED_TILE_SIZES = (128, 256, 512)
DEFAULT_UNSCANNED_FILL = (0, 255, 0)
PAD_COLOR = (255, 255, 255)

# Compression level for the per-level rasters; any zlib level is lossless,
# a low one keeps desk-scale corpus generation fast.
PNG_COMPRESS_LEVEL = 3

MANIFEST_NAME = "pyramid.json"


class PyramidError(Exception):
    """Malformed container, bad geometry, or an out-of-grid access."""


def downsample_for_level(level: int) -> int:
    """Downsample factor of an even pyramid level relative to L0."""
    if level % 2 != 0 or level < 0:
        raise PyramidError(f"level must be a non-negative even integer, got {level}")
    return 2 ** (level // 2)


def magnification_for_level(base_magnification: float, level: int) -> float:
    return base_magnification / downsample_for_level(level)


@dataclass(frozen=True)
class LevelGeometry:
    level: int
    width: int
    height: int

    @property
    def downsample(self) -> int:
        return downsample_for_level(self.level)


@dataclass(frozen=True)
class TileAddress:
    level: int
    tile_size: int
    col: int
    row: int
    valid_width: int
    valid_height: int


@dataclass(frozen=True)
class RasterTile:
    address: TileAddress
    pixels: np.ndarray  # (tile_size, tile_size, 3) uint8, pad filled white

    def valid_region(self) -> np.ndarray:
        """The non-padded crop of the tile."""
        a = self.address
        return self.pixels[: a.valid_height, : a.valid_width]


@dataclass
class SlidePyramid:
    slide_id: str
    base_width: int
    base_height: int
    base_magnification: float
    levels: list[LevelGeometry]
    unscanned_fill: tuple[int, int, int]
    storage_root: Path
    _rasters: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def level_geometry(self, level: int) -> LevelGeometry:
        for geom in self.levels:
            if geom.level == level:
                return geom
        raise PyramidError(f"level L{level} not declared for slide {self.slide_id!r}")

    def has_level(self, level: int) -> bool:
        return any(g.level == level for g in self.levels)

    def level_raster(self, level: int) -> np.ndarray:
        """Full RGB raster of a level, loaded once and shared across readers."""
        geom = self.level_geometry(level)
        with self._lock:
            raster = self._rasters.get(level)
            if raster is None:
                path = self.storage_root / f"L{level}.png"
                try:
                    with Image.open(path) as img:
                        raster = np.asarray(img.convert("RGB"))
                except OSError as exc:
                    raise PyramidError(f"unreadable raster {path}: {exc}") from exc
                if raster.shape[:2] != (geom.height, geom.width):
                    raise PyramidError(
                        f"level raster mismatch at L{level}: stored "
                        f"{raster.shape[1]}x{raster.shape[0]}, declared "
                        f"{geom.width}x{geom.height}"
                    )
                raster.setflags(write=False)
                self._rasters[level] = raster
            return raster


def _expected_level_size(base_width: int, base_height: int, level: int) -> tuple[int, int]:
    ds = downsample_for_level(level)
    return math.ceil(base_width / ds), math.ceil(base_height / ds)


def _validate_geometry(pyramid: SlidePyramid) -> None:
    if pyramid.base_width < 1 or pyramid.base_height < 1:
        raise PyramidError("base dimensions must be positive")
    seen: set[int] = set()
    for geom in pyramid.levels:
        if geom.level not in ALLOWED_LEVELS:
            raise PyramidError(f"level index {geom.level} not in {ALLOWED_LEVELS}")
        if geom.level in seen:
            raise PyramidError(f"duplicate level L{geom.level}")
        seen.add(geom.level)
        if geom.width < 1 or geom.height < 1:
            raise PyramidError(f"non-positive dimensions at L{geom.level}")
        exp_w, exp_h = _expected_level_size(pyramid.base_width, pyramid.base_height, geom.level)
        if (geom.width, geom.height) != (exp_w, exp_h):
            raise PyramidError(
                f"L{geom.level} declared {geom.width}x{geom.height}, expected {exp_w}x{exp_h}"
            )
    if 0 not in seen:
        raise PyramidError("container must declare level L0")


def open_slide(path: str | Path) -> SlidePyramid:
    """Open a slide container and validate its manifest against stored rasters.

    Raster pixel data is loaded lazily; only PNG headers are checked here.
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise PyramidError(f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PyramidError(f"unreadable manifest {manifest_path}: {exc}") from exc

    try:
        levels = [
            LevelGeometry(level=int(e["level"]), width=int(e["width"]), height=int(e["height"]))
            for e in manifest["levels"]
        ]
        pyramid = SlidePyramid(
            slide_id=str(manifest["slide_id"]),
            base_width=int(manifest["base_width"]),
            base_height=int(manifest["base_height"]),
            base_magnification=float(manifest["base_magnification"]),
            levels=sorted(levels, key=lambda g: g.level),
            unscanned_fill=tuple(int(c) for c in manifest["unscanned_fill"]),
            storage_root=root,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PyramidError(f"malformed manifest {manifest_path}: {exc}") from exc

    _validate_geometry(pyramid)
    for geom in pyramid.levels:
        raster_path = root / f"L{geom.level}.png"
        if not raster_path.is_file():
            raise PyramidError(f"missing raster {raster_path}")
        with Image.open(raster_path) as img:
            stored = img.size
        if stored != (geom.width, geom.height):
            raise PyramidError(
                f"level raster mismatch at L{geom.level}: stored "
                f"{stored[0]}x{stored[1]}, declared {geom.width}x{geom.height}"
            )
    return pyramid


def tile_grid(
    pyramid: SlidePyramid, level: int, tile_size: int
) -> tuple[int, int, list[TileAddress]]:
    """Enumerate the tile grid of a level, row-major, with edge valid extents."""
    if tile_size not in SUPPORTED_TILE_SIZES:
        raise PyramidError(f"unsupported tile size {tile_size}, expected one of {SUPPORTED_TILE_SIZES}")
    geom = pyramid.level_geometry(level)
    cols = math.ceil(geom.width / tile_size)
    rows = math.ceil(geom.height / tile_size)
    addresses = []
    for row in range(rows):
        vh = min(tile_size, geom.height - row * tile_size)
        for col in range(cols):
            vw = min(tile_size, geom.width - col * tile_size)
            addresses.append(
                TileAddress(level=level, tile_size=tile_size, col=col, row=row,
                            valid_width=vw, valid_height=vh)
            )
    return cols, rows, addresses


def read_tile(pyramid: SlidePyramid, address: TileAddress) -> RasterTile:
    """Crop one tile from a level raster, padding edge tiles with white."""
    geom = pyramid.level_geometry(address.level)
    t = address.tile_size
    if t not in SUPPORTED_TILE_SIZES:
        raise PyramidError(f"unsupported tile size {t}")
    cols = math.ceil(geom.width / t)
    rows = math.ceil(geom.height / t)
    if not (0 <= address.col < cols and 0 <= address.row < rows):
        raise PyramidError(
            f"address ({address.col},{address.row}) outside {cols}x{rows} grid at L{address.level}"
        )
    raster = pyramid.level_raster(address.level)
    x0, y0 = address.col * t, address.row * t
    crop = raster[y0 : y0 + t, x0 : x0 + t]
    vh, vw = crop.shape[:2]
    pixels = np.full((t, t, 3), PAD_COLOR, dtype=np.uint8)
    pixels[:vh, :vw] = crop
    resolved = TileAddress(
        level=address.level, tile_size=t, col=address.col, row=address.row,
        valid_width=vw, valid_height=vh,
    )
    return RasterTile(address=resolved, pixels=pixels)


def box_downsample_2x(image: np.ndarray) -> np.ndarray:
    """Average 2x2 blocks; an odd trailing row/column is averaged over what exists.

    Output size is ceil(n/2) per axis. Means are rounded half-up for exact
    integer reasoning in tests.
    """
    h, w = image.shape[:2]
    out_h, out_w = math.ceil(h / 2), math.ceil(w / 2)
    sums = np.zeros((out_h, out_w, image.shape[2]), dtype=np.uint32)
    counts = np.zeros((out_h, out_w, 1), dtype=np.uint32)
    for dy in (0, 1):
        for dx in (0, 1):
            block = image[dy::2, dx::2]
            bh, bw = block.shape[:2]
            sums[:bh, :bw] += block
            counts[:bh, :bw] += 1
    # round-half-up: floor((2*sum + count) / (2*count))
    return ((2 * sums + counts) // (2 * counts)).astype(np.uint8)


def build_pyramid(
    base_image: np.ndarray,
    slide_id: str,
    base_magnification: float,
    out_path: str | Path,
    unscanned_fill: tuple[int, int, int] = DEFAULT_UNSCANNED_FILL,
    levels: tuple[int, ...] = (0, 2, 4, 6),
) -> SlidePyramid:
    """Write a slide container for an RGB base image.

    Each level is the previous even level box-filtered by 2, so stored
    geometry matches ceil(base / 2**(L/2)) exactly.
    """
    base = np.asarray(base_image)
    if base.ndim != 3 or base.shape[2] != 3:
        raise PyramidError("base image must be RGB (H, W, 3)")
    if base.shape[0] < 1 or base.shape[1] < 1:
        raise PyramidError("zero-dimension image")
    base = base.astype(np.uint8, copy=False)

    root = Path(out_path)
    root.mkdir(parents=True, exist_ok=True)

    geoms: list[LevelGeometry] = []
    current = base
    prev_level = 0
    for level in sorted(levels):
        if level % 2 != 0:
            raise PyramidError(f"odd level index {level}")
        for _ in range((level - prev_level) // 2):
            current = box_downsample_2x(current)
        prev_level = level
        geoms.append(LevelGeometry(level=level, width=current.shape[1], height=current.shape[0]))
        Image.fromarray(current, "RGB").save(
            root / f"L{level}.png", compress_level=PNG_COMPRESS_LEVEL
        )

    manifest = {
        "slide_id": slide_id,
        "base_width": int(base.shape[1]),
        "base_height": int(base.shape[0]),
        "base_magnification": float(base_magnification),
        "unscanned_fill": [int(c) for c in unscanned_fill],
        "levels": [{"level": g.level, "width": g.width, "height": g.height} for g in geoms],
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")

    pyramid = SlidePyramid(
        slide_id=slide_id,
        base_width=int(base.shape[1]),
        base_height=int(base.shape[0]),
        base_magnification=float(base_magnification),
        levels=geoms,
        unscanned_fill=tuple(int(c) for c in unscanned_fill),
        storage_root=root,
    )
    _validate_geometry(pyramid)
    return pyramid


def tile_to_png(tile: RasterTile) -> bytes:
    """Deterministic PNG encoding of a tile, shared by dataset packing and the HTTP facade."""
    import io

    buf = io.BytesIO()
    Image.fromarray(tile.pixels, "RGB").save(buf, format="PNG", compress_level=PNG_COMPRESS_LEVEL)
    return buf.getvalue()
