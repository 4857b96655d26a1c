from __future__ import annotations

import numpy as np
import pytest

from slideqc.dataset import LabeledTile
from slideqc.pyramid import (
    LevelGeometry,
    RasterTile,
    SlidePyramid,
    TileAddress,
    build_pyramid,
    open_slide,
)


def geometry_only_pyramid(base_width: int, base_height: int, levels=(0, 2, 4)) -> SlidePyramid:
    """A pyramid handle for grid math; no rasters behind it."""
    import math

    geoms = [
        LevelGeometry(level=lv, width=math.ceil(base_width / 2 ** (lv // 2)),
                      height=math.ceil(base_height / 2 ** (lv // 2)))
        for lv in levels
    ]
    return SlidePyramid(
        slide_id="geom", base_width=base_width, base_height=base_height,
        base_magnification=40.0, levels=geoms, unscanned_fill=(0, 255, 0),
        storage_root=None,
    )


def full_tile(pixels: np.ndarray, level: int = 2, tile_size: int | None = None) -> RasterTile:
    """Wrap an RGB array as a fully-valid tile (padded up to tile_size)."""
    h, w = pixels.shape[:2]
    t = tile_size or max(h, w)
    if t not in (128, 256, 512):
        t = 128 if t <= 128 else 256 if t <= 256 else 512
    buf = np.full((t, t, 3), 255, dtype=np.uint8)
    buf[:h, :w] = pixels
    return RasterTile(
        address=TileAddress(level=level, tile_size=t, col=0, row=0,
                            valid_width=w, valid_height=h),
        pixels=buf,
    )


def make_tile(slide_id: str, label: int, ordinal: int = 0, col: int = 0, row: int = 0,
              payload: bytes = b"") -> LabeledTile:
    """Minimal labeled tile for dataset-level tests; image bytes are arbitrary."""
    return LabeledTile(
        slide_id=slide_id, level=2, tile_size=256, col=col, row=row, label=label,
        image_png=payload or f"img-{slide_id}-{ordinal}".encode(),
        mask_png=f"mask-{slide_id}-{ordinal}".encode(),
    )


@pytest.fixture(scope="session")
def small_container(tmp_path_factory):
    """A 1000x1000 gradient slide container on disk."""
    rng = np.random.default_rng(42)
    base = rng.integers(0, 256, (1000, 1000, 3), dtype=np.uint8)
    root = tmp_path_factory.mktemp("container") / "grad-slide"
    build_pyramid(base, "grad-slide", 40.0, root)
    return open_slide(root), base
