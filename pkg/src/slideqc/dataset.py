"""Labeled-tile datasets: slide splits, extraction, balancing, shard packing.

Shard files use a small checksummed binary format (``.pqshard``) so that
round trips are byte-exact and corruption is always detected with the
failing record index.
"""

from __future__ import annotations

import io
import random
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .annotations import (
    ARTIFACT_INDICES,
    CLASS_COLORS,
    CLASS_NAMES,
    AnnotationSet,
    LabelPolicy,
    label_tile,
    rasterize,
)
from .pyramid import RasterTile, SlidePyramid, TileAddress, read_tile, tile_grid, tile_to_png

SHARD_MAGIC = b"PQSH"
SHARD_VERSION = 1

SPLITS = ("train", "val", "test")


class DatasetError(Exception):
    """Bad split input or invalid balancing request."""


class ShardError(Exception):
    """Corrupt shard file; carries the failing record index when known."""

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


@dataclass(frozen=True)
class LabeledTile:
    slide_id: str
    level: int
    tile_size: int
    col: int
    row: int
    label: int
    image_png: bytes
    mask_png: bytes
    duplicated_from: int | None = None


@dataclass
class BalancePolicy:
    """Duplicate minority-slide tiles up to the per-class mean.

    Slides whose original count for a class falls more than ``factor`` below
    the class mean get their own tiles copied (cycled in ordinal order) until
    the count reaches floor(mean). Only the training split is ever balanced.
    """

    factor: float = 2.0

    def __post_init__(self) -> None:
        if self.factor <= 1.0:
            raise DatasetError(f"balance factor must exceed 1, got {self.factor}")


# ---------------------------------------------------------------------------
# slide-level split
# ---------------------------------------------------------------------------

def split_slides(slide_ids: list[str], seed: int) -> dict[str, str]:
    """Deterministic 60:20:20 slide-level split with no overlap.

    Counts round to nearest (train then val), the remainder going to test;
    integer arithmetic avoids float-rounding surprises.
    """
    if len(slide_ids) < 5:
        raise DatasetError(f"need at least 5 slides to split, got {len(slide_ids)}")
    if len(set(slide_ids)) != len(slide_ids):
        raise DatasetError("duplicate slide ids")
    ordered = sorted(slide_ids)
    random.Random(seed).shuffle(ordered)
    n = len(ordered)
    n_train = (6 * n + 5) // 10
    n_val = (2 * n + 5) // 10
    assignment = {}
    for i, slide_id in enumerate(ordered):
        if i < n_train:
            assignment[slide_id] = "train"
        elif i < n_train + n_val:
            assignment[slide_id] = "val"
        else:
            assignment[slide_id] = "test"
    return assignment


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

def _mask_to_png(mask: np.ndarray) -> bytes:
    img = Image.fromarray(mask, mode="P")
    palette: list[int] = []
    for name in CLASS_NAMES:
        palette.extend(CLASS_COLORS[name])
    img.putpalette(palette)
    buf = io.BytesIO()
    img.save(buf, format="PNG", compress_level=3)
    return buf.getvalue()


def mask_from_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img, dtype=np.uint8)


def image_from_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def extract_labeled_tiles(
    pyramid: SlidePyramid,
    annotation_set: AnnotationSet,
    level: int,
    tile_size: int,
    policy: LabelPolicy | None = None,
) -> list[LabeledTile]:
    """One labeled tile per grid address, row-major; all-pad tiles are skipped."""
    _, _, addresses = tile_grid(pyramid, level, tile_size)
    tiles = []
    for address in addresses:
        if address.valid_width <= 0 or address.valid_height <= 0:
            continue
        raster = read_tile(pyramid, address)
        mask = rasterize(annotation_set, address, pyramid)
        label = label_tile(mask, raster.pixels, policy, pyramid.unscanned_fill)
        tiles.append(
            LabeledTile(
                slide_id=pyramid.slide_id,
                level=level,
                tile_size=tile_size,
                col=address.col,
                row=address.row,
                label=label,
                image_png=tile_to_png(raster),
                mask_png=_mask_to_png(mask),
            )
        )
    return tiles


def tile_address(tile: LabeledTile) -> TileAddress:
    arr = mask_from_png(tile.mask_png)
    return TileAddress(
        level=tile.level, tile_size=tile.tile_size, col=tile.col, row=tile.row,
        valid_width=arr.shape[1], valid_height=arr.shape[0],
    )


def tile_raster(tile: LabeledTile) -> RasterTile:
    return RasterTile(address=tile_address(tile), pixels=image_from_png(tile.image_png))


# ---------------------------------------------------------------------------
# balancing
# ---------------------------------------------------------------------------

def balance_training_set(tiles: list[LabeledTile], policy: BalancePolicy | None = None) -> list[LabeledTile]:
    """Append duplicates of minority-slide artifact tiles, per class.

    The class mean is computed over original (non-duplicate) tiles of slides
    holding at least one, so re-running on already-balanced output is a
    no-op. Background and tissue tiles are never duplicated, and duplicates
    always come from the same slide.
    """
    if policy is None:
        policy = BalancePolicy()

    originals_by: dict[tuple[str, int], list[int]] = {}
    total_by: dict[tuple[str, int], int] = {}
    for ordinal, tile in enumerate(tiles):
        if tile.label not in ARTIFACT_INDICES:
            continue
        key = (tile.slide_id, tile.label)
        total_by[key] = total_by.get(key, 0) + 1
        if tile.duplicated_from is None:
            originals_by.setdefault(key, []).append(ordinal)

    out = list(tiles)
    for class_index in ARTIFACT_INDICES:
        slide_counts = {
            slide_id: len(ordinals)
            for (slide_id, ci), ordinals in originals_by.items()
            if ci == class_index
        }
        if not slide_counts:
            continue
        mean = sum(slide_counts.values()) / len(slide_counts)
        target = int(np.floor(mean))
        for slide_id in sorted(slide_counts):
            if slide_counts[slide_id] >= mean / policy.factor:
                continue
            ordinals = originals_by[(slide_id, class_index)]
            current = total_by.get((slide_id, class_index), 0)
            k = 0
            while current < target:
                source = ordinals[k % len(ordinals)]
                out.append(replace(tiles[source], duplicated_from=source))
                current += 1
                k += 1
    return out


# ---------------------------------------------------------------------------
# shard format
# ---------------------------------------------------------------------------

def _encode_record(tile: LabeledTile) -> bytes:
    slide = tile.slide_id.encode("utf-8")
    dup = -1 if tile.duplicated_from is None else int(tile.duplicated_from)
    return b"".join(
        [
            struct.pack("<I", len(slide)), slide,
            struct.pack("<BHIIB", tile.level, tile.tile_size, tile.col, tile.row, tile.label),
            struct.pack("<I", len(tile.image_png)), tile.image_png,
            struct.pack("<I", len(tile.mask_png)), tile.mask_png,
            struct.pack("<q", dup),
        ]
    )


def _decode_record(payload: bytes, index: int) -> LabeledTile:
    try:
        view = memoryview(payload)
        pos = 0

        def take(n: int) -> memoryview:
            nonlocal pos
            if pos + n > len(view):
                raise ShardError(f"record {index}: payload truncated", index)
            chunk = view[pos : pos + n]
            pos += n
            return chunk

        (slide_len,) = struct.unpack("<I", take(4))
        slide_id = bytes(take(slide_len)).decode("utf-8")
        level, tile_size, col, row, label = struct.unpack("<BHIIB", take(12))
        (img_len,) = struct.unpack("<I", take(4))
        image_png = bytes(take(img_len))
        (mask_len,) = struct.unpack("<I", take(4))
        mask_png = bytes(take(mask_len))
        (dup,) = struct.unpack("<q", take(8))
        if pos != len(view):
            raise ShardError(f"record {index}: {len(view) - pos} trailing bytes", index)
    except struct.error as exc:
        raise ShardError(f"record {index}: malformed payload: {exc}", index) from exc
    return LabeledTile(
        slide_id=slide_id, level=level, tile_size=tile_size, col=col, row=row,
        label=label, image_png=image_png, mask_png=mask_png,
        duplicated_from=None if dup < 0 else dup,
    )


def write_shard(path: str | Path, tiles: list[LabeledTile]) -> None:
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<HI", SHARD_VERSION, len(tiles)))
        for tile in tiles:
            payload = _encode_record(tile)
            fh.write(struct.pack("<II", len(payload), zlib.crc32(payload)))
            fh.write(payload)


def read_shard(path: str | Path) -> list[LabeledTile]:
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != SHARD_MAGIC:
        raise ShardError(f"{path}: bad magic")
    version, count = struct.unpack("<HI", data[4:10])
    if version != SHARD_VERSION:
        raise ShardError(f"{path}: unsupported version {version}")
    tiles = []
    pos = 10
    for index in range(count):
        if pos + 8 > len(data):
            raise ShardError(f"record {index}: header truncated", index)
        length, crc = struct.unpack("<II", data[pos : pos + 8])
        pos += 8
        if pos + length > len(data):
            raise ShardError(f"record {index}: length overruns file", index)
        payload = data[pos : pos + length]
        pos += length
        if zlib.crc32(payload) != crc:
            raise ShardError(f"record {index}: checksum mismatch", index)
        tiles.append(_decode_record(payload, index))
    if pos != len(data):
        raise ShardError(f"{len(data) - pos} trailing bytes after {count} records")
    return tiles


def pack_shards(
    tiles: list[LabeledTile], out_dir: str | Path, shard_max_records: int, prefix: str = "shard"
) -> list[Path]:
    """Write tiles into numbered shard files of at most shard_max_records each."""
    if not tiles:
        raise DatasetError("no tiles to pack")
    if shard_max_records < 1:
        raise DatasetError("shard_max_records must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(0, len(tiles), shard_max_records):
        path = out / f"{prefix}-{k // shard_max_records:05d}.pqshard"
        write_shard(path, tiles[k : k + shard_max_records])
        paths.append(path)
    return paths


def read_shards(paths: list[str | Path]) -> list[LabeledTile]:
    tiles: list[LabeledTile] = []
    for path in paths:
        tiles.extend(read_shard(path))
    return tiles


# ---------------------------------------------------------------------------
# tallies
# ---------------------------------------------------------------------------

@dataclass
class TallyTable:
    # counts[class_name][(level, tile_size)] -> tile count
    counts: dict[str, dict[tuple[int, int], int]] = field(default_factory=dict)

    def add(self, class_name: str, level: int, tile_size: int, n: int = 1) -> None:
        per = self.counts.setdefault(class_name, {})
        per[(level, tile_size)] = per.get((level, tile_size), 0) + n

    def count(self, class_name: str, level: int, tile_size: int) -> int:
        return self.counts.get(class_name, {}).get((level, tile_size), 0)

    def total(self, level: int | None = None, tile_size: int | None = None) -> int:
        total = 0
        for per in self.counts.values():
            for (lv, ts), n in per.items():
                if (level is None or lv == level) and (tile_size is None or ts == tile_size):
                    total += n
        return total

    def grid_points(self) -> list[tuple[int, int]]:
        points = {lt for per in self.counts.values() for lt in per}
        return sorted(points)

    def render(self) -> str:
        """Text table: classes as rows, (level, tile size) columns, totals row."""
        points = self.grid_points()
        header = ["class"] + [f"L{lv} {ts}px" for lv, ts in points]
        rows = [header]
        for name in CLASS_NAMES:
            if name not in self.counts:
                continue
            rows.append([name] + [str(self.count(name, lv, ts)) for lv, ts in points])
        rows.append(["total"] + [str(self.total(lv, ts)) for lv, ts in points])
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows
        )


def tally(tiles: list[LabeledTile]) -> TallyTable:
    table = TallyTable()
    for tile in tiles:
        table.add(CLASS_NAMES[tile.label], tile.level, tile.tile_size)
    return table
