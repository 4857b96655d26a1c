from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slideqc.annotations import AnnotationSet, CLASS_INDEX, Polygon
from slideqc.dataset import (
    BalancePolicy,
    DatasetError,
    LabeledTile,
    ShardError,
    balance_training_set,
    extract_labeled_tiles,
    pack_shards,
    read_shard,
    read_shards,
    split_slides,
    tally,
    write_shard,
)
from slideqc.pyramid import build_pyramid

from conftest import make_tile


class TestSplit:
    def test_ten_slides(self):
        ids = [f"s{i}" for i in range(10)]
        a = split_slides(ids, 1)
        counts = {}
        for split in a.values():
            counts[split] = counts.get(split, 0) + 1
        assert counts == {"train": 6, "val": 2, "test": 2}

    def test_133_slides(self):
        ids = [f"slide-{i:03d}" for i in range(133)]
        a = split_slides(ids, 7)
        counts = {s: list(a.values()).count(s) for s in ("train", "val", "test")}
        assert counts == {"train": 80, "val": 27, "test": 26}

    def test_partition_no_leakage(self):
        ids = [f"s{i}" for i in range(23)]
        a = split_slides(ids, 3)
        assert sorted(a) == sorted(ids)  # every slide exactly once

    def test_deterministic(self):
        ids = [f"s{i}" for i in range(40)]
        assert split_slides(ids, 5) == split_slides(ids, 5)
        assert split_slides(ids, 5) != split_slides(ids, 6)

    def test_order_insensitive(self):
        ids = [f"s{i}" for i in range(12)]
        assert split_slides(ids, 2) == split_slides(list(reversed(ids)), 2)

    def test_too_few(self):
        with pytest.raises(DatasetError):
            split_slides(["a", "b", "c", "d"], 1)

    def test_proportions_within_one(self):
        for n in (5, 7, 12, 31, 100):
            a = split_slides([f"s{i}" for i in range(n)], 0)
            counts = {s: list(a.values()).count(s) for s in ("train", "val", "test")}
            assert abs(counts["train"] - 0.6 * n) <= 1
            assert abs(counts["val"] - 0.2 * n) <= 1
            assert abs(counts["test"] - 0.2 * n) <= 1


PEN = CLASS_INDEX["pen"]
FOLD = CLASS_INDEX["fold"]


def tiles_with_counts(counts: dict[str, int], label: int) -> list[LabeledTile]:
    tiles = []
    for slide_id in sorted(counts):
        for k in range(counts[slide_id]):
            tiles.append(make_tile(slide_id, label, ordinal=k, col=k))
    return tiles


def class_counts(tiles: list[LabeledTile], label: int) -> dict[str, int]:
    out: dict[str, int] = {}
    for t in tiles:
        if t.label == label:
            out[t.slide_id] = out.get(t.slide_id, 0) + 1
    return out


class TestBalance:
    def test_worked_example(self):
        tiles = tiles_with_counts({"a": 2, "b": 10, "c": 18}, PEN)
        out = balance_training_set(tiles, BalancePolicy(2.0))
        assert class_counts(out, PEN) == {"a": 10, "b": 10, "c": 18}

    def test_no_slide_below_half_mean(self):
        tiles = tiles_with_counts({"a": 9, "b": 10, "c": 11}, PEN)
        out = balance_training_set(tiles, BalancePolicy(2.0))
        assert out == tiles

    def test_single_slide_class(self):
        tiles = tiles_with_counts({"a": 7}, PEN)
        assert balance_training_set(tiles) == tiles

    def test_duplicates_cycle_in_ordinal_order(self):
        tiles = tiles_with_counts({"a": 2, "b": 10, "c": 18}, PEN)
        out = balance_training_set(tiles)
        dups = [t for t in out if t.duplicated_from is not None]
        assert len(dups) == 8
        assert all(d.slide_id == "a" for d in dups)
        sources = [d.duplicated_from for d in dups]
        assert sources == [0, 1, 0, 1, 0, 1, 0, 1]
        for d in dups:
            assert d.image_png == tiles[d.duplicated_from].image_png

    def test_negative_tiles_never_duplicated(self):
        tiles = tiles_with_counts({"a": 1, "b": 30}, 0) + tiles_with_counts({"a": 1, "b": 30}, 1)
        assert balance_training_set(tiles) == tiles

    def test_idempotent(self):
        tiles = tiles_with_counts({"a": 3, "b": 1, "c": 1, "d": 19}, FOLD)
        once = balance_training_set(tiles)
        twice = balance_training_set(once)
        assert once == twice

    def test_never_exceeds_floor_mean_random_tables(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            n_slides = int(rng.integers(1, 8))
            counts = {f"s{i}": int(rng.integers(1, 30)) for i in range(n_slides)}
            tiles = tiles_with_counts(counts, PEN)
            out = balance_training_set(tiles, BalancePolicy(2.0))
            mean = sum(counts.values()) / len(counts)
            new_counts = class_counts(out, PEN)
            for slide_id, original in counts.items():
                if original < mean / 2.0:
                    assert new_counts[slide_id] == int(np.floor(mean))
                else:
                    assert new_counts[slide_id] == original
            assert balance_training_set(out, BalancePolicy(2.0)) == out

    def test_factor_must_exceed_one(self):
        with pytest.raises(DatasetError):
            BalancePolicy(1.0)


class TestShards:
    def test_roundtrip_and_shard_sizes(self, tmp_path):
        rng = np.random.default_rng(1)
        tiles = [
            make_tile(f"s{i % 7}", int(rng.integers(0, 12)), ordinal=i,
                      payload=rng.bytes(int(rng.integers(1, 400))))
            for i in range(1000)
        ]
        paths = pack_shards(tiles, tmp_path, shard_max_records=256)
        assert [len(read_shard(p)) for p in paths] == [256, 256, 256, 232]
        assert read_shards(paths) == tiles

    @settings(max_examples=30, deadline=None)
    @given(
        rows=st.lists(
            st.tuples(st.text(min_size=0, max_size=12), st.integers(0, 11),
                      st.binary(max_size=64), st.binary(max_size=64)),
            min_size=1, max_size=8,
        )
    )
    def test_roundtrip_arbitrary_payloads(self, tmp_path_factory, rows):
        tiles = [
            LabeledTile(slide_id=sid, level=2, tile_size=256, col=i, row=0,
                        label=label, image_png=img, mask_png=mask,
                        duplicated_from=None if i % 2 else i)
            for i, (sid, label, img, mask) in enumerate(rows)
        ]
        path = tmp_path_factory.mktemp("shards") / "t.pqshard"
        write_shard(path, tiles)
        assert read_shard(path) == tiles

    def test_corruption_always_structured_error(self, tmp_path):
        tiles = [make_tile("s", 5, ordinal=i, payload=b"x" * (20 + i)) for i in range(20)]
        path = tmp_path / "c.pqshard"
        write_shard(path, tiles)
        clean = path.read_bytes()
        rng = np.random.default_rng(3)
        for _ in range(60):
            data = bytearray(clean)
            pos = int(rng.integers(0, len(data)))
            data[pos] ^= 1 << int(rng.integers(0, 8))
            path.write_bytes(bytes(data))
            try:
                result = read_shard(path)
                assert result == tiles, "corrupted shard read back a wrong payload"
            except ShardError:
                pass  # structured error is the expected outcome

    def test_truncation_names_record(self, tmp_path):
        tiles = [make_tile("s", 5, ordinal=i) for i in range(5)]
        path = tmp_path / "t.pqshard"
        write_shard(path, tiles)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ShardError) as err:
            read_shard(path)
        assert err.value.record_index == 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pqshard"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ShardError, match="magic"):
            read_shard(path)

    def test_pack_empty(self, tmp_path):
        with pytest.raises(DatasetError):
            pack_shards([], tmp_path, 10)


class TestExtraction:
    def test_full_pen_cover_and_blank(self, tmp_path):
        blank = np.full((512, 512, 3), 255, np.uint8)
        pyramid = build_pyramid(blank, "blank", 40.0, tmp_path / "blank")
        ann = AnnotationSet("blank", [])
        tiles = extract_labeled_tiles(pyramid, ann, 2, 128)
        assert len(tiles) == 4
        assert all(t.label == 0 for t in tiles)

        covered = AnnotationSet("blank", [
            Polygon(CLASS_INDEX["pen"], ((0, 0), (512, 0), (512, 512), (0, 512)))
        ])
        tiles = extract_labeled_tiles(pyramid, covered, 2, 128)
        assert [t.label for t in tiles] == [CLASS_INDEX["pen"]] * 4

    def test_row_major_order(self, tmp_path):
        blank = np.full((300, 300, 3), 255, np.uint8)
        pyramid = build_pyramid(blank, "b", 40.0, tmp_path / "b")
        tiles = extract_labeled_tiles(pyramid, AnnotationSet("b", []), 0, 128)
        assert [(t.row, t.col) for t in tiles[:4]] == [(0, 0), (0, 1), (0, 2), (1, 0)]

    def test_label_consistent_with_relabel(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
        pyramid = build_pyramid(img, "r", 40.0, tmp_path / "r")
        ann = AnnotationSet("r", [
            Polygon(CLASS_INDEX["dust"], ((0, 0), (100, 0), (100, 100), (0, 100)))
        ])
        from slideqc.annotations import label_tile
        from slideqc.dataset import image_from_png, mask_from_png

        for tile in extract_labeled_tiles(pyramid, ann, 0, 128):
            mask = mask_from_png(tile.mask_png)
            rgb = image_from_png(tile.image_png)
            assert tile.label == label_tile(mask, rgb)


class TestTally:
    def test_empty(self):
        assert tally([]).total() == 0

    def test_counts(self):
        tiles = [make_tile("s", CLASS_INDEX["pen"], ordinal=i) for i in range(3)]
        tiles += [make_tile("s", CLASS_INDEX["fold"], ordinal=i) for i in range(2)]
        table = tally(tiles)
        assert table.count("pen", 2, 256) == 3
        assert table.count("fold", 2, 256) == 2
        assert table.total() == 5
        rendered = table.render()
        assert "pen" in rendered and "total" in rendered
