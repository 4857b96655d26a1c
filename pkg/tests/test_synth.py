from __future__ import annotations

import json

import numpy as np
import pytest

from slideqc.annotations import CLASS_INDEX, luminance, parse_annotations
from slideqc.dataset import extract_labeled_tiles
from slideqc.pyramid import open_slide
from slideqc.synth import (
    ArtifactSpec,
    CorpusConfig,
    RENDERERS,
    SynthError,
    _polygon_window,
    apply_artifact,
    generate_corpus,
    generate_tissue,
    sample_placement,
)
from slideqc.util import digest_tree


def saturation(img: np.ndarray) -> np.ndarray:
    rgb = img.astype(np.float64) / 255.0
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    return np.where(cmax > 0, (cmax - cmin) / np.where(cmax > 0, cmax, 1), 0.0)


class TestTissue:
    def test_fraction_in_range_seed1(self):
        img = generate_tissue(1, 1024, 1024)
        fraction = float((img != 255).any(axis=-1).mean())
        assert 0.20 <= fraction <= 0.60

    def test_fraction_range_across_seeds(self):
        for seed in range(2, 8):
            img = generate_tissue(seed, 512, 384)
            fraction = float((img != 255).any(axis=-1).mean())
            assert 0.20 <= fraction <= 0.60, (seed, fraction)

    def test_deterministic(self):
        a = generate_tissue(1, 256, 256)
        b = generate_tissue(1, 256, 256)
        assert np.array_equal(a, b)

    def test_seed_changes_output(self):
        a = generate_tissue(1, 256, 256)
        b = generate_tissue(2, 256, 256)
        assert not np.array_equal(a, b)

    def test_zero_dimension(self):
        with pytest.raises(SynthError):
            generate_tissue(1, 0, 100)


@pytest.fixture(scope="module")
def tissue_1k():
    img = generate_tissue(11, 1024, 1024)
    return img, luminance(img) < 0.88


class TestRenderers:
    def test_pen_chroma_exceeds_tissue(self, tissue_1k):
        img, _ = tissue_1k
        tissue_chroma = saturation(img)[(img != 255).any(axis=-1)]
        p99 = np.quantile(tissue_chroma, 0.99)
        for color in ("blue", "green"):
            spec = ArtifactSpec("pen", seed=3, placement={
                "x0": 200.0, "y0": 200.0, "x1": 800.0, "y1": 700.0,
                "width": 40.0, "color": color,
            })
            out, poly = apply_artifact(img, spec)
            x0, y0, mask = _polygon_window(poly, 1024, 1024)
            crop = out[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
            core = mask & (saturation(crop) > 0)
            stroke_chroma = np.median(saturation(crop)[core])
            assert stroke_chroma > p99

    def test_focus_blur_halves_laplacian_variance(self, tissue_1k):
        img, tissue = tissue_1k
        ys, xs = np.nonzero(tissue)
        cx, cy = float(xs[len(xs) // 2]), float(ys[len(ys) // 2])
        cx, cy = min(max(cx, 220.0), 800.0), min(max(cy, 220.0), 800.0)
        spec = ArtifactSpec("focus", seed=5, placement={"cx": cx, "cy": cy, "radius": 200.0})
        out, poly = apply_artifact(img, spec)
        x0, y0, mask = _polygon_window(poly, 1024, 1024)

        def lap_var(region):
            lum = luminance(region)
            lap = (lum[:-2, 1:-1] + lum[2:, 1:-1] + lum[1:-1, :-2] + lum[1:-1, 2:]
                   - 4 * lum[1:-1, 1:-1])
            return float(np.var(lap[mask[1:-1, 1:-1]]))

        before = lap_var(img[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]])
        after = lap_var(out[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]])
        assert after < 0.5 * before

    def test_dropped_tissue_green_fill(self, tissue_1k):
        img, _ = tissue_1k
        spec = ArtifactSpec("dropped_tissue", seed=1, placement={
            "x0": 100.0, "y0": 100.0, "x1": 300.0, "y1": 260.0,
        })
        out, poly = apply_artifact(img, spec)
        assert (out[150, 150] == (0, 255, 0)).all()
        assert (out[101:259, 101:299] == (0, 255, 0)).all()

    def test_locality_every_renderer(self, tissue_1k):
        img, tissue = tissue_1k
        rng = np.random.default_rng(77)
        for name in sorted(RENDERERS):
            placement = sample_placement(name, rng, 1024, 1024, tissue)
            spec = ArtifactSpec(name, seed=int(rng.integers(2**32)), placement=placement)
            out, poly = apply_artifact(img, spec)
            changed = (out != img).any(axis=-1)
            x0, y0, mask = _polygon_window(poly, 1024, 1024)
            outside = changed.copy()
            outside[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]] &= ~mask
            assert int(outside.sum()) == 0, name

    def test_input_image_unmodified(self, tissue_1k):
        img, _ = tissue_1k
        before = img.copy()
        apply_artifact(img, ArtifactSpec("debris", seed=2, placement={
            "cx": 500.0, "cy": 500.0, "radius": 40.0,
        }))
        assert np.array_equal(img, before)

    def test_out_of_bounds_placement(self, tissue_1k):
        img, _ = tissue_1k
        with pytest.raises(SynthError, match="outside"):
            apply_artifact(img, ArtifactSpec("focus", seed=1, placement={
                "cx": 1000.0, "cy": 1000.0, "radius": 100.0,
            }))

    def test_unknown_class(self, tissue_1k):
        img, _ = tissue_1k
        with pytest.raises(SynthError, match="renderer"):
            apply_artifact(img, ArtifactSpec("smudge", seed=1, placement={}))

    def test_spec_determinism(self, tissue_1k):
        img, _ = tissue_1k
        spec = ArtifactSpec("dust", seed=9, placement={"cx": 300.0, "cy": 300.0,
                                                       "radius": 60.0, "count": 12})
        a, pa = apply_artifact(img, spec)
        b, pb = apply_artifact(img, spec)
        assert np.array_equal(a, b) and pa == pb


def small_corpus_config(**overrides) -> CorpusConfig:
    kwargs = dict(
        slide_count=3, width=768, height=512, seed=99, clean_slides=0,
        classes={"pen": {"probability": 1.0, "count_range": [1, 1]}},
        pen_colors=("blue",),
    )
    kwargs.update(overrides)
    return CorpusConfig(**kwargs)


class TestCorpus:
    def test_planted_pen_on_every_slide(self, tmp_path):
        manifest = generate_corpus(small_corpus_config(), tmp_path / "c")
        assert len(manifest["slides"]) == 3
        for entry in manifest["slides"]:
            ann = parse_annotations((tmp_path / "c" / entry["annotation_file"]).read_bytes())
            assert any(p.class_index == CLASS_INDEX["pen"] for p in ann.polygons)
            assert "pen" in entry["planted_classes"]

    def test_probability_zero_plants_nothing(self, tmp_path):
        cfg = small_corpus_config(classes={
            name: {"probability": 0.0, "count_range": [1, 1]}
            for name in ("pen", "fold", "dust")
        })
        generate_corpus(cfg, tmp_path / "c")
        for i in range(3):
            ann = parse_annotations((tmp_path / "c" / f"synth-{i:03d}.ann.json").read_bytes())
            assert ann.polygons == []

    def test_clean_slides_have_no_artifacts(self, tmp_path):
        cfg = small_corpus_config(clean_slides=2)
        generate_corpus(cfg, tmp_path / "c")
        for i in range(2):
            ann = parse_annotations((tmp_path / "c" / f"synth-{i:03d}.ann.json").read_bytes())
            assert ann.polygons == []

    def test_corpus_byte_identical_across_runs_and_workers(self, tmp_path):
        generate_corpus(small_corpus_config(), tmp_path / "a", workers=1)
        generate_corpus(small_corpus_config(), tmp_path / "b", workers=3)
        assert digest_tree(tmp_path / "a") == digest_tree(tmp_path / "b")

    def test_ground_truth_consistency(self, tmp_path):
        """Every planted artifact with polygon area >= one tile labels a tile."""
        cfg = small_corpus_config(
            slide_count=2,
            classes={
                "fold": {"probability": 1.0, "count_range": [1, 1]},
                "focus": {"probability": 1.0, "count_range": [1, 1]},
            },
        )
        generate_corpus(cfg, tmp_path / "c")
        tile_area_l0 = (256 * 2) ** 2  # one L2 tile in L0 pixels
        for i in range(2):
            slide_dir = tmp_path / "c" / f"synth-{i:03d}"
            pyramid = open_slide(slide_dir)
            ann = parse_annotations((tmp_path / "c" / f"synth-{i:03d}.ann.json").read_bytes())
            tiles = extract_labeled_tiles(pyramid, ann, 2, 256)
            labels = {t.label for t in tiles}
            for polygon in ann.polygons:
                pts = np.asarray(polygon.points)
                # shoelace area
                x, y = pts[:, 0], pts[:, 1]
                area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
                if area >= tile_area_l0:
                    assert polygon.class_index in labels

    def test_invalid_config(self):
        with pytest.raises(SynthError):
            CorpusConfig(slide_count=0, width=10, height=10, seed=1).validate()
        with pytest.raises(SynthError):
            small_corpus_config(classes={"nope": {"probability": 0.5}}).validate()
