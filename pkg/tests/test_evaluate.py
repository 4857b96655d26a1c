from __future__ import annotations

import numpy as np
import pytest

from slideqc.annotations import CLASS_INDEX, CLASS_NAMES
from slideqc.evaluate import (
    EvaluationError,
    collapse_artifact_vs_background,
    confusion,
    per_class_metrics,
    run_ablation,
)

from conftest import make_tile

PEN = CLASS_INDEX["pen"]
FOLD = CLASS_INDEX["fold"]
CHATTER = CLASS_INDEX["chatter"]


def brute_force_metrics(truths, preds, class_index, k):
    """Independent per-pair counter for one class."""
    tp = sum(1 for t, p in zip(truths, preds) if t == class_index and p == class_index)
    fn = sum(1 for t, p in zip(truths, preds) if t == class_index and p != class_index)
    fp = sum(1 for t, p in zip(truths, preds) if t != class_index and p == class_index)
    tn = sum(1 for t, p in zip(truths, preds) if t != class_index and p != class_index)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    specificity = tn / (tn + fp) if tn + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, specificity, f1, tp + fn


class TestConfusion:
    def test_diagonal(self):
        cm = confusion([PEN, PEN, FOLD], [PEN, PEN, FOLD])
        assert cm.counts[PEN, PEN] == 2
        assert cm.counts[FOLD, FOLD] == 1
        assert cm.total == 3

    def test_empty(self):
        cm = confusion([], [])
        assert cm.counts.sum() == 0

    def test_chatter_misread_as_fold(self):
        cm = confusion([CHATTER], [FOLD])
        assert cm.counts[CHATTER, FOLD] == 1

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError):
            confusion([1], [1, 2])

    def test_unknown_label(self):
        with pytest.raises(EvaluationError):
            confusion([99], [0])


class TestPerClassMetrics:
    def test_hand_computed_2class(self):
        cm = confusion([0] * 10 + [1] * 10,
                       [0] * 9 + [1] + [0] * 2 + [1] * 8,
                       class_names=("a", "b"))
        assert cm.counts.tolist() == [[9, 1], [2, 8]]
        m = per_class_metrics(cm)
        a = m.per_class["a"]
        assert abs(a.precision - 9 / 11) <= 1e-9
        assert abs(a.recall - 0.9) <= 1e-9
        assert abs(a.specificity - 0.8) <= 1e-9
        assert abs(a.f1 - (2 * (9 / 11) * 0.9 / (9 / 11 + 0.9))) <= 1e-9
        assert abs(m.accuracy - 0.85) <= 1e-9

    def test_perfect_diagonal(self):
        truths = [PEN] * 3 + [FOLD] * 4
        m = per_class_metrics(confusion(truths, truths))
        assert m.accuracy == 1.0
        assert m.macro_f1 == 1.0
        assert m.per_class["pen"].precision == 1.0

    def test_zero_support_excluded_from_macro(self):
        truths = [PEN] * 4
        preds = [PEN] * 3 + [FOLD]
        m = per_class_metrics(confusion(truths, preds))
        assert m.per_class["fold"].support == 0
        # macro over classes with support > 0 only: just pen
        assert abs(m.macro_recall - 0.75) <= 1e-12

    def test_matches_bruteforce_on_random_vectors(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            n = int(rng.integers(1, 60))
            truths = rng.integers(0, 12, n).tolist()
            preds = rng.integers(0, 12, n).tolist()
            m = per_class_metrics(confusion(truths, preds))
            for ci, name in enumerate(CLASS_NAMES):
                p, r, s, f1, support = brute_force_metrics(truths, preds, ci, 12)
                got = m.per_class[name]
                assert got.precision == p and got.recall == r
                assert got.specificity == s and got.f1 == f1 and got.support == support

    def test_empty_matrix_rejected(self):
        with pytest.raises(EvaluationError):
            per_class_metrics(confusion([], []))

    def test_accuracy_permutation_invariant(self):
        rng = np.random.default_rng(3)
        truths = rng.integers(0, 5, 50).tolist()
        preds = rng.integers(0, 5, 50).tolist()
        base = per_class_metrics(confusion(truths, preds, class_names=("a", "b", "c", "d", "e")))
        perm = [4, 3, 2, 1, 0]
        remapped = per_class_metrics(confusion(
            [perm[t] for t in truths], [perm[p] for p in preds],
            class_names=("e", "d", "c", "b", "a"),
        ))
        assert abs(base.accuracy - remapped.accuracy) <= 1e-12
        for name in "abcde":
            assert base.per_class[name] == remapped.per_class[name]


class TestCollapse:
    def test_chatter_predicted_fold_is_artifact_tp(self):
        report = collapse_artifact_vs_background([CHATTER], [FOLD])
        assert report.rows["chatter"] == (1.0, 0.0, 1)
        assert report.matrix["artifact"]["artifact"] == 1

    def test_background_credit(self):
        report = collapse_artifact_vs_background([0], [0])
        assert report.rows["background"] == (0.0, 1.0, 1)
        assert report.matrix["background"]["background"] == 1

    def test_fold_row_fractions(self):
        truths = [FOLD] * 10
        preds = [FOLD] * 6 + [PEN] * 3 + [0]
        report = collapse_artifact_vs_background(truths, preds)
        assert report.rows["fold"] == (0.9, 0.1, 10)

    def test_tissue_counts_as_background(self):
        report = collapse_artifact_vs_background([1], [1])
        assert report.matrix["background"]["background"] == 1

    def test_collapse_commutes_with_confusion(self):
        rng = np.random.default_rng(9)
        truths = rng.integers(0, 12, 200).tolist()
        preds = rng.integers(0, 12, 200).tolist()
        report = collapse_artifact_vs_background(truths, preds)
        cm = confusion(truths, preds)
        art = range(2, 12)
        merged = {
            "artifact": {"artifact": int(cm.counts[2:, 2:].sum()),
                         "background": int(cm.counts[2:, :2].sum())},
            "background": {"artifact": int(cm.counts[:2, 2:].sum()),
                           "background": int(cm.counts[:2, :2].sum())},
        }
        assert report.matrix == merged


class TestAblation:
    def perfect(self, train_tiles):
        return lambda tiles: [t.label for t in tiles]

    def noisy(self, train_tiles):
        return lambda tiles: [0 for _ in tiles]

    def tiles_for(self, level, tile_size, labels):
        return [make_tile("s", l, ordinal=i) for i, l in enumerate(labels)]

    def test_single_cell(self):
        provider = lambda lv, ts: (self.tiles_for(lv, ts, [0, PEN]), self.tiles_for(lv, ts, [0, PEN]))
        result = run_ablation([2], [256], {"oracle": self.perfect}, provider)
        assert len(result.rows) == 1
        assert result.best is result.rows[0]
        assert result.rows[0]["f1"] == 1.0

    def test_grid_shape_and_best_mark(self):
        provider = lambda lv, ts: (self.tiles_for(lv, ts, [0, PEN]), self.tiles_for(lv, ts, [0, PEN]))
        result = run_ablation([2, 4], [128, 256, 512], {"oracle": self.perfect}, provider)
        assert len(result.rows) == 6
        assert sum(1 for r in result.rows if r["best"]) == 1

    def test_empty_cell_skipped_not_fatal(self):
        def provider(level, tile_size):
            if level == 4:
                return [], []
            return (self.tiles_for(level, tile_size, [0, PEN]),
                    self.tiles_for(level, tile_size, [0, PEN]))

        result = run_ablation([2, 4], [256], {"oracle": self.perfect}, provider)
        skipped = [r for r in result.rows if r["skipped"]]
        assert len(skipped) == 1 and skipped[0]["level"] == 4

    def test_better_classifier_wins_best(self):
        provider = lambda lv, ts: (self.tiles_for(lv, ts, [0, PEN] * 4),
                                   self.tiles_for(lv, ts, [0, PEN] * 4))
        result = run_ablation([2], [256], {"good": self.perfect, "bad": self.noisy}, provider)
        assert result.best["classifier"] == "good"

    def test_csv_and_render(self):
        provider = lambda lv, ts: (self.tiles_for(lv, ts, [0, PEN]), self.tiles_for(lv, ts, [0, PEN]))
        result = run_ablation([2], [256], {"oracle": self.perfect}, provider)
        assert "classifier,level,tile_size" in result.to_csv()
        assert "F1 Score" in result.render()
