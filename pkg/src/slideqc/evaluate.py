"""Scoring: confusion matrices, per-class and macro metrics, collapsed
artifact-vs-background reporting, and the ablation grid harness."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .annotations import ARTIFACT_INDICES, CLASS_NAMES

MetricRow = dict[str, object]


class EvaluationError(Exception):
    pass


@dataclass
class ConfusionMatrix:
    class_names: tuple[str, ...]
    counts: np.ndarray  # (true, predicted)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class PerClass:
    precision: float
    recall: float
    specificity: float
    f1: float
    support: int


@dataclass
class ClassMetrics:
    accuracy: float
    per_class: dict[str, PerClass]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    macro_specificity: float


@dataclass
class CollapsedReport:
    # true class name -> (fraction predicted artifact, fraction predicted background, support)
    rows: dict[str, tuple[float, float, int]]
    matrix: dict[str, dict[str, int]]  # {"artifact"|"background"} x same


def confusion(
    truths: Sequence[int], predictions: Sequence[int], class_names: tuple[str, ...] = CLASS_NAMES
) -> ConfusionMatrix:
    if len(truths) != len(predictions):
        raise EvaluationError(f"{len(truths)} truths vs {len(predictions)} predictions")
    k = len(class_names)
    counts = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(truths, predictions):
        if not (0 <= t < k) or not (0 <= p < k):
            raise EvaluationError(f"label ({t}, {p}) outside {k}-class list")
        counts[t, p] += 1
    return ConfusionMatrix(class_names=tuple(class_names), counts=counts)


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def per_class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    total = cm.total
    if total == 0:
        raise EvaluationError("empty confusion matrix")
    per_class: dict[str, PerClass] = {}
    macro: list[PerClass] = []
    for i, name in enumerate(cm.class_names):
        tp = float(cm.counts[i, i])
        fn = float(cm.counts[i, :].sum() - tp)
        fp = float(cm.counts[:, i].sum() - tp)
        tn = float(total - tp - fn - fp)
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        specificity = _safe_div(tn, tn + fp)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        entry = PerClass(
            precision=precision, recall=recall, specificity=specificity, f1=f1,
            support=int(tp + fn),
        )
        per_class[name] = entry
        if entry.support > 0:
            macro.append(entry)
    return ClassMetrics(
        accuracy=float(np.trace(cm.counts)) / total,
        per_class=per_class,
        macro_precision=float(np.mean([e.precision for e in macro])),
        macro_recall=float(np.mean([e.recall for e in macro])),
        macro_f1=float(np.mean([e.f1 for e in macro])),
        macro_specificity=float(np.mean([e.specificity for e in macro])),
    )


def collapse_artifact_vs_background(
    truths: Sequence[int], predictions: Sequence[int]
) -> CollapsedReport:
    """Score any-artifact-counts hits: a tile predicted as any artifact class is an
    artifact true positive regardless of which artifact the truth names."""
    artifact = set(ARTIFACT_INDICES)

    def bucket(label: int) -> str:
        if not (0 <= label < len(CLASS_NAMES)):
            raise EvaluationError(f"unknown label {label}")
        return "artifact" if label in artifact else "background"

    matrix = {"artifact": {"artifact": 0, "background": 0},
              "background": {"artifact": 0, "background": 0}}
    by_true: dict[str, list[str]] = {}
    for t, p in zip(truths, predictions):
        pb = bucket(p)
        matrix[bucket(t)][pb] += 1
        by_true.setdefault(CLASS_NAMES[t], []).append(pb)

    rows = {}
    for name, buckets in by_true.items():
        n = len(buckets)
        art = sum(1 for b in buckets if b == "artifact")
        rows[name] = (art / n, (n - art) / n, n)
    return CollapsedReport(rows=rows, matrix=matrix)


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

@dataclass
class AblationResult:
    rows: list[MetricRow] = field(default_factory=list)
    best: MetricRow | None = None

    COLUMNS = (
        "classifier", "level", "tile_size", "accuracy", "precision", "recall",
        "f1", "specificity", "n_train", "n_val", "skipped", "best",
    )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.COLUMNS)
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: row.get(k, "") for k in self.COLUMNS})
        return buf.getvalue()

    def render(self) -> str:
        header = ["Classifier", "Level", "Tile", "Accuracy", "Precision", "Recall",
                  "F1 Score", "Specificity", "Best"]
        lines = [header]
        for row in self.rows:
            if row.get("skipped"):
                lines.append([str(row["classifier"]), f"L{row['level']}", str(row["tile_size"]),
                              "skipped", "", "", "", "", ""])
                continue
            lines.append([
                str(row["classifier"]), f"L{row['level']}", str(row["tile_size"]),
                f"{row['accuracy']:.3f}", f"{row['precision']:.3f}", f"{row['recall']:.3f}",
                f"{row['f1']:.3f}", f"{row['specificity']:.3f}",
                "*" if row.get("best") else "",
            ])
        widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)) for line in lines
        )


def run_ablation(
    levels: Sequence[int],
    tile_sizes: Sequence[int],
    classifiers: dict[str, Callable],
    provider: Callable[[int, int], tuple[list, list]],
) -> AblationResult:
    """Train/evaluate every (classifier, level, tile size) cell.

    ``provider`` yields (train_tiles, val_tiles) for a grid point; a
    ``classifier`` factory takes training tiles and returns a function
    mapping tiles to predicted global class indices. Cells with unusable
    training data are reported as skipped. Best cell = highest macro F1,
    ties to the fewest tiles processed.
    """
    result = AblationResult()
    for clf_name in sorted(classifiers):
        for level in levels:
            for tile_size in tile_sizes:
                train_tiles, val_tiles = provider(level, tile_size)
                row: MetricRow = {
                    "classifier": clf_name, "level": level, "tile_size": tile_size,
                    "n_train": len(train_tiles), "n_val": len(val_tiles),
                    "skipped": False, "best": False,
                }
                labels_present = {t.label for t in train_tiles}
                if len(train_tiles) == 0 or len(val_tiles) == 0 or len(labels_present) < 2:
                    row["skipped"] = True
                    result.rows.append(row)
                    continue
                predict_fn = classifiers[clf_name](train_tiles)
                preds = predict_fn(val_tiles)
                cm = confusion([t.label for t in val_tiles], preds)
                metrics = per_class_metrics(cm)
                row.update(
                    accuracy=metrics.accuracy, precision=metrics.macro_precision,
                    recall=metrics.macro_recall, f1=metrics.macro_f1,
                    specificity=metrics.macro_specificity,
                )
                result.rows.append(row)

    candidates = [r for r in result.rows if not r["skipped"]]
    if candidates:
        best = max(
            candidates,
            key=lambda r: (r["f1"], -(int(r["n_train"]) + int(r["n_val"]))),
        )
        best["best"] = True
        result.best = best
    return result
