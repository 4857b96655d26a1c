"""Command-line entry point wiring every pipeline stage into reproducible runs.

Each subcommand reads the run config, performs one stage, and records input
and output digests in the run manifest. Given the same config and inputs,
reruns are byte-identical regardless of worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .annotations import CLASS_INDEX, CLASS_NAMES, parse_annotations
from .classify import (
    EnsembleConfig,
    classify_tiles,
    load_model,
    predict_proba,
    run_ensemble,
    save_model,
    tile_features,
    train_binary_screener,
    train_multiclass,
    train_softmax,
)
from .dataset import (
    SPLITS,
    balance_training_set,
    extract_labeled_tiles,
    pack_shards,
    read_shard,
    read_shards,
    tally,
    write_shard,
)
from .evaluate import (
    collapse_artifact_vs_background,
    confusion,
    per_class_metrics,
    run_ablation,
)
from .pyramid import open_slide
from .synth import generate_corpus
from .triage import aggregate_slide, heatmap_png, route
from .util import digest_tree, parallel_map, read_json, sha256_bytes, sha256_file, write_json


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# run directory plumbing
# ---------------------------------------------------------------------------

def _config_digest(cfg: dict) -> str:
    return sha256_bytes(json.dumps(cfg, sort_keys=True).encode())


def _record_stage(run_dir: Path, cfg: dict, stage: str, inputs: dict, outputs: dict) -> None:
    manifest_path = run_dir / "manifest.json"
    manifest = read_json(manifest_path) if manifest_path.is_file() else {"stages": {}}
    manifest["config_digest"] = _config_digest(cfg)
    manifest["stages"][stage] = {"inputs": inputs, "outputs": outputs}
    write_json(manifest_path, manifest)


def _grid_dir(run_dir: Path, kind: str, level: int, tile_size: int) -> Path:
    return run_dir / kind / f"L{level}_T{tile_size}"


def _corpus_slides(run_dir: Path, cfg: dict) -> list[str]:
    corpus = read_json(run_dir / cfg["corpus_dir"] / "corpus.json")
    return [entry["slide_id"] for entry in corpus["slides"]]


def _slide_tiles_path(run_dir: Path, level: int, tile_size: int, slide_id: str) -> Path:
    return _grid_dir(run_dir, "tiles", level, tile_size) / f"{slide_id}.pqshard"


def _split_assignment(run_dir: Path) -> dict[str, str]:
    return read_json(run_dir / "split.json")["assignment"]


def _load_split_tiles(run_dir: Path, level: int, tile_size: int,
                      assignment: dict[str, str], split: str) -> list:
    tiles = []
    for slide_id in sorted(assignment):
        if assignment[slide_id] != split:
            continue
        path = _slide_tiles_path(run_dir, level, tile_size, slide_id)
        if path.is_file():
            tiles.extend(read_shard(path))
    return tiles


def _dataset_shards(run_dir: Path, level: int, tile_size: int, split: str) -> list[Path]:
    return sorted(_grid_dir(run_dir, "dataset", level, tile_size).glob(f"{split}-*.pqshard"))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_synth(run_dir: Path, cfg: dict, workers: int) -> None:
    corpus_dir = run_dir / cfg["corpus_dir"]
    generate_corpus(cfgmod.corpus_config(cfg), corpus_dir, workers=workers)
    write_json(run_dir / "config.json", cfg)
    _record_stage(run_dir, cfg, "synth", {}, digest_tree(corpus_dir))
    print(f"synth: wrote {cfg['corpus']['slide_count']} slides under {corpus_dir}")


def cmd_tile(run_dir: Path, cfg: dict, workers: int) -> None:
    corpus_dir = run_dir / cfg["corpus_dir"]
    slide_ids = _corpus_slides(run_dir, cfg)
    points = cfgmod.grid_points(cfg)
    policy = cfgmod.label_policy(cfg)

    def extract_one(slide_id: str) -> int:
        pyramid = open_slide(corpus_dir / slide_id)
        annotations = parse_annotations((corpus_dir / f"{slide_id}.ann.json").read_bytes())
        total = 0
        for level, tile_size in points:
            if not pyramid.has_level(level):
                continue
            tiles = extract_labeled_tiles(pyramid, annotations, level, tile_size, policy)
            out = _slide_tiles_path(run_dir, level, tile_size, slide_id)
            out.parent.mkdir(parents=True, exist_ok=True)
            write_shard(out, tiles)
            total += len(tiles)
        return total

    counts = parallel_map(extract_one, slide_ids, workers=workers)
    _record_stage(run_dir, cfg, "tile",
                  {"corpus": sha256_bytes(json.dumps(digest_tree(corpus_dir), sort_keys=True).encode())},
                  digest_tree(run_dir / "tiles"))
    print(f"tile: extracted {sum(counts)} labeled tiles at {len(points)} grid points")


def cmd_split(run_dir: Path, cfg: dict, workers: int) -> None:
    from .dataset import split_slides

    slide_ids = _corpus_slides(run_dir, cfg)
    assignment = split_slides(slide_ids, int(cfg["seed"]))
    write_json(run_dir / "split.json", {"seed": int(cfg["seed"]), "assignment": assignment})
    counts = {split: sum(1 for s in assignment.values() if s == split) for split in SPLITS}
    _record_stage(run_dir, cfg, "split", {"slides": len(slide_ids)},
                  {"split.json": sha256_file(run_dir / "split.json")})
    print(f"split: {counts['train']}/{counts['val']}/{counts['test']} train/val/test")


def cmd_balance(run_dir: Path, cfg: dict, workers: int) -> None:
    level, tile_size = int(cfg["grid"]["level"]), int(cfg["grid"]["tile_size"])
    assignment = _split_assignment(run_dir)
    train_tiles = _load_split_tiles(run_dir, level, tile_size, assignment, "train")
    if not train_tiles:
        raise CliError("no training tiles extracted; run `tile` and `split` first")
    balanced = balance_training_set(train_tiles, cfgmod.balance_policy(cfg))
    out_dir = _grid_dir(run_dir, "balanced", level, tile_size)
    pack_shards(balanced, out_dir, int(cfg["shards"]["max_records"]), prefix="train")
    _record_stage(run_dir, cfg, "balance",
                  {"tiles": len(train_tiles)}, digest_tree(run_dir / "balanced"))
    print(f"balance: {len(train_tiles)} -> {len(balanced)} training tiles")


def cmd_pack(run_dir: Path, cfg: dict, workers: int) -> None:
    level, tile_size = int(cfg["grid"]["level"]), int(cfg["grid"]["tile_size"])
    assignment = _split_assignment(run_dir)
    max_records = int(cfg["shards"]["max_records"])
    out_dir = _grid_dir(run_dir, "dataset", level, tile_size)
    counts = {}
    balanced_paths = sorted(_grid_dir(run_dir, "balanced", level, tile_size).glob("train-*.pqshard"))
    if not balanced_paths:
        raise CliError("no balanced training shards; run `balance` first")
    train_tiles = read_shards(balanced_paths)
    pack_shards(train_tiles, out_dir, max_records, prefix="train")
    counts["train"] = len(train_tiles)
    for split in ("val", "test"):
        tiles = _load_split_tiles(run_dir, level, tile_size, assignment, split)
        if tiles:
            pack_shards(tiles, out_dir, max_records, prefix=split)
        counts[split] = len(tiles)
    _record_stage(run_dir, cfg, "pack", {"balanced": counts["train"]}, digest_tree(out_dir))
    print(f"pack: dataset tiles train/val/test = {counts['train']}/{counts['val']}/{counts['test']}")


def cmd_train(run_dir: Path, cfg: dict, workers: int) -> None:
    level, tile_size = int(cfg["grid"]["level"]), int(cfg["grid"]["tile_size"])
    shards = _dataset_shards(run_dir, level, tile_size, "train")
    if not shards:
        raise CliError("no packed training dataset; run `pack` first")
    train_tiles = read_shards(shards)
    params = cfgmod.training_params(cfg)
    models_dir = run_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)

    summary = {}
    for class_name in cfg["train"].get("screeners", []):
        model = train_binary_screener(class_name, train_tiles, params)
        save_model(model, models_dir / f"screener_{class_name}.pqmd")
        summary[f"screener_{class_name}"] = {
            "classes": list(model.class_names),
            "final_loss": model.loss_history[-1] if model.loss_history else None,
        }
    multiclass = cfg["train"].get("multiclass", [])
    if multiclass:
        model = train_multiclass(list(multiclass), train_tiles, params)
        save_model(model, models_dir / "multiclass.pqmd")
        summary["multiclass"] = {
            "classes": list(model.class_names),
            "final_loss": model.loss_history[-1] if model.loss_history else None,
        }
    write_json(models_dir / "train_summary.json", summary)
    _record_stage(run_dir, cfg, "train", {"train_tiles": len(train_tiles)},
                  digest_tree(models_dir))
    print(f"train: wrote {len(summary)} models from {len(train_tiles)} tiles")


def cmd_screen(run_dir: Path, cfg: dict, workers: int) -> None:
    corpus_dir = run_dir / cfg["corpus_dir"]
    ensemble = EnsembleConfig.from_dict(cfg["ensemble"], base_dir=run_dir)
    slide_ids = _corpus_slides(run_dir, cfg)
    out_dir = run_dir / "screen"
    out_dir.mkdir(parents=True, exist_ok=True)
    model_cache: dict = {}

    def screen_one(slide_id: str) -> None:
        pyramid = open_slide(corpus_dir / slide_id)
        tile_map = run_ensemble(pyramid, ensemble, workers=1, model_cache=model_cache)
        write_json(out_dir / f"{slide_id}.map.json", tile_map.to_dict())

    # models are preloaded so worker threads share the cache read-only
    for member in ensemble.members:
        if member.model_path:
            model_cache[member.model_path] = load_model(member.model_path)
    parallel_map(screen_one, slide_ids, workers=workers)
    _record_stage(run_dir, cfg, "screen", {"slides": len(slide_ids)}, digest_tree(out_dir))
    print(f"screen: merged tile maps for {len(slide_ids)} slides")


def cmd_report(run_dir: Path, cfg: dict, workers: int) -> None:
    from .classify.ensemble import MergedTileMap, ensemble_digest

    EnsembleConfig.from_dict(cfg["ensemble"], base_dir=run_dir)  # validates
    digest = ensemble_digest(cfg["ensemble"])
    policy = cfgmod.triage_policy(cfg)
    timestamp = cfg.get("timestamp") or ""
    maps = sorted((run_dir / "screen").glob("*.map.json"))
    if not maps:
        raise CliError("no screen maps; run `screen` first")

    def report_one(path: Path) -> str:
        tile_map = MergedTileMap.from_dict(read_json(path))
        report = aggregate_slide(tile_map, policy, ensemble_digest=digest, timestamp=timestamp)
        slide_dir = run_dir / "reports" / report.slide_id
        slide_dir.mkdir(parents=True, exist_ok=True)
        write_json(slide_dir / "report.json", report.to_dict())
        (slide_dir / "heatmap.png").write_bytes(heatmap_png(tile_map))
        routing, lines = route(report)
        return f"{report.slide_id}: {routing}" + (
            " [" + "; ".join(lines) + "]" if lines else ""
        )

    lines = parallel_map(report_one, maps, workers=workers)
    _record_stage(run_dir, cfg, "report", {"maps": len(maps)}, digest_tree(run_dir / "reports"))
    for line in lines:
        print(line)


def _screener_scores(run_dir: Path, cfg: dict, split: str) -> dict:
    """Recall/specificity of each trained screener on one dataset split."""
    level, tile_size = int(cfg["grid"]["level"]), int(cfg["grid"]["tile_size"])
    tiles = read_shards(_dataset_shards(run_dir, level, tile_size, split))
    scores = {}
    for class_name in cfg["train"].get("screeners", []):
        model = load_model(run_dir / "models" / f"screener_{class_name}.pqmd")
        target = CLASS_INDEX[class_name]
        positives = [t for t in tiles if t.label == target]
        negatives = [t for t in tiles if t.label in (0, 1)]
        if not positives or not negatives:
            scores[class_name] = {"recall": None, "specificity": None,
                                  "positives": len(positives), "negatives": len(negatives)}
            continue
        pos_probs = predict_proba(model, tile_features(positives))[:, 1]
        neg_probs = predict_proba(model, tile_features(negatives))[:, 1]
        scores[class_name] = {
            "recall": float(np.mean(pos_probs >= 0.5)),
            "specificity": float(np.mean(neg_probs < 0.5)),
            "positives": len(positives),
            "negatives": len(negatives),
        }
    return scores


def cmd_evaluate(run_dir: Path, cfg: dict, workers: int, pairs: str | None = None) -> None:
    out_dir = run_dir / "evaluation"
    out_dir.mkdir(parents=True, exist_ok=True)
    if pairs is not None:
        truths, preds = [], []
        with open(pairs, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#"):
                    continue
                t, p = row[0].strip(), row[1].strip()
                truths.append(CLASS_INDEX[t] if t in CLASS_INDEX else int(t))
                preds.append(CLASS_INDEX[p] if p in CLASS_INDEX else int(p))
        metrics = per_class_metrics(confusion(truths, preds))
        print(f"accuracy {metrics.accuracy:.4f}  macro F1 {metrics.macro_f1:.4f}")
        return

    level, tile_size = int(cfg["grid"]["level"]), int(cfg["grid"]["tile_size"])
    test_tiles = read_shards(_dataset_shards(run_dir, level, tile_size, "test"))
    if not test_tiles:
        raise CliError("no packed test dataset; run `pack` first")

    results: dict = {"screeners": _screener_scores(run_dir, cfg, "test")}
    multiclass_path = run_dir / "models" / "multiclass.pqmd"
    if multiclass_path.is_file():
        model = load_model(multiclass_path)
        model_classes = {CLASS_INDEX[n] for n in model.class_names if n in CLASS_INDEX}
        kept = [t for t in test_tiles if t.label in model_classes or t.label in (0, 1)]
        preds = classify_tiles(model, kept)
        # tissue and background are one negative set for scoring
        truths = [0 if t.label in (0, 1) else t.label for t in kept]
        metrics = per_class_metrics(confusion(truths, preds))
        collapsed = collapse_artifact_vs_background(truths, preds)
        results["multiclass"] = {
            "accuracy": metrics.accuracy,
            "macro_f1": metrics.macro_f1,
            "per_class": {
                name: {"precision": m.precision, "recall": m.recall,
                       "specificity": m.specificity, "f1": m.f1, "support": m.support}
                for name, m in metrics.per_class.items() if m.support > 0
            },
            "collapsed_rows": {k: list(v) for k, v in collapsed.rows.items()},
        }
    write_json(out_dir / "test_metrics.json", results)
    for name, sc in results["screeners"].items():
        print(f"screener {name}: recall={sc['recall']} specificity={sc['specificity']} "
              f"(n+={sc['positives']}, n-={sc['negatives']})")
    if "multiclass" in results:
        print(f"multiclass: accuracy {results['multiclass']['accuracy']:.3f} "
              f"macro F1 {results['multiclass']['macro_f1']:.3f}")
    _record_stage(run_dir, cfg, "evaluate", {"test_tiles": len(test_tiles)},
                  digest_tree(out_dir))


def cmd_ablate(run_dir: Path, cfg: dict, workers: int) -> None:
    assignment = _split_assignment(run_dir)
    params = cfgmod.training_params(cfg)

    def provider(level: int, tile_size: int):
        return (
            _load_split_tiles(run_dir, level, tile_size, assignment, "train"),
            _load_split_tiles(run_dir, level, tile_size, assignment, "val"),
        )

    def baseline(train_tiles):
        labels = sorted({t.label for t in train_tiles})
        names = tuple(CLASS_NAMES[i] for i in labels)
        remap = {label: i for i, label in enumerate(labels)}
        features = tile_features(train_tiles)
        y = np.array([remap[t.label] for t in train_tiles])
        model = train_softmax(features, y, names, params)

        def predict_fn(tiles):
            probs = predict_proba(model, tile_features(tiles))
            return [labels[int(np.argmax(row))] for row in probs]

        return predict_fn

    result = run_ablation(
        cfg["ablation"]["levels"], cfg["ablation"]["tile_sizes"],
        {"baseline": baseline}, provider,
    )
    (run_dir / "ablation.csv").write_text(result.to_csv(), "utf-8")
    (run_dir / "ablation.txt").write_text(result.render() + "\n", "utf-8")
    print(result.render())
    if result.best:
        print(f"best: {result.best['classifier']} L{result.best['level']} "
              f"{result.best['tile_size']}px (macro F1 {result.best['f1']:.3f})")
    _record_stage(run_dir, cfg, "ablate", {"cells": len(result.rows)},
                  {"ablation.csv": sha256_file(run_dir / "ablation.csv")})


def cmd_tally(run_dir: Path, cfg: dict, workers: int) -> None:
    tiles = []
    tally_cfg = cfg.get("tally", {})
    tile_size = int(tally_cfg.get("tile_size", 256))
    for level in tally_cfg.get("levels", []):
        grid_dir = _grid_dir(run_dir, "tiles", int(level), tile_size)
        for path in sorted(grid_dir.glob("*.pqshard")):
            tiles.extend(read_shard(path))
    table = tally(tiles)
    (run_dir / "tally.txt").write_text(table.render() + "\n", "utf-8")
    print(table.render())


def cmd_serve(run_dir: Path, cfg: dict, host: str, port: int, ui_dir: str | None) -> None:
    import uvicorn

    from .service import create_app

    ui = Path(ui_dir) if ui_dir else Path(__file__).resolve().parents[2] / "frontend" / "dist"
    app = create_app(run_dir, ui_dir=ui if ui.is_dir() else None)
    uvicorn.run(app, host=host, port=port)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

PIPELINE_STAGES = ("synth", "tile", "split", "balance", "pack", "train", "screen", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slideqc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = list(PIPELINE_STAGES) + ["evaluate", "ablate", "tally", "serve", "pipeline"]
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--run-dir", required=True, help="output directory for this run")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE", help="override a scalar config field")
        if name == "evaluate":
            p.add_argument("--pairs", default=None,
                           help="CSV of truth,prediction labels to score directly")
        if name == "serve":
            p.add_argument("--host", default="127.0.0.1")
            p.add_argument("--port", type=int, default=8000)
            p.add_argument("--ui-dir", default=None)
    return parser


def _resolve_config(args: argparse.Namespace) -> dict:
    cfg = cfgmod.load_config(args.config)
    cfg = cfgmod.apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        run_dir = Path(args.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "serve":
            cmd_serve(run_dir, cfg, args.host, args.port, args.ui_dir)
            return 0
        if args.command == "pipeline":
            for stage in PIPELINE_STAGES:
                STAGE_FUNCS[stage](run_dir, cfg, args.workers)
            return 0
        if args.command == "evaluate":
            cmd_evaluate(run_dir, cfg, args.workers, pairs=args.pairs)
            return 0
        STAGE_FUNCS[args.command](run_dir, cfg, args.workers)
        return 0
    except Exception as exc:  # surface a clean error and a nonzero exit code
        print(f"error: {exc}", file=sys.stderr)
        return 1


STAGE_FUNCS = {
    "synth": cmd_synth,
    "tile": cmd_tile,
    "split": cmd_split,
    "balance": cmd_balance,
    "pack": cmd_pack,
    "train": cmd_train,
    "screen": cmd_screen,
    "report": cmd_report,
    "ablate": cmd_ablate,
    "tally": cmd_tally,
}


if __name__ == "__main__":
    raise SystemExit(main())
