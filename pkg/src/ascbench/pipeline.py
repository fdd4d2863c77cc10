"""Desk-scale end-to-end run on the synthetic corpus: subsets -> train -> fp16 export -> evaluate -> curve/score."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .evaluate import ScoreMatrix, breakdown, macro_accuracy, score_report, subset_curve, write_score_report
from .manifest import Manifest, make_device_split
from .model import BaselineConfig, build_baseline, cast_fp16, init_model, save_checkpoint
from .profiler import check_limits
from .subsets import make_nested_subsets, percent_tag
from .synth import SyntheticCorpusSpec, generate_synthetic_corpus
from .trainer import ClipSet, TrainConfig, clips_from_store, predict, train

log = logging.getLogger(__name__)

HOLDOUT_DEVICES = ("S4", "S5", "S6")


@dataclass
class DeskRunResult:
    accuracy: dict[float, float] = field(default_factory=dict)
    unseen_accuracy: dict[float, float] = field(default_factory=dict)
    seen_accuracy: dict[float, float | None] = field(default_factory=dict)
    score: float = float("nan")
    n_train: int = 0
    n_test: int = 0
    outputs: dict[str, Path] = field(default_factory=dict)


# Difficulty knobs for the desk corpus: sparse, jittered tone signatures under
# loud background plus distractor tones, so that small subsets do not saturate.
DESK_CORPUS = dict(n_cities=1, tone_dropout=0.3, distractor_prob=0.5, freq_jitter=0.03, background_db=-6.0)


def desk_train_config(seed: int = 0, epochs: int = 10) -> TrainConfig:
    """Recipe scaled to a ~1300-clip corpus on one CPU core."""
    return TrainConfig(epochs=epochs, batch_size=32, lr=0.005, seed=seed)


def write_score_csv(report: dict, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subset_percent", "best_accuracy", "best_system"])
        for row in report["subsets"]:
            writer.writerow([row["subset_percent"], repr(row["best_accuracy"]), row["best_system"]])
        writer.writerow(["score", repr(report["score"]), ""])
    return path


def run_desk_experiment(
    out_dir: str | Path,
    seed: int = 0,
    fractions: Sequence[float] = (0.05, 1.0),
    clips_per_scene_device: int = 22,
    train_cfg: TrainConfig | None = None,
    test_fraction: float = 0.0,
) -> DeskRunResult:
    """Synthesize a 9-device corpus, hold out S4-S6, train one model per subset and score it.

    The corpus has a single city: with 22 clips per scene x device stratum the
    5% subset keeps one clip per stratum, whereas splitting strata by city
    would round most of them down to nothing.

    Subsets not in ``fractions`` are still sampled (so nesting is realistic)
    but not trained; the score matrix uses the trained subsets only.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = train_cfg or desk_train_config(seed)

    spec = SyntheticCorpusSpec(clips_per_scene_device=clips_per_scene_device, seed=seed, **DESK_CORPUS)
    corpus, store = generate_synthetic_corpus(spec)
    train_m, test_m = make_device_split(corpus, HOLDOUT_DEVICES, test_fraction, seed)
    family = make_nested_subsets(train_m, seed=seed)
    train_clips = clips_from_store(train_m, store, spec.sample_rate)
    test_clips = clips_from_store(test_m, store, spec.sample_rate)
    del store

    result = DeskRunResult(n_train=len(train_m), n_test=len(test_m))
    for f in sorted(fractions):
        subset: ClipSet = train_clips.select(family[f])
        net = init_model(build_baseline(BaselineConfig()), seed)
        trained, history = train(net, subset, None, cfg)
        exported = cast_fp16(trained)
        preds = predict(exported, test_clips)
        acc = macro_accuracy(preds, test_m)
        dev = breakdown(preds, test_m, "device")
        result.accuracy[f] = acc
        result.unseen_accuracy[f] = dev.unseen if dev.unseen is not None else float("nan")
        result.seen_accuracy[f] = dev.seen
        tag = f"split{percent_tag(f)}"
        save_checkpoint(exported, out_dir / f"{tag}_model_fp16.pt", extra={"subset": tag, "seed": seed})
        history.to_csv(out_dir / f"{tag}_history.csv")
        log.info("subset %s (%d clips): macro acc %.4f", tag, len(subset), acc)

    result.outputs["curve"] = subset_curve(result.accuracy, out_dir / "curve.csv")
    matrix = ScoreMatrix.from_tables({"baseline": result.accuracy}, subsets=[percent_tag(f) for f in sorted(fractions)])
    report = score_report(matrix)
    result.score = report["score"]
    result.outputs["score_json"] = write_score_report(report, out_dir / "score.json")
    result.outputs["score_csv"] = write_score_csv(report, out_dir / "score.csv")
    complexity = check_limits(build_baseline(), precision=16)
    (out_dir / "complexity.json").write_text(complexity.to_json() + "\n", encoding="utf-8")
    return result
