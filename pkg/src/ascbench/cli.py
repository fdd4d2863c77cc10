"""Command-line entry point: ``ascbench {synth,subsets,train,profile,eval,score,curve,desk-run}``.

Every command writes its outputs under ``--out`` together with a
``resolved_config.json`` snapshot, exits 0 on success and prints a JSON error
record to stderr with a nonzero exit code on failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .evaluate import (
    ScoreMatrix,
    breakdown,
    macro_accuracy,
    read_curve,
    score_report,
    subset_curve,
    write_score_report,
    write_submission,
)
from .manifest import Manifest, make_device_split, parse_manifest, write_manifest
from .model import BaselineConfig, build_baseline, cast_fp16, init_model, load_checkpoint, save_checkpoint
from .profiler import check_limits
from .subsets import DEFAULT_FRACTIONS, make_nested_subsets, read_subset_file, write_subset_files
from .synth import SyntheticCorpusSpec, generate_synthetic_corpus, write_corpus
from .trainer import KDConfig, TrainConfig, load_clips, predict, read_teacher_logits, train

log = logging.getLogger("ascbench")

AUDIO_ROOT_ENV = "ASCBENCH_AUDIO_ROOT"
PATH_KEYS = ("manifest", "audio_root", "val_manifest", "out_dir", "teacher_logits", "ir_dir")


class CommandError(RuntimeError):
    pass


def _write_json(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _audio_root(value: str | None, manifest: str | Path | None) -> Path:
    env = os.environ.get(AUDIO_ROOT_ENV)
    if env:
        return Path(env)
    if value:
        return Path(value)
    if manifest:
        return Path(manifest).parent
    raise CommandError("no audio root given (use --audio-root or $" + AUDIO_ROOT_ENV + ")")


def _args_dict(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if not callable(v) and k != "accepts_overrides"}


def _parse_overrides(tokens: Sequence[str]) -> dict[str, str]:
    out = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise CommandError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            value = next(it, None)
            if value is None:
                raise CommandError(f"override {tok} needs a value")
        out[key] = value
    return out


# ------------------------------------------------------------------ commands


def cmd_synth(args: argparse.Namespace) -> dict:
    spec_dict = json.loads(Path(args.spec).read_text(encoding="utf-8")) if args.spec else {}
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    if args.clips is not None:
        spec_dict["clips_per_scene_device"] = args.clips
    spec = SyntheticCorpusSpec.from_dict(spec_dict)
    out = Path(args.out)
    manifest, store = generate_synthetic_corpus(spec)
    meta = write_corpus(manifest, store, out, spec.sample_rate)
    outputs = {"meta": str(meta)}
    holdout = [d for d in args.holdout.split(",") if d] if args.holdout else []
    present = set(manifest.devices())
    holdout = [d for d in holdout if d.upper() in present]
    train_m, test_m = make_device_split(manifest, holdout, args.test_fraction, spec.seed)
    outputs["train"] = str(write_manifest(train_m, out / "development-train.tsv"))
    outputs["test"] = str(write_manifest(test_m, out / "development-test.tsv"))
    (out / "corpus_spec.json").write_text(spec.to_json() + "\n", encoding="utf-8")
    _write_json(out / "resolved_config.json", {"command": "synth", **_args_dict(args)})
    return {"records": len(manifest), "train": len(train_m), "test": len(test_m), **outputs}


def cmd_subsets(args: argparse.Namespace) -> dict:
    m = parse_manifest(args.manifest)
    family = make_nested_subsets(m, DEFAULT_FRACTIONS, args.seed)
    paths = write_subset_files(family, args.out)
    _write_json(Path(args.out) / "resolved_config.json", {"command": "subsets", **_args_dict(args)})
    return {"files": [str(p) for p in paths], "sizes": {str(f): len(family[f]) for f in family.fractions}}


def _train_settings(args: argparse.Namespace, extra: Sequence[str]) -> dict:
    settings: dict = {}
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(loaded, dict) or any(isinstance(v, (dict, list)) for v in loaded.values()):
            raise CommandError(f"{args.config}: config must be a flat key-value JSON object")
        settings.update(loaded)
    for key in ("manifest", "audio_root", "val_manifest", "out_dir", "teacher_logits"):
        if getattr(args, key, None):
            settings[key] = getattr(args, key)
    settings.update(_parse_overrides(extra))
    return settings


def cmd_train(args: argparse.Namespace, extra: Sequence[str] = ()) -> dict:
    settings = _train_settings(args, extra)
    paths = {k: settings.pop(k) for k in PATH_KEYS if k in settings}
    cfg = TrainConfig.from_dict(settings)
    if "manifest" not in paths:
        raise CommandError("train needs a manifest (--manifest or 'manifest' in the config)")
    out = Path(paths.get("out_dir", "runs/train"))
    root = _audio_root(paths.get("audio_root"), paths["manifest"])
    manifest = parse_manifest(paths["manifest"])
    names = read_subset_file(args.subset, manifest)
    train_m = manifest.subset(names)
    clips = load_clips(train_m, root)
    val = None
    if paths.get("val_manifest"):
        val_m = parse_manifest(paths["val_manifest"], "development-test")
        val = load_clips(val_m, root)
    kd = None
    if paths.get("teacher_logits"):
        kd = KDConfig(read_teacher_logits(paths["teacher_logits"]), cfg.kd_temperature, cfg.kd_weight)
    ir_bank = None
    if cfg.dir_p > 0:
        from .augment import ImpulseResponseBank

        if not paths.get("ir_dir"):
            raise CommandError("dir_p > 0 needs 'ir_dir' (directory of impulse-response WAVs)")
        ir_bank = ImpulseResponseBank.from_directory(paths["ir_dir"], 32_000)

    net = init_model(build_baseline(BaselineConfig()), cfg.seed)
    trained, history = train(net, clips, val, cfg, kd=kd, ir_bank=ir_bank)
    exported = cast_fp16(trained)
    ckpt = save_checkpoint(exported, out / "model_fp16.pt", extra={"subset": str(args.subset), "seed": cfg.seed})
    hist = history.to_csv(out / "history.csv")
    report = check_limits(exported)
    (out / "complexity.json").write_text(report.to_json() + "\n", encoding="utf-8")
    _write_json(
        out / "resolved_config.json",
        {"command": "train", "subset": str(args.subset), "config": str(args.config), **paths, **cfg.__dict__},
    )
    log.info("wrote %s and %s", ckpt, hist)
    return {
        "checkpoint": str(ckpt),
        "history": str(hist),
        "train_clips": len(clips),
        "final_train_loss": history.train_loss[-1] if len(history) else None,
        "final_val_accuracy": history.val_accuracy[-1] if len(history) else None,
    }


def cmd_profile(args: argparse.Namespace) -> dict:
    if args.checkpoint:
        net, _ = load_checkpoint(args.checkpoint)
        report = check_limits(net, precision=args.precision)
    else:
        report = check_limits(build_baseline(), precision=args.precision or 16)
    print(report.table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "complexity.json").write_text(report.to_json() + "\n", encoding="utf-8")
        _write_json(out / "resolved_config.json", {"command": "profile", **_args_dict(args)})
    return {k: v for k, v in report.to_dict().items() if k != "layers"}


def cmd_eval(args: argparse.Namespace) -> dict:
    net, _ = load_checkpoint(args.checkpoint)
    truth = parse_manifest(args.manifest, "development-test")
    clips = load_clips(truth, _audio_root(args.audio_root, args.manifest))
    preds = predict(net, clips)
    out = Path(args.out)
    write_submission(preds, out / "predictions.csv")
    metrics = {
        "macro_accuracy": macro_accuracy(preds, truth),
        "breakdowns": {by: breakdown(preds, truth, by).to_dict() for by in ("device", "scene", "city")},
    }
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "resolved_config.json", {"command": "eval", **_args_dict(args)})
    return {"macro_accuracy": metrics["macro_accuracy"], "unseen_device_accuracy": metrics["breakdowns"]["device"]["unseen"]}


def cmd_score(args: argparse.Namespace) -> dict:
    tables = {}
    for i, item in enumerate(args.tables, start=1):
        name, _, path = item.rpartition("=") if "=" in item else (f"system{i}", "", item)
        tables[name or f"system{i}"] = read_curve(path)
    if not 1 <= len(tables) <= 3:
        raise CommandError(f"a submission scores 1 to 3 systems, got {len(tables)}")
    report = score_report(ScoreMatrix.from_tables(tables))
    out = Path(args.out)
    write_score_report(report, out / "score.json")
    _write_json(out / "resolved_config.json", {"command": "score", **_args_dict(args)})
    return {"score": report["score"], "best_systems": [r["best_system"] for r in report["subsets"]]}


def _point_value(raw: str) -> float:
    path = Path(raw)
    if path.suffix == ".json" and path.is_file():
        return float(json.loads(path.read_text(encoding="utf-8"))["macro_accuracy"])
    return float(raw)


def cmd_curve(args: argparse.Namespace) -> dict:
    points = []
    for item in args.points:
        frac, sep, value = item.partition("=")
        if not sep:
            raise CommandError(f"curve point {item!r} must look like FRACTION=ACCURACY or FRACTION=metrics.json")
        points.append((float(frac), _point_value(value)))
    out = Path(args.out)
    csv_path = subset_curve(points, out / "curve.csv", out / "curve.png" if args.plot else None)
    _write_json(out / "resolved_config.json", {"command": "curve", **_args_dict(args)})
    return {"curve": str(csv_path), "points": len(points)}


def cmd_desk_run(args: argparse.Namespace) -> dict:
    from .pipeline import desk_train_config, run_desk_experiment

    fractions = [float(f) for f in args.fractions.split(",")]
    result = run_desk_experiment(args.out, seed=args.seed, fractions=fractions, train_cfg=desk_train_config(args.seed, args.epochs))
    _write_json(Path(args.out) / "resolved_config.json", {"command": "desk-run", **_args_dict(args)})
    return {
        "accuracy": {str(k): v for k, v in result.accuracy.items()},
        "unseen_device_accuracy": {str(k): v for k, v in result.unseen_accuracy.items()},
        "score": result.score,
    }


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ascbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--spec", help="JSON corpus spec (defaults used when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--clips", type=int, help="clips per scene x device")
    p.add_argument("--holdout", default="S4,S5,S6", help="comma-separated test-only devices")
    p.add_argument("--test-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("subsets", help="write nested split5..split100 files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsets)

    p = sub.add_parser("train", help="train on a subset and export an fp16 checkpoint; extra --key value pairs override the config")
    p.add_argument("--config", help="flat key-value JSON training config")
    p.add_argument("--subset", required=True, help="subset CSV (e.g. split25.csv)")
    p.add_argument("--manifest")
    p.add_argument("--audio-root", dest="audio_root")
    p.add_argument("--val-manifest", dest="val_manifest")
    p.add_argument("--teacher-logits", dest="teacher_logits")
    p.add_argument("--out", dest="out_dir")
    p.set_defaults(func=cmd_train, accepts_overrides=True)

    p = sub.add_parser("profile", help="MAC / parameter-memory report")
    p.add_argument("--checkpoint", help="checkpoint to profile (default: untrained baseline at fp16)")
    p.add_argument("--precision", type=int, choices=(8, 16, 32))
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("eval", help="predict a manifest and report macro accuracy + breakdowns")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", dest="audio_root")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="leaderboard score over up to three systems")
    p.add_argument("tables", nargs="+", help="[NAME=]curve.csv with fraction,accuracy rows for the five subsets")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("curve", help="subset-size vs accuracy CSV (+ plot)")
    p.add_argument("points", nargs="+", help="FRACTION=ACCURACY or FRACTION=metrics.json")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("desk-run", help="synthetic end-to-end experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--fractions", default="0.05,0.1,0.25,0.5,1.0")
    p.set_defaults(func=cmd_desk_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if extra and not getattr(args, "accepts_overrides", False):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        if getattr(args, "accepts_overrides", False):
            summary = args.func(args, extra)
        else:
            summary = args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        record = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
