"""Macro-averaged accuracy, per-group breakdowns and the leaderboard score.

The leaderboard score takes, for every training subset, the best accuracy any
submitted system reached on it, and averages those maxima over the subsets.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .manifest import SCENE_INDEX, SCENES, Manifest, ALLOWED_DEVICES

SUBSET_PERCENTS = (5, 10, 25, 50, 100)
PROB_TOLERANCE = 1e-5


class SubmissionError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionSet:
    filenames: tuple[str, ...]
    labels: tuple[str, ...]
    probabilities: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "filenames", tuple(self.filenames))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.filenames) != len(self.labels):
            raise SubmissionError("filenames and labels differ in length")
        if len(set(self.filenames)) != len(self.filenames):
            raise SubmissionError("duplicate filenames in prediction set")
        for lab in self.labels:
            if lab not in SCENE_INDEX:
                raise SubmissionError(f"unknown scene label {lab!r}")
        if self.probabilities is not None:
            probs = np.asarray(self.probabilities, dtype=np.float64)
            if probs.shape != (len(self.filenames), len(SCENES)):
                raise SubmissionError(f"probabilities must have shape (N, {len(SCENES)}), got {probs.shape}")
            sums = probs.sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_TOLERANCE)
            if bad.size:
                raise SubmissionError(
                    f"probabilities of {self.filenames[bad[0]]!r} sum to {sums[bad[0]]:.6f}, not 1"
                )
            object.__setattr__(self, "probabilities", probs)

    def __len__(self) -> int:
        return len(self.filenames)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredictionSet):
            return NotImplemented
        if self.filenames != other.filenames or self.labels != other.labels:
            return False
        if self.probabilities is None or other.probabilities is None:
            return self.probabilities is None and other.probabilities is None
        return bool(np.array_equal(self.probabilities, other.probabilities))

    def as_dict(self) -> dict[str, str]:
        return dict(zip(self.filenames, self.labels))


def macro_accuracy_from_labels(pred: Sequence[int], true: Sequence[int]) -> float:
    """Mean per-class recall over classes that occur in ``true``."""
    pred, true = np.asarray(pred), np.asarray(true)
    classes = np.unique(true)
    if classes.size == 0:
        raise ValueError("no ground-truth clips to score")
    return float(np.mean([np.mean(pred[true == c] == c) for c in classes]))


def _aligned(preds: PredictionSet, truth: Manifest) -> tuple[np.ndarray, np.ndarray]:
    lookup = preds.as_dict()
    truth_names = set(truth.filenames)
    missing = [f for f in truth.filenames if f not in lookup]
    extra = [f for f in preds.filenames if f not in truth_names]
    if missing or extra:
        raise SubmissionError(
            f"predictions do not cover the ground truth exactly: {len(missing)} missing, {len(extra)} extra"
        )
    pred = np.array([SCENE_INDEX[lookup[r.filename]] for r in truth.records])
    true = np.array([SCENE_INDEX[r.scene] for r in truth.records])
    return pred, true


def macro_accuracy(preds: PredictionSet, truth: Manifest) -> float:
    pred, true = _aligned(preds, truth)
    return macro_accuracy_from_labels(pred, true)


@dataclass
class Breakdown:
    by: str
    groups: dict[str, float]
    seen: float | None = None
    unseen: float | None = None

    @property
    def gap(self) -> float | None:
        if self.seen is None or self.unseen is None:
            return None
        return self.seen - self.unseen

    def to_dict(self) -> dict:
        out: dict = {"by": self.by, "groups": self.groups}
        if self.by == "device":
            out |= {"seen": self.seen, "unseen": self.unseen, "gap": self.gap}
        return out


def breakdown(
    preds: PredictionSet,
    truth: Manifest,
    by: str,
    seen_devices: Iterable[str] = ALLOWED_DEVICES["development-train"],
) -> Breakdown:
    """Macro accuracy within each device/scene/city group.

    Device breakdowns also report accuracy on clips from training devices
    versus all other devices.
    """
    if by not in ("device", "scene", "city"):
        raise ValueError(f"unknown grouping field {by!r}")
    pred, true = _aligned(preds, truth)
    keys = [getattr(r, by) for r in truth.records]
    members: dict[str, list[int]] = defaultdict(list)
    for i, k in enumerate(keys):
        members[k].append(i)
    groups = {k: macro_accuracy_from_labels(pred[idx], true[idx]) for k, idx in sorted(members.items())}
    result = Breakdown(by, groups)
    if by == "device":
        seen_set = set(seen_devices)
        seen_idx = [i for i, k in enumerate(keys) if k in seen_set]
        unseen_idx = [i for i, k in enumerate(keys) if k not in seen_set]
        if seen_idx:
            result.seen = macro_accuracy_from_labels(pred[seen_idx], true[seen_idx])
        if unseen_idx:
            result.unseen = macro_accuracy_from_labels(pred[unseen_idx], true[unseen_idx])
    return result


@dataclass
class ScoreMatrix:
    """acc[n, p]: accuracy of system n trained on subset ``subsets[p]`` (percent)."""

    acc: np.ndarray
    systems: tuple[str, ...] = ()
    subsets: tuple[int, ...] = SUBSET_PERCENTS

    def __post_init__(self) -> None:
        self.acc = np.atleast_2d(np.asarray(self.acc, dtype=np.float64))
        if not self.systems:
            self.systems = tuple(f"system{i + 1}" for i in range(self.acc.shape[0]))
        self.systems = tuple(self.systems)
        self.subsets = tuple(self.subsets)
        if self.acc.shape != (len(self.systems), len(self.subsets)):
            raise ValueError(f"accuracy matrix shape {self.acc.shape} does not match systems x subsets")
        finite = self.acc[np.isfinite(self.acc)]
        if np.any((finite < 0) | (finite > 1)):
            raise ValueError("accuracies must lie in [0, 1]")

    @property
    def n_systems(self) -> int:
        return self.acc.shape[0]

    def append(self, row: Sequence[float], name: str | None = None) -> ScoreMatrix:
        name = name or f"system{self.n_systems + 1}"
        return ScoreMatrix(np.vstack([self.acc, np.asarray(row, dtype=np.float64)]), self.systems + (name,), self.subsets)

    @classmethod
    def from_tables(cls, tables: Mapping[str, Mapping[float, float]], subsets: Sequence[int] = SUBSET_PERCENTS) -> ScoreMatrix:
        """Build from {system: {fraction: accuracy}}; absent subsets become NaN."""
        names = tuple(tables)
        acc = np.full((len(names), len(subsets)), np.nan)
        for n, name in enumerate(names):
            by_pct = {int(round(float(f) * 100)): v for f, v in tables[name].items()}
            for p, pct in enumerate(subsets):
                if pct in by_pct:
                    acc[n, p] = by_pct[pct]
        return cls(acc, names, tuple(subsets))


def challenge_score(m: ScoreMatrix) -> float:
    """Average over subsets of the best accuracy any system achieved on that subset."""
    if m.acc.size == 0 or np.isnan(m.acc).any():
        missing = [(m.systems[n], m.subsets[p]) for n, p in zip(*np.nonzero(np.isnan(m.acc)))]
        raise ValueError(f"score matrix is incomplete; missing (system, subset%) entries: {missing}")
    return float(np.mean(np.max(m.acc, axis=0)))


def score_report(m: ScoreMatrix) -> dict:
    score = challenge_score(m)
    best = np.argmax(m.acc, axis=0)  # first maximum = lowest system index
    return {
        "subsets": [
            {
                "subset_percent": pct,
                "best_accuracy": float(m.acc[best[p], p]),
                "best_system": m.systems[best[p]],
                "accuracies": {name: float(m.acc[n, p]) for n, name in enumerate(m.systems)},
            }
            for p, pct in enumerate(m.subsets)
        ],
        "n_systems": m.n_systems,
        "score": score,
    }


def _fmt(v: float) -> str:
    return repr(float(v))


def subset_curve(
    results: Mapping[float, float] | Iterable[tuple[float, float]],
    out_path: str | Path,
    plot_path: str | Path | None = None,
) -> Path:
    """Write ``fraction,accuracy`` rows sorted by fraction; optionally a line plot."""
    pairs = list(results.items()) if isinstance(results, Mapping) else [tuple(r) for r in results]
    if not pairs:
        raise ValueError("no results to write")
    fractions = [float(f) for f, _ in pairs]
    if len(set(fractions)) != len(fractions):
        raise ValueError("duplicate fraction keys in results")
    pairs = sorted(((float(f), float(a)) for f, a in pairs), key=lambda fa: fa[0])
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fraction", "accuracy"])
        writer.writerows([_fmt(f), _fmt(a)] for f, a in pairs)
    if plot_path is not None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([100 * f for f, _ in pairs], [100 * a for _, a in pairs], marker="o")
        ax.set_xscale("log")
        ax.set_xticks([100 * f for f, _ in pairs], [f"{100 * f:g}%" for f, _ in pairs])
        ax.set_xlabel("training subset")
        ax.set_ylabel("macro accuracy (%)")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(plot_path)
        plt.close(fig)
    return out_path


def read_curve(path: str | Path) -> dict[float, float]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"fraction", "accuracy"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns 'fraction,accuracy'")
        out: dict[float, float] = {}
        for row in reader:
            f = float(row["fraction"])
            if f in out:
                raise ValueError(f"{path}: duplicate fraction {f}")
            out[f] = float(row["accuracy"])
    return out


def write_submission(preds: PredictionSet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["filename", "scene_label"]
        if preds.probabilities is not None:
            header += list(SCENES)
        writer.writerow(header)
        for i, (name, lab) in enumerate(zip(preds.filenames, preds.labels)):
            row = [name, lab]
            if preds.probabilities is not None:
                row += [_fmt(v) for v in preds.probabilities[i]]
            writer.writerow(row)
    return path


def read_submission(path: str | Path) -> PredictionSet:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["filename", "scene_label"]:
        raise SubmissionError(f"{path}: expected header starting 'filename,scene_label'")
    header = rows[0]
    with_probs = len(header) > 2
    if with_probs and header[2:] != list(SCENES):
        raise SubmissionError(f"{path}: probability columns must be exactly {list(SCENES)}")
    names, labels, probs = [], [], []
    for row_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SubmissionError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
        if row[1] not in SCENE_INDEX:
            raise SubmissionError(f"{path}: row {row_no}: unknown scene label {row[1]!r}")
        names.append(row[0])
        labels.append(row[1])
        if with_probs:
            probs.append([float(v) for v in row[2:]])
    prob_array = np.array(probs, dtype=np.float64).reshape(len(names), len(SCENES)) if with_probs else None
    return PredictionSet(tuple(names), tuple(labels), prob_array)


def write_score_report(report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
