import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ascbench.evaluate import (
    PredictionSet,
    ScoreMatrix,
    SubmissionError,
    breakdown,
    challenge_score,
    macro_accuracy,
    macro_accuracy_from_labels,
    read_curve,
    read_submission,
    score_report,
    subset_curve,
    write_score_report,
    write_submission,
)
from ascbench.manifest import SCENES, ClipRecord, Manifest


def brute_force_score(acc: np.ndarray) -> float:
    """Column-wise max, then mean, with plain loops."""
    n, p = acc.shape
    best = []
    for j in range(p):
        b = acc[0, j]
        for i in range(1, n):
            if acc[i, j] > b:
                b = acc[i, j]
        best.append(b)
    return float(np.mean(best))


def truth_manifest(n_per_scene=4, devices=("A", "B", "S4")):
    recs = []
    for s in SCENES:
        for i in range(n_per_scene):
            recs.append(ClipRecord(f"{s}-{i}.wav", s, "city1", devices[i % len(devices)]))
    return Manifest(tuple(recs))


def test_all_correct():
    m = truth_manifest()
    preds = PredictionSet(m.filenames, tuple(r.scene for r in m))
    assert macro_accuracy(preds, m) == 1.0


def test_hand_enumerated_two_class():
    true = [0, 0, 0, 0, 1, 1]
    pred = [0, 0, 0, 1, 1, 0]
    assert macro_accuracy_from_labels(pred, true) == pytest.approx(0.625)


def test_constant_predictor_on_balanced_truth():
    m = truth_manifest()
    preds = PredictionSet(m.filenames, ("park",) * len(m))
    assert macro_accuracy(preds, m) == pytest.approx(0.1)


def test_macro_differs_from_micro_on_imbalance():
    true = [0] * 9 + [1]
    pred = [0] * 10
    assert macro_accuracy_from_labels(pred, true) == 0.5


def test_missing_or_extra_predictions_rejected():
    m = truth_manifest()
    with pytest.raises(SubmissionError, match="1 missing"):
        macro_accuracy(PredictionSet(m.filenames[1:], tuple(r.scene for r in m.records[1:])), m)
    with pytest.raises(SubmissionError, match="1 extra"):
        macro_accuracy(PredictionSet(tuple(m.filenames) + ("x.wav",), tuple(r.scene for r in m) + ("bus",)), m)


def test_single_device_breakdown():
    m = truth_manifest(devices=("A",))
    labels = tuple(SCENES[(i * 7) % 10] for i in range(len(m)))
    preds = PredictionSet(m.filenames, labels)
    bd = breakdown(preds, m, "device")
    assert list(bd.groups) == ["A"]
    assert bd.groups["A"] == pytest.approx(macro_accuracy(preds, m))
    assert bd.unseen is None and bd.gap is None


def test_mislabelled_unseen_devices_score_lower():
    m = truth_manifest(6)
    # stub predictor: right on training devices, shifted by one scene elsewhere
    labels = tuple(r.scene if r.device in ("A", "B") else SCENES[(SCENES.index(r.scene) + 1) % 10] for r in m)
    bd = breakdown(PredictionSet(m.filenames, labels), m, "device")
    assert bd.unseen < bd.seen
    assert bd.gap == pytest.approx(1.0)
    assert bd.to_dict()["unseen"] == 0.0


def test_breakdown_has_no_empty_groups():
    m = truth_manifest()
    bd = breakdown(PredictionSet(m.filenames, tuple(r.scene for r in m)), m, "scene")
    assert set(bd.groups) == set(SCENES)
    with pytest.raises(ValueError):
        breakdown(PredictionSet(m.filenames, tuple(r.scene for r in m)), m, "year")


def test_score_constant():
    assert challenge_score(ScoreMatrix(np.full((1, 5), 0.507))) == pytest.approx(0.507)


def test_score_hand_max_then_mean():
    acc = [[0.40, 0.45, 0.50, 0.55, 0.60], [0.45, 0.44, 0.52, 0.50, 0.58]]
    assert challenge_score(ScoreMatrix(acc)) == pytest.approx(0.514)


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 6), st.just(5)), elements=st.floats(0, 1)),
    arrays(np.float64, (5,), elements=st.floats(0, 1)),
)
def test_score_matches_oracle_and_is_monotone(acc, extra):
    m = ScoreMatrix(acc)
    assert challenge_score(m) == brute_force_score(acc)
    assert challenge_score(m.append(extra)) >= challenge_score(m)


def test_score_requires_complete_matrix():
    m = ScoreMatrix.from_tables({"a": {0.05: 0.3, 1.0: 0.6}})
    with pytest.raises(ValueError, match="missing"):
        challenge_score(m)


def test_score_report_ties_go_to_first_system():
    rep = score_report(ScoreMatrix([[0.5] * 5, [0.5] * 5], ("x", "y")))
    assert {s["best_system"] for s in rep["subsets"]} == {"x"}
    assert rep["score"] == 0.5


def test_matrix_validation():
    with pytest.raises(ValueError):
        ScoreMatrix([[1.2, 0, 0, 0, 0]])
    with pytest.raises(ValueError):
        ScoreMatrix([[0.1, 0.2]])


def test_curve_sorted(tmp_path):
    path = subset_curve({1.0: 0.5699, 0.05: 0.4240}, tmp_path / "curve.csv")
    lines = path.read_text().splitlines()
    assert lines == ["fraction,accuracy", "0.05,0.424", "1.0,0.5699"]
    assert read_curve(path) == {0.05: 0.424, 1.0: 0.5699}


def test_curve_single_and_duplicate(tmp_path):
    assert len(subset_curve({0.5: 0.3}, tmp_path / "c.csv").read_text().splitlines()) == 2
    with pytest.raises(ValueError, match="duplicate"):
        subset_curve([(0.5, 0.3), (0.5, 0.4)], tmp_path / "d.csv")


def test_curve_plot(tmp_path):
    subset_curve({0.05: 0.3, 1.0: 0.6}, tmp_path / "c.csv", plot_path=tmp_path / "c.png")
    assert (tmp_path / "c.png").read_bytes()[:4] == b"\x89PNG"


def _probs(n, seed=0):
    p = np.random.default_rng(seed).random((n, 10))
    return p / p.sum(axis=1, keepdims=True)


def test_submission_roundtrip(tmp_path):
    m = truth_manifest(2)
    probs = _probs(len(m))
    labels = tuple(SCENES[i] for i in probs.argmax(axis=1))
    preds = PredictionSet(m.filenames, labels, probs)
    assert read_submission(write_submission(preds, tmp_path / "sub.csv")) == preds
    bare = PredictionSet(m.filenames, labels)
    assert read_submission(write_submission(bare, tmp_path / "bare.csv")) == bare


def test_submission_wrong_column_count(tmp_path):
    m = truth_manifest(1)
    path = write_submission(PredictionSet(m.filenames, tuple(r.scene for r in m), _probs(len(m))), tmp_path / "s.csv")
    lines = path.read_text().splitlines()
    lines[1] += ",0.0"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SubmissionError, match="row 2 has 13 fields"):
        read_submission(path)


def test_probabilities_must_sum_to_one():
    p = _probs(1) * 0.9
    with pytest.raises(SubmissionError, match="sum to 0.9"):
        PredictionSet(("a.wav",), ("park",), p)


def test_prediction_set_validation():
    with pytest.raises(SubmissionError):
        PredictionSet(("a.wav", "a.wav"), ("park", "park"))
    with pytest.raises(SubmissionError):
        PredictionSet(("a.wav",), ("beach",))


def test_score_report_json(tmp_path):
    rep = score_report(ScoreMatrix(np.full((1, 5), 0.507)))
    path = write_score_report(rep, tmp_path / "score.json")
    assert json.loads(path.read_text())["score"] == pytest.approx(0.507)
