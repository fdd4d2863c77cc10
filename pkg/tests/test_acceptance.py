"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line; the lines are printed together in the
terminal summary (see conftest.py). Criteria 7 and 8 train real models and
take several minutes on one CPU core.
"""

import math
import time
from collections import Counter

import numpy as np
import pytest
import torch

from ascbench.augment import FreqMixStyleConfig, ImpulseResponseBank, dir_convolve, freq_mask, freq_mixstyle, time_roll
from ascbench.evaluate import ScoreMatrix, challenge_score, read_curve
from ascbench.frontend import resample, stft_logmel, waveform_to_logmel
from ascbench.model import LayerSpec, ModelGraph, build_baseline, cast_fp16, init_model
from ascbench.pipeline import run_desk_experiment
from ascbench.profiler import check_limits, count_macs, param_memory
from ascbench.subsets import DEFAULT_FRACTIONS, make_nested_subsets, max_deviation, stratification_report
from ascbench.synth import SyntheticCorpusSpec, synthetic_manifest
from ascbench.trainer import kd_loss, training_loss

from conftest import record_criterion
from oracles import brute_force_forward, random_graph
from test_evaluate import brute_force_score
from test_trainer import central_difference, tiny_graph


def criterion(number: int, title: str, ok: bool, detail: str) -> None:
    record_criterion(number, title, ok, detail)
    assert ok, f"criterion {number} ({title}) failed: {detail}"


def test_criterion_1_mac_oracle():
    start = time.perf_counter()
    mismatches = []
    for seed in range(20):
        g = random_graph(np.random.default_rng(1000 + seed))
        params = {k: v.numpy() for k, v in init_model(g, seed).double().eval().state_dict().items()}
        _, tally = brute_force_forward(g, params, np.zeros(g.input_shape))
        got = sum(r.macs for r in count_macs(g))
        if got != tally.total:
            mismatches.append((seed, got, tally.total))

    def one_layer(layer, shape):
        c = layer.out_channels
        g = ModelGraph((layer, LayerSpec("gp", "global-pool", c, c), LayerSpec("fc", "linear", c, 10)), input_shape=shape)
        return count_macs(g)[0].macs

    pw = one_layer(LayerSpec("pw", "pointwise-conv2d", 8, 16), (8, 10, 10))
    dw = one_layer(LayerSpec("dw", "depthwise-conv2d", 8, 8, kernel=3, padding=1, groups=8), (8, 10, 10))
    elapsed = time.perf_counter() - start
    ok = not mismatches and pw == 12_800 and dw == 7_200 and elapsed < 10
    criterion(1, "MAC oracle", ok, f"20 graphs, mismatches={mismatches}, pointwise={pw}, depthwise={dw}, {elapsed:.2f}s")


def test_criterion_2_budget_arithmetic():
    fp16 = param_memory(61_148, 16)
    int8 = param_memory(128_000, 8)
    fp32 = param_memory(32_000, 32)
    report = check_limits(cast_fp16(init_model(build_baseline())))
    ok = (
        fp16 == 122_296
        and int8 == fp32 == 128_000
        and report.passed
        and report.total_params == 61_148
        and report.total_macs <= 30_000_000
        and report.param_bytes <= 128_000
        and report.total_macs <= 29_500_000
    )
    detail = f"fp16={fp16} int8={int8} fp32={fp32} baseline params={report.total_params} MACs={report.total_macs} bytes={report.param_bytes}"
    criterion(2, "budget arithmetic", ok, detail)


def test_criterion_3_scorer():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    exact = monotone = 0
    for _ in range(1000):
        acc = rng.random((int(rng.integers(1, 4)), 5))
        m = ScoreMatrix(acc)
        exact += challenge_score(m) == brute_force_score(acc)
        monotone += challenge_score(m.append(rng.random(5))) >= challenge_score(m)
    elapsed = time.perf_counter() - start
    ok = exact == 1000 and monotone == 1000 and elapsed < 5
    criterion(3, "max-then-mean scorer", ok, f"exact {exact}/1000, monotone {monotone}/1000, {elapsed:.2f}s")


def test_criterion_4_subsets():
    start = time.perf_counter()
    devices = ("A", "B", "C", "S1", "S2", "S3", "S4", "S5", "S6", "S7")
    m = synthetic_manifest(SyntheticCorpusSpec(clips_per_scene_device=100, devices=devices))
    assert len(m) == 10_000
    fam = make_nested_subsets(m, DEFAULT_FRACTIONS, seed=0)
    nested = all(set(fam[a]) <= set(fam[b]) for a in fam.fractions for b in fam.fractions if a <= b)
    index = m.by_filename()
    sizes = Counter(r.stratum for r in m)
    counts_ok = True
    for f in fam.fractions:
        got = Counter(index[n].stratum for n in fam[f])
        counts_ok &= all(got[k] == math.floor(f * n + 0.5) for k, n in sizes.items())
    rows = stratification_report(fam, m)
    worst = max(max_deviation(rows, "scene", f) for f in fam.fractions)
    elapsed = time.perf_counter() - start
    ok = nested and counts_ok and worst <= 2.0 and elapsed < 30
    criterion(4, "nested subsets", ok, f"nested={nested} counts={counts_ok} max scene dev={worst:.3f}pp, {elapsed:.2f}s")


def test_criterion_5_augmentation_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    batch = rng.normal(size=(6, 32, 40)).astype(np.float32)
    p0 = np.max(np.abs(freq_mixstyle(batch, FreqMixStyleConfig(p=0.0), seed=1) - batch))
    lam1 = np.max(np.abs(freq_mixstyle(batch, FreqMixStyleConfig(p=1.0), seed=1, lam=1.0) - batch))
    x = rng.standard_normal(32_000)
    delta = np.max(np.abs(dir_convolve(x, ImpulseResponseBank.from_arrays([np.array([1.0])], 32_000), 1.0, seed=0) - x))
    rolled = time_roll(x, 3200, seed=4)
    energy_exact = math.fsum(rolled**2) == math.fsum(x**2)
    mask_id = np.array_equal(freq_mask(batch[0], 0, seed=2), batch[0])
    elapsed = time.perf_counter() - start
    ok = p0 <= 1e-5 and lam1 <= 1e-5 and delta <= 1e-6 and energy_exact and mask_id and elapsed < 10
    detail = f"p=0 err={p0:.1e} lambda=1 err={lam1:.1e} delta-IR err={delta:.1e} roll energy exact={energy_exact} mask0 identity={mask_id}"
    criterion(5, "augmentation identities", ok, detail)


def test_criterion_6_gradient_check():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(5):
        s0 = rng.normal(size=(4, 10)) * 2
        t = torch.from_numpy(rng.normal(size=(4, 10)) * 2)
        y = torch.from_numpy(rng.integers(0, 10, 4))
        temp, w = float(rng.uniform(0.5, 4)), float(rng.uniform(0, 1))
        s = torch.from_numpy(s0).requires_grad_()
        kd_loss(s, t, y, temp, w).backward()
        num = central_difference(lambda a: kd_loss(torch.from_numpy(a), t, y, temp, w).item(), s0)
        worst = max(worst, float(np.max(np.abs(s.grad.numpy() - num) / (np.abs(num) + 1e-8))))

    net = init_model(tiny_graph(), seed=5).double().train()
    x = torch.from_numpy(rng.normal(size=(4, 16, 63)))
    y = torch.tensor([0, 2, 4, 6])
    teacher = torch.from_numpy(rng.normal(size=(4, 10)))
    weight = net.layers["c1"].weight
    w0 = weight.detach().numpy().copy()
    training_loss(net, x, y, teacher, 2.0, 0.5).backward()
    analytic = weight.grad.numpy().copy()

    def f(w):
        with torch.no_grad():
            weight.copy_(torch.from_numpy(w))
            return training_loss(net, x, y, teacher, 2.0, 0.5).item()

    num = central_difference(f, w0)
    worst_full = float(np.max(np.abs(analytic - num) / (np.abs(num) + 1e-8)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-3 and worst_full < 1e-3 and elapsed < 30
    criterion(6, "gradient check", ok, f"kd_loss max rel err={worst:.1e}, training loss max rel err={worst_full:.1e}, {elapsed:.2f}s")


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """Two identical desk-scale runs (same seed) for criteria 7 and 8."""
    runs = []
    for tag in ("first", "second"):
        out = tmp_path_factory.mktemp(f"desk_{tag}")
        start = time.perf_counter()
        result = run_desk_experiment(out, seed=0)
        runs.append((out, result, time.perf_counter() - start))
    return runs


@pytest.mark.slow
def test_criterion_7_desk_run(desk_runs):
    out, result, elapsed = desk_runs[0]
    full, small = result.accuracy[1.0], result.accuracy[0.05]
    unseen = result.unseen_accuracy[1.0]
    n_clips = result.n_train + result.n_test
    ok = 1800 <= n_clips <= 2200 and unseen >= 0.70 and full >= small + 0.05 and elapsed <= 15 * 60
    detail = f"{n_clips} clips, held-out-device acc(100%)={unseen:.4f}, acc(5%)={small:.4f}, run time {elapsed:.0f}s"
    criterion(7, "desk-scale run", ok, detail)


@pytest.mark.slow
def test_criterion_8_determinism(desk_runs):
    (a_dir, a, _), (b_dir, b, _) = desk_runs
    same_curve = (a_dir / "curve.csv").read_bytes() == (b_dir / "curve.csv").read_bytes()
    same_score = (a_dir / "score.csv").read_bytes() == (b_dir / "score.csv").read_bytes()
    diff = abs(a.accuracy[1.0] - b.accuracy[1.0])
    ok = same_curve and same_score and diff <= 1e-6 and read_curve(a_dir / "curve.csv") == a.accuracy
    criterion(8, "determinism", ok, f"curve.csv identical={same_curve}, score.csv identical={same_score}, |acc diff|={diff:.1e}")


def test_criterion_9_frontend_shape():
    x = np.random.default_rng(0).standard_normal(44_100)
    y = resample(x, 44_100, 32_000)
    spec = stft_logmel(y)
    ok = y.shape == (32_000,) and spec.shape == (256, 63) and waveform_to_logmel(x, 44_100).shape == (256, 63)
    criterion(9, "frontend shape", ok, f"resampled {y.shape}, log-mel {spec.shape}")
