import numpy as np
import pytest
import torch

from ascbench.synth import SyntheticCorpusSpec, generate_synthetic_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    """10 scenes x 9 devices x 2 clips = 180 records, 1-s clips at 44.1 kHz."""
    spec = SyntheticCorpusSpec(clips_per_scene_device=2, seed=3)
    manifest, store = generate_synthetic_corpus(spec)
    return spec, manifest, store


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    _CRITERIA[number] = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
