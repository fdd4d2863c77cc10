"""Device-generalization and regularization augmentations.

All functions take an explicit seed or ``numpy.random.Generator`` and never
touch global RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .frontend import resample
from .wavio import read_wav

SeedLike = int | np.random.Generator | None


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class FreqMixStyleConfig:
    alpha: float = 0.3
    p: float = 0.4
    eps: float = 1e-6

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")


def frequency_stats(batch: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample, per-frequency mean and std over time for a (B, F, T) batch."""
    mu = batch.mean(axis=-1, keepdims=True)
    sig = np.sqrt(batch.var(axis=-1, keepdims=True) + eps)
    return mu, sig


def freq_mixstyle(
    batch: np.ndarray,
    cfg: FreqMixStyleConfig = FreqMixStyleConfig(),
    seed: SeedLike = None,
    *,
    lam: float | np.ndarray | None = None,
    perm: Sequence[int] | None = None,
) -> np.ndarray:
    """Mix per-frequency statistics between samples of a (B, F, T) batch of log-mels.

    With probability ``cfg.p`` (one draw per batch) each sample is normalized
    by its own frequency-wise mean/std and re-scaled with a convex mix of its
    statistics and those of a randomly permuted partner. ``lam`` and ``perm``
    pin the mixing weight(s) and partner order; otherwise one weight per
    sample is drawn from Beta(alpha, alpha).
    """
    x = np.asarray(batch)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty (B, F, T) batch, got shape {x.shape}")
    rng = _rng(seed)
    if rng.random() >= cfg.p:
        return x
    b = x.shape[0]
    if lam is None:
        lam = rng.beta(cfg.alpha, cfg.alpha, size=b)
    perm = rng.permutation(b) if perm is None else np.asarray(perm)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (b,)).reshape(b, 1, 1)

    x64 = x.astype(np.float64)
    mu, sig = frequency_stats(x64, cfg.eps)
    normed = (x64 - mu) / sig
    mu_mix = lam * mu + (1.0 - lam) * mu[perm]
    sig_mix = lam * sig + (1.0 - lam) * sig[perm]
    return (normed * sig_mix + mu_mix).astype(x.dtype)


def freq_mask(spec: np.ndarray, max_width: int, seed: SeedLike = None) -> np.ndarray:
    """Fill a random contiguous band of up to ``max_width`` mel bins with the spectrogram mean."""
    spec = np.asarray(spec)
    n_mels = spec.shape[-2]
    if not 0 <= max_width <= n_mels:
        raise ValueError(f"max_width must lie in [0, {n_mels}], got {max_width}")
    rng = _rng(seed)
    width = int(rng.integers(0, max_width + 1))
    start = int(rng.integers(0, n_mels - width + 1))
    if width == 0:
        return spec
    out = spec.copy()
    out[..., start : start + width, :] = spec.mean()
    return out


def time_roll(x: np.ndarray, max_shift: int, seed: SeedLike = None, *, shift: int | None = None) -> np.ndarray:
    """Circular shift by k ~ U{-max_shift..max_shift}: out[i] = x[(i - k) mod N]."""
    x = np.asarray(x)
    n = x.shape[-1]
    if shift is None:
        if not 0 <= max_shift < n:
            raise ValueError(f"max_shift must lie in [0, {n}), got {max_shift}")
        shift = int(_rng(seed).integers(-max_shift, max_shift + 1))
    return np.roll(x, shift, axis=-1)


@dataclass(frozen=True)
class ImpulseResponseBank:
    irs: tuple[np.ndarray, ...]
    rate: int

    def __len__(self) -> int:
        return len(self.irs)

    @classmethod
    def from_arrays(cls, irs: Sequence[np.ndarray], rate: int, rates: Sequence[int] | None = None) -> ImpulseResponseBank:
        rates = rates or [rate] * len(irs)
        out = []
        for ir, r in zip(irs, rates):
            ir = np.asarray(ir, dtype=np.float64)
            if ir.size == 0:
                raise ValueError("impulse responses must be non-empty")
            out.append(resample(ir, r, rate))
        return cls(tuple(out), rate)

    @classmethod
    def from_directory(cls, directory: str | Path, rate: int) -> ImpulseResponseBank:
        """Load every mono ``*.wav`` in ``directory`` (sorted by name), resampled to ``rate``."""
        paths = sorted(Path(directory).glob("*.wav"))
        if not paths:
            raise ValueError(f"no .wav impulse responses in {directory}")
        loaded = [read_wav(p) for p in paths]
        return cls.from_arrays([d for d, _ in loaded], rate, [r for _, r in loaded])


def synthetic_irs(n: int, rate: int, seed: int = 0, length_s: float = 0.02) -> ImpulseResponseBank:
    """Exponentially decaying, randomly low-passed noise bursts standing in for measured device IRs."""
    rng = np.random.default_rng(seed)
    length = max(int(length_s * rate), 2)
    t = np.arange(length) / rate
    irs = []
    for _ in range(n):
        decay = rng.uniform(0.001, 0.006)
        noise = rng.standard_normal(length) * np.exp(-t / decay)
        smooth = rng.integers(1, 6)
        ir = np.convolve(noise, np.ones(smooth) / smooth)[:length]
        ir[0] += 1.0
        irs.append(ir / np.max(np.abs(ir)))
    return ImpulseResponseBank(tuple(irs), rate)


def convolve_truncated(x: np.ndarray, ir: np.ndarray) -> np.ndarray:
    return np.convolve(np.asarray(x, dtype=np.float64), ir)[: len(x)]


def dir_convolve(
    x: np.ndarray,
    bank: ImpulseResponseBank | None,
    p: float,
    seed: SeedLike = None,
) -> np.ndarray:
    """With probability ``p`` convolve with a uniformly chosen IR, truncate, and restore the input peak."""
    x = np.asarray(x)
    if p > 0 and (bank is None or len(bank) == 0):
        raise ValueError("an impulse-response bank is required when p > 0")
    rng = _rng(seed)
    if rng.random() >= p:
        return x
    ir = bank.irs[int(rng.integers(0, len(bank)))]
    y = convolve_truncated(x, ir)
    peak_in, peak_out = np.max(np.abs(x)), np.max(np.abs(y))
    if peak_out > 0:
        y = y * (peak_in / peak_out)
    return y.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)
