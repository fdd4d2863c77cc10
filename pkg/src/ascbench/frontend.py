"""Resampling and log-mel feature extraction (32 kHz, 4096-pt FFT, 96 ms window, 256 mel bins)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import get_window, resample_poly


@dataclass(frozen=True)
class FrontendConfig:
    target_rate: int = 32_000
    fft_size: int = 4096
    window_ms: float = 96.0
    hop_samples: int = 512
    n_mels: int = 256
    log_eps: float = 1e-5

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms / 1000.0 * self.target_rate))

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop_samples

    def validate(self) -> None:
        if self.hop_samples <= 0:
            raise ValueError("hop must be positive")
        if self.window_samples > self.fft_size:
            raise ValueError(f"window of {self.window_samples} samples exceeds fft_size {self.fft_size}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.n_mels > self.fft_size // 2 + 1:
            raise ValueError(f"n_mels={self.n_mels} exceeds the {self.fft_size // 2 + 1} FFT bins")


DEFAULT_FRONTEND = FrontendConfig()


def resample(x: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    """Polyphase band-limited resampling; output has round(len * target / rate) samples."""
    if rate <= 0 or target_rate <= 0:
        raise ValueError(f"sample rates must be positive, got {rate} -> {target_rate}")
    x = np.asarray(x)
    if rate == target_rate:
        return x
    g = math.gcd(int(rate), int(target_rate))
    up, down = target_rate // g, rate // g
    y = resample_poly(x.astype(np.float64), up, down, padtype="line")
    n_out = int(round(len(x) * target_rate / rate))
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - len(y)))
    return y.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)


def _hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    logstep = np.log(6.4) / 27.0
    mel = f / f_sp
    return np.where(f >= min_log_hz, min_log_hz / f_sp + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, mel)


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_mel = 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, 1000.0 * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_band_centers(cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(cfg.target_rate / 2), cfg.n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """Area-normalized triangular filters, shape (n_mels, fft_size // 2 + 1), spanning 0 Hz to Nyquist."""
    cfg.validate()
    n_bins = cfg.fft_size // 2 + 1
    fft_freqs = np.linspace(0.0, cfg.target_rate / 2, n_bins)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(cfg.target_rate / 2), cfg.n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


@lru_cache(maxsize=8)
def _padded_window(cfg: FrontendConfig) -> np.ndarray:
    win = get_window("hann", cfg.window_samples, fftbins=True)
    left = (cfg.fft_size - cfg.window_samples) // 2
    out = np.zeros(cfg.fft_size)
    out[left : left + cfg.window_samples] = win
    out.setflags(write=False)
    return out


def stft_magnitude(x: np.ndarray, cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """Centered, reflection-padded STFT magnitude of one clip or a batch (..., n_samples).

    Returns (..., fft_size // 2 + 1, n_frames).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < cfg.hop_samples:
        raise ValueError(f"clip of {x.shape[-1]} samples is shorter than one hop ({cfg.hop_samples})")
    pad = cfg.fft_size // 2
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    xp = np.pad(x, widths, mode="reflect")
    n_frames = cfg.n_frames(x.shape[-1])
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.fft_size, axis=-1)[..., :: cfg.hop_samples, :][..., :n_frames, :]
    spec = np.fft.rfft(frames * _padded_window(cfg), axis=-1)
    return np.swapaxes(np.abs(spec), -1, -2)


def stft_logmel(x: np.ndarray, cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """Log-mel spectrogram of shape (..., n_mels, n_frames) as float32.

    ``x`` must already be at ``cfg.target_rate``.
    """
    mag = stft_magnitude(x, cfg)
    mel = np.matmul(mel_filterbank(cfg), mag)
    return np.log(cfg.log_eps + mel).astype(np.float32)


def waveform_to_logmel(x: np.ndarray, rate: int, cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    return stft_logmel(resample(x, rate, cfg.target_rate), cfg)


@dataclass(frozen=True)
class FeatureNorm:
    """Global mean/std normalization of log-mels, fitted on a training subset."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, features: np.ndarray) -> FeatureNorm:
        features = np.asarray(features, dtype=np.float64)
        return cls(mean=float(features.mean()), std=float(features.std() + 1e-8))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return ((features - self.mean) / self.std).astype(np.float32)
