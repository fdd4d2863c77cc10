"""Minimal mono PCM WAV reading/writing (16- and 24-bit)."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Return (samples in [-1, 1) as float32, sample rate). Multi-channel files are rejected."""
    with wave.open(str(path), "rb") as fh:
        channels = fh.getnchannels()
        width = fh.getsampwidth()
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    if channels != 1:
        raise ValueError(f"{path}: expected mono audio, got {channels} channels")
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        data = ints.astype(np.float32) / float(1 << 23)
    else:
        raise ValueError(f"{path}: unsupported sample width {8 * width} bit (need 16 or 24)")
    return data, rate


def write_wav(path: str | Path, samples: np.ndarray, rate: int, bits: int = 16) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    if bits == 16:
        ints = np.round(x * 32767.0).astype("<i2")
        payload = ints.tobytes()
    elif bits == 24:
        ints = np.round(x * ((1 << 23) - 1)).astype(np.int32)
        payload = ints.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    else:
        raise ValueError(f"unsupported bit depth {bits}")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(bits // 8)
        fh.setframerate(int(rate))
        fh.writeframes(payload)
    return path
