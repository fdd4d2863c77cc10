"""Deterministic synthetic stand-in for the multi-device acoustic scene corpus.

Every scene is a recipe of three characteristic tones plus one band of noise.
Each source clip is "recorded" in parallel by every device, the way the real
corpus was captured, so the only difference between two recordings of the same
clip is the device's shelving filters and gain.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .manifest import (
    DEVICES,
    SCENE_INDEX,
    SCENES,
    SOURCE_SAMPLE_RATE,
    ClipRecord,
    Manifest,
    normalize_device,
    write_manifest,
)
from .wavio import write_wav

DEFAULT_DEVICES = ("A", "B", "C", "S1", "S2", "S3", "S4", "S5", "S6")
SOURCE_PEAK = 0.2


@dataclass(frozen=True)
class SceneRecipe:
    tones_hz: tuple[float, float, float]
    noise_band_hz: tuple[float, float]
    tone_level_db: float = 0.0
    noise_level_db: float = -6.0


@dataclass(frozen=True)
class DeviceFilter:
    low_shelf_hz: float = 400.0
    low_shelf_db: float = 0.0
    high_shelf_hz: float = 4000.0
    high_shelf_db: float = 0.0
    gain_db: float = 0.0


@dataclass
class SyntheticCorpusSpec:
    clips_per_scene_device: int = 2
    scenes: tuple[str, ...] = SCENES
    devices: tuple[str, ...] = DEFAULT_DEVICES
    n_cities: int = 3
    seed: int = 0
    sample_rate: int = SOURCE_SAMPLE_RATE
    duration: float = 1.0
    background_db: float = -12.0
    # difficulty knobs: per-tone dropout, relative frequency jitter, chance of an off-recipe tone
    tone_dropout: float = 0.0
    freq_jitter: float = 0.02
    distractor_prob: float = 0.0
    scene_signatures: dict[str, SceneRecipe] = field(default_factory=dict)
    device_filters: dict[str, DeviceFilter] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.scenes = tuple(self.scenes)
        self.devices = tuple(normalize_device(d) for d in self.devices)
        if not self.scene_signatures:
            self.scene_signatures = default_scene_recipes(self.scenes)
        if not self.device_filters:
            self.device_filters = default_device_filters(self.devices, self.seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> SyntheticCorpusSpec:
        data = dict(data)
        if "scene_signatures" in data:
            data["scene_signatures"] = {
                k: SceneRecipe(
                    tones_hz=tuple(v["tones_hz"]),
                    noise_band_hz=tuple(v["noise_band_hz"]),
                    tone_level_db=v.get("tone_level_db", 0.0),
                    noise_level_db=v.get("noise_level_db", -6.0),
                )
                for k, v in data["scene_signatures"].items()
            }
        if "device_filters" in data:
            data["device_filters"] = {k: DeviceFilter(**v) for k, v in data["device_filters"].items()}
        for key in ("scenes", "devices"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


TONE_POOL_HZ = tuple(float(round(f, 1)) for f in np.geomspace(200.0, 8000.0, 12))


def default_scene_recipes(scenes: tuple[str, ...]) -> dict[str, SceneRecipe]:
    """Three tones per scene drawn from a shared 12-tone pool (neighbouring
    scenes share one tone) plus a scene-specific noise band."""
    bands = np.geomspace(300.0, 12000.0, len(SCENES) + 1)
    pool = TONE_POOL_HZ
    recipes = {}
    for scene in scenes:
        i = SCENE_INDEX[scene]
        tones = (pool[i], pool[i + 1], pool[(i + 6) % len(pool)])
        band = (float(round(bands[i], 1)), float(round(bands[i + 1], 1)))
        recipes[scene] = SceneRecipe(tones_hz=tones, noise_band_hz=band)
    return recipes


def default_device_filters(devices: tuple[str, ...], seed: int) -> dict[str, DeviceFilter]:
    filters = {}
    for dev in devices:
        if dev == "A":
            filters[dev] = DeviceFilter()
            continue
        rng = np.random.default_rng([seed, 7919, DEVICES.index(dev)])
        filters[dev] = DeviceFilter(
            low_shelf_hz=float(rng.uniform(200.0, 800.0)),
            low_shelf_db=float(rng.uniform(-9.0, 9.0)),
            high_shelf_hz=float(rng.uniform(2000.0, 6000.0)),
            high_shelf_db=float(rng.uniform(-9.0, 9.0)),
            gain_db=float(rng.uniform(-4.0, 4.0)),
        )
    return filters


def shelf_biquad(kind: str, freq: float, gain_db: float, rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Second-order shelving filter with unit shelf slope."""
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * freq / rate
    cos_w, alpha = np.cos(w0), np.sin(w0) / 2.0 * np.sqrt(2.0)
    sq = 2.0 * np.sqrt(a) * alpha
    if kind == "low":
        b = [a * ((a + 1) - (a - 1) * cos_w + sq), 2 * a * ((a - 1) - (a + 1) * cos_w), a * ((a + 1) - (a - 1) * cos_w - sq)]
        den = [(a + 1) + (a - 1) * cos_w + sq, -2 * ((a - 1) + (a + 1) * cos_w), (a + 1) + (a - 1) * cos_w - sq]
    elif kind == "high":
        b = [a * ((a + 1) + (a - 1) * cos_w + sq), -2 * a * ((a - 1) + (a + 1) * cos_w), a * ((a + 1) + (a - 1) * cos_w - sq)]
        den = [(a + 1) - (a - 1) * cos_w + sq, 2 * ((a - 1) - (a + 1) * cos_w), (a + 1) - (a - 1) * cos_w - sq]
    else:
        raise ValueError(f"unknown shelf kind {kind!r}")
    b, den = np.asarray(b), np.asarray(den)
    return b / den[0], den / den[0]


def apply_device(x: np.ndarray, filt: DeviceFilter, rate: int) -> np.ndarray:
    y = np.asarray(x, dtype=np.float64)
    if filt.low_shelf_db != 0.0:
        y = lfilter(*shelf_biquad("low", filt.low_shelf_hz, filt.low_shelf_db, rate), y)
    if filt.high_shelf_db != 0.0:
        y = lfilter(*shelf_biquad("high", filt.high_shelf_hz, filt.high_shelf_db, rate), y)
    return y * 10.0 ** (filt.gain_db / 20.0)


def _band_noise(rng: np.random.Generator, n: int, rate: int, lo: float, hi: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    out = np.fft.irfft(spec, n)
    return out / (np.std(out) + 1e-12)


def _pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    scale = 1.0 / np.sqrt(np.maximum(np.arange(spec.size), 1.0))
    out = np.fft.irfft(spec * scale, n)
    return out / (np.std(out) + 1e-12)


def source_clip(spec: SyntheticCorpusSpec, scene: str, index: int) -> np.ndarray:
    """Device-independent source signal for clip ``index`` of ``scene``."""
    rate = spec.sample_rate
    n = int(round(spec.duration * rate))
    rng = np.random.default_rng([spec.seed, SCENE_INDEX[scene], index])
    recipe = spec.scene_signatures[scene]
    t = np.arange(n) / rate

    x = np.zeros(n)
    tone_amp = 10.0 ** (recipe.tone_level_db / 20.0)
    tones = list(recipe.tones_hz)
    if rng.random() < spec.distractor_prob:
        tones.append(TONE_POOL_HZ[int(rng.integers(len(TONE_POOL_HZ)))])
    for f in tones:
        keep = rng.random() >= spec.tone_dropout
        freq = f * (1.0 + rng.uniform(-spec.freq_jitter, spec.freq_jitter))
        amp = keep * tone_amp * 10.0 ** (rng.uniform(-6.0, 0.0) / 20.0)
        mod = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t + rng.uniform(0, 2 * np.pi))
        x += amp * mod * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    lo, hi = recipe.noise_band_hz
    x += 10.0 ** (recipe.noise_level_db / 20.0) * _band_noise(rng, n, rate, lo, hi)
    bg_db = spec.background_db + rng.uniform(-6.0, 6.0)
    x += 10.0 ** (bg_db / 20.0) * _pink_noise(rng, n)
    return SOURCE_PEAK * x / np.max(np.abs(x))


def _check(spec: SyntheticCorpusSpec) -> None:
    if not spec.scenes:
        raise ValueError("synthetic corpus needs at least one scene")
    if not spec.devices:
        raise ValueError("synthetic corpus needs at least one device")
    if spec.clips_per_scene_device < 1:
        raise ValueError("clips_per_scene_device must be >= 1")
    if spec.n_cities < 1:
        raise ValueError("n_cities must be >= 1")
    unknown = set(spec.scenes) - set(SCENE_INDEX)
    if unknown:
        raise ValueError(f"unknown scenes: {sorted(unknown)}")


def clip_filename(scene: str, city: str, index: int, device: str) -> str:
    return f"audio/{scene}-{city}-{index:04d}-{device.lower()}.wav"


def _grid(spec: SyntheticCorpusSpec):
    for scene in spec.scenes:
        for j in range(spec.clips_per_scene_device):
            city = f"city{j % spec.n_cities + 1}"
            for dev in spec.devices:
                yield scene, j, city, dev


def synthetic_manifest(spec: SyntheticCorpusSpec) -> Manifest:
    """The corpus manifest alone (no audio), covering the scene x device x city grid."""
    _check(spec)
    records = [
        ClipRecord(
            filename=clip_filename(scene, city, j, dev),
            scene=scene,
            city=city,
            device=dev,
            duration=spec.duration,
            sample_rate=spec.sample_rate,
        )
        for scene, j, city, dev in _grid(spec)
    ]
    return Manifest(tuple(records), "evaluation")


def generate_synthetic_corpus(spec: SyntheticCorpusSpec) -> tuple[Manifest, dict[str, np.ndarray]]:
    """Build (manifest, {filename: float32 waveform}).

    The manifest is tagged ``evaluation`` because it spans every device; split
    it with :func:`ascbench.manifest.make_device_split`.
    """
    manifest = synthetic_manifest(spec)
    store: dict[str, np.ndarray] = {}
    source_key, source = None, None
    for rec, (scene, j, _, dev) in zip(manifest.records, _grid(spec)):
        if source_key != (scene, j):
            source_key, source = (scene, j), source_clip(spec, scene, j)
        y = apply_device(source, spec.device_filters[dev], spec.sample_rate)
        store[rec.filename] = y.astype(np.float32)
    return manifest, store


def write_corpus(manifest: Manifest, store: dict[str, np.ndarray], out_dir: str | Path, rate: int = SOURCE_SAMPLE_RATE) -> Path:
    out_dir = Path(out_dir)
    for rec in manifest.records:
        write_wav(out_dir / rec.filename, store[rec.filename], rate)
    return write_manifest(manifest, out_dir / "meta.tsv")
