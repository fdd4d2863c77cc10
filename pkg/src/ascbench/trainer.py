"""Training loop: AdamW, warmup + cosine learning rate, on-the-fly augmentation, optional distillation."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from torch.nn import functional as F

from . import augment
from .evaluate import PredictionSet, macro_accuracy_from_labels
from .frontend import DEFAULT_FRONTEND, FrontendConfig, FeatureNorm, resample, stft_logmel
from .manifest import SCENE_INDEX, SCENES, Manifest
from .model import GraphNet
from .wavio import read_wav

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 256
    lr: float = 0.005
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.1
    lr_floor: float = 1e-5
    seed: int = 0
    # augmentation; zero disables
    roll_samples: int = 3200
    mixstyle_p: float = 0.4
    mixstyle_alpha: float = 0.3
    freq_mask_width: int = 48
    dir_p: float = 0.0
    normalize: bool = True
    select_best: bool = False
    # distillation (used only when teacher logits are supplied)
    kd_temperature: float = 2.0
    kd_weight: float = 0.5

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping[str, object]) -> TrainConfig:
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        defaults = cls()
        kwargs = {}
        for key, value in d.items():
            kind = type(getattr(defaults, key))
            if kind is bool and isinstance(value, str):
                value = value.strip().lower() in ("1", "true", "yes", "on")
            kwargs[key] = kind(value)
        return cls(**kwargs)


@dataclass
class KDConfig:
    teacher_logits: dict[str, np.ndarray]
    temperature: float = 2.0
    weight: float = 0.5

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("distillation weight must lie in [0, 1]")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_accuracy", "lr"])
            for i, row in enumerate(zip(self.train_loss, self.val_accuracy, self.lr), start=1):
                writer.writerow([i] + [repr(float(v)) for v in row])
        return path


@dataclass
class ClipSet:
    """Waveforms at the frontend rate with integer scene labels."""

    filenames: list[str]
    waves: np.ndarray
    labels: np.ndarray
    devices: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.filenames)

    def take(self, idx) -> ClipSet:
        idx = np.asarray(idx, dtype=np.int64)
        return ClipSet(
            [self.filenames[i] for i in idx],
            self.waves[idx],
            self.labels[idx],
            [self.devices[i] for i in idx] if self.devices else [],
        )

    def select(self, filenames) -> ClipSet:
        pos = {f: i for i, f in enumerate(self.filenames)}
        missing = [f for f in filenames if f not in pos]
        if missing:
            raise KeyError(f"{len(missing)} clip(s) not loaded, first: {missing[0]!r}")
        return self.take([pos[f] for f in filenames])


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    return x[:n] if len(x) >= n else np.pad(x, (0, n - len(x)))


def clips_from_store(
    m: Manifest, store: Mapping[str, np.ndarray], rate: int, frontend: FrontendConfig = DEFAULT_FRONTEND
) -> ClipSet:
    n = frontend.target_rate
    waves = np.stack([_fit_length(resample(store[r.filename], rate, frontend.target_rate), n) for r in m.records])
    labels = np.array([SCENE_INDEX[r.scene] for r in m.records], dtype=np.int64)
    return ClipSet(m.filenames, waves.astype(np.float32), labels, [r.device for r in m.records])


def load_clips(m: Manifest, audio_root: str | Path, frontend: FrontendConfig = DEFAULT_FRONTEND) -> ClipSet:
    """Read and resample every clip in ``m`` (paths relative to ``audio_root``); 1-s clips are padded/trimmed."""
    root = Path(audio_root)
    waves = []
    for r in m.records:
        path = root / r.filename
        if not path.is_file():
            raise FileNotFoundError(f"audio file missing: {path}")
        data, rate = read_wav(path)
        waves.append(_fit_length(resample(data, rate, frontend.target_rate), frontend.target_rate))
    labels = np.array([SCENE_INDEX[r.scene] for r in m.records], dtype=np.int64)
    return ClipSet(m.filenames, np.stack(waves).astype(np.float32), labels, [r.device for r in m.records])


def compute_features(waves: np.ndarray, frontend: FrontendConfig = DEFAULT_FRONTEND, chunk: int = 64) -> np.ndarray:
    return np.concatenate([stft_logmel(waves[i : i + chunk], frontend) for i in range(0, len(waves), chunk)])


def kd_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    labels: torch.Tensor,
    temperature: float,
    weight: float,
) -> torch.Tensor:
    """(1 - w) * CE(student, labels) + w * T^2 * KL(softmax(teacher/T) || softmax(student/T)), batch mean."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(f"student {tuple(student_logits.shape)} and teacher {tuple(teacher_logits.shape)} logits differ in shape")
    ce = F.cross_entropy(student_logits, labels)
    log_p_student = F.log_softmax(student_logits / temperature, dim=1)
    log_p_teacher = F.log_softmax(teacher_logits / temperature, dim=1)
    kl = F.kl_div(log_p_student, log_p_teacher, reduction="batchmean", log_target=True)
    return (1.0 - weight) * ce + weight * temperature**2 * kl


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``cfg.lr``, then cosine decay reaching ``cfg.lr_floor`` at the last step (total_steps - 1)."""
    warmup = int(round(cfg.warmup_fraction * total_steps))
    if step < warmup:
        return cfg.lr * step / warmup
    span = total_steps - 1 - warmup
    if span <= 0:
        return cfg.lr
    progress = min(max((step - warmup) / span, 0.0), 1.0)
    return cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + math.cos(math.pi * progress))


def training_loss(
    net: GraphNet,
    features: torch.Tensor,
    labels: torch.Tensor,
    teacher: torch.Tensor | None = None,
    temperature: float = 1.0,
    weight: float = 0.0,
) -> torch.Tensor:
    logits = net(features)
    if teacher is None:
        return F.cross_entropy(logits, labels)
    return kd_loss(logits, teacher, labels, temperature, weight)


def augment_batch(
    waves: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    frontend: FrontendConfig = DEFAULT_FRONTEND,
    ir_bank: augment.ImpulseResponseBank | None = None,
) -> np.ndarray:
    """Waveform augmentation -> log-mel -> spectrogram augmentation, for one batch."""
    waves = np.array(waves, dtype=np.float32)
    if cfg.dir_p > 0:
        waves = np.stack([augment.dir_convolve(w, ir_bank, cfg.dir_p, rng) for w in waves])
    if cfg.roll_samples > 0:
        waves = np.stack([augment.time_roll(w, cfg.roll_samples, rng) for w in waves])
    feats = stft_logmel(waves, frontend)
    if cfg.mixstyle_p > 0:
        feats = augment.freq_mixstyle(
            feats, augment.FreqMixStyleConfig(alpha=cfg.mixstyle_alpha, p=cfg.mixstyle_p), rng
        )
    if cfg.freq_mask_width > 0:
        feats = np.stack([augment.freq_mask(f, cfg.freq_mask_width, rng) for f in feats])
    return feats


@torch.no_grad()
def predict_logits(net: GraphNet, features: np.ndarray, batch_size: int = 128) -> np.ndarray:
    was_training = net.training
    net.eval()
    out = [net(torch.from_numpy(np.ascontiguousarray(features[i : i + batch_size]))).float().numpy()
           for i in range(0, len(features), batch_size)]
    net.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, len(SCENES)), dtype=np.float32)


def predict(net: GraphNet, clips: ClipSet, frontend: FrontendConfig = DEFAULT_FRONTEND) -> PredictionSet:
    logits = predict_logits(net, compute_features(clips.waves, frontend)).astype(np.float64)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    labels = tuple(SCENES[i] for i in logits.argmax(axis=1))
    return PredictionSet(tuple(clips.filenames), labels, probs)


def train(
    model: GraphNet,
    train_clips: ClipSet,
    val_clips: ClipSet | None,
    cfg: TrainConfig,
    kd: KDConfig | None = None,
    frontend: FrontendConfig = DEFAULT_FRONTEND,
    ir_bank: augment.ImpulseResponseBank | None = None,
) -> tuple[GraphNet, TrainHistory]:
    """Train a copy of ``model``; the input network is left untouched.

    Returns the final-epoch network (or the best one on ``val_clips`` when
    ``cfg.select_best``) and the per-epoch history.
    """
    if len(train_clips) == 0:
        raise ValueError("empty training set")
    teacher = None
    if kd is not None:
        missing = [f for f in train_clips.filenames if f not in kd.teacher_logits]
        if missing:
            raise KeyError(f"teacher logits missing for {len(missing)} training clip(s), first: {missing[0]!r}")
        teacher = np.stack([np.asarray(kd.teacher_logits[f], dtype=np.float32) for f in train_clips.filenames])
    if cfg.dir_p > 0 and (ir_bank is None or len(ir_bank) == 0):
        raise ValueError("dir_p > 0 requires an impulse-response bank")

    net = copy.deepcopy(model)
    history = TrainHistory()
    if cfg.epochs == 0:
        return net, history

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if cfg.normalize:
        norm = FeatureNorm.fit(compute_features(train_clips.waves, frontend))
        net.set_normalization(norm.mean, norm.std)
    val_feats = compute_features(val_clips.waves, frontend) if val_clips is not None and len(val_clips) else None

    net.train()
    optimizer = torch.optim.AdamW(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(train_clips)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    labels_all = torch.from_numpy(train_clips.labels)
    step = 0
    best_acc, best_state = -1.0, None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            lr = lr_at(step, total_steps, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            feats = torch.from_numpy(augment_batch(train_clips.waves[idx], cfg, rng, frontend, ir_bank))
            if teacher is None:
                loss = training_loss(net, feats, labels_all[idx])
            else:
                loss = training_loss(net, feats, labels_all[idx], torch.from_numpy(teacher[idx]), kd.temperature, kd.weight)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()) * len(idx))
            step += 1
        history.train_loss.append(sum(losses) / n)
        history.lr.append(lr)
        if val_feats is not None:
            pred = predict_logits(net, val_feats).argmax(axis=1)
            acc = macro_accuracy_from_labels(pred, val_clips.labels)
        else:
            acc = float("nan")
        history.val_accuracy.append(acc)
        log.info("epoch %d/%d loss %.4f val macro acc %.4f lr %.2e", epoch + 1, cfg.epochs, history.train_loss[-1], acc, lr)
        if cfg.select_best and val_feats is not None and acc > best_acc:
            best_acc, best_state = acc, copy.deepcopy(net.state_dict())
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    return net, history


def write_teacher_logits(logits: Mapping[str, np.ndarray], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filename", *SCENES])
        for name, row in logits.items():
            writer.writerow([name, *(repr(float(v)) for v in row)])
    return path


def read_teacher_logits(path: str | Path) -> dict[str, np.ndarray]:
    """Teacher logit table: header ``filename`` followed by one column per scene."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "filename" or len(header) != len(SCENES) + 1:
            raise ValueError(f"{path}: expected header 'filename' + {len(SCENES)} logit columns")
        out = {}
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {row_no} has {len(row)} fields")
            out[row[0]] = np.array([float(v) for v in row[1:]], dtype=np.float32)
    return out


def config_snapshot(cfg: TrainConfig) -> dict:
    return asdict(cfg)
