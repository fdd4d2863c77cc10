"""Scene/device/city taxonomy, manifest parsing and device-held-out splitting."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

SCENES: tuple[str, ...] = (
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
)
SCENE_INDEX = {name: i for i, name in enumerate(SCENES)}

REAL_DEVICES = ("A", "B", "C", "D")
SIMULATED_DEVICES = tuple(f"S{i}" for i in range(1, 11))
DEVICES: tuple[str, ...] = REAL_DEVICES + SIMULATED_DEVICES

SplitTag = Literal["development-train", "development-test", "evaluation"]
SPLIT_TAGS: tuple[str, ...] = ("development-train", "development-test", "evaluation")

# Which devices may appear in which split.
ALLOWED_DEVICES: dict[str, frozenset[str]] = {
    "development-train": frozenset({"A", "B", "C", "S1", "S2", "S3"}),
    "development-test": frozenset({"A", "B", "C", "S1", "S2", "S3", "S4", "S5", "S6"}),
    "evaluation": frozenset(DEVICES),
}
UNSEEN_DEVICES = frozenset({"S4", "S5", "S6"})

MANIFEST_HEADER = ("filename", "scene_label", "city", "device")
SOURCE_SAMPLE_RATE = 44_100


class ManifestError(ValueError):
    """Raised for unreadable or semantically invalid manifest files."""


def device_kind(device: str) -> str:
    return "simulated" if device.startswith("S") else "real"


def normalize_device(raw: str) -> str:
    dev = raw.strip().upper()
    if dev not in DEVICES:
        raise ManifestError(f"unknown device id {raw!r}")
    return dev


@dataclass(frozen=True)
class ClipRecord:
    filename: str
    scene: str
    city: str
    device: str
    duration: float = 1.0
    sample_rate: int = SOURCE_SAMPLE_RATE

    @property
    def stratum(self) -> tuple[str, str, str]:
        return (self.scene, self.device, self.city)


@dataclass(frozen=True)
class Manifest:
    records: tuple[ClipRecord, ...]
    split_tag: str = "development-train"

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def filenames(self) -> list[str]:
        return [r.filename for r in self.records]

    def by_filename(self) -> dict[str, ClipRecord]:
        return {r.filename: r for r in self.records}

    def subset(self, filenames: Iterable[str], split_tag: str | None = None) -> Manifest:
        """Records for ``filenames``, in the given order."""
        index = self.by_filename()
        missing = [f for f in filenames if f not in index]
        if missing:
            raise ManifestError(f"{len(missing)} filename(s) not in manifest, first: {missing[0]!r}")
        return Manifest(tuple(index[f] for f in filenames), split_tag or self.split_tag)

    def devices(self) -> set[str]:
        return {r.device for r in self.records}


def parse_manifest(path: str | Path, split_tag: str = "development-train") -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    text = path.read_text(encoding="utf-8")
    return parse_manifest_text(text, split_tag=split_tag, source=str(path))


def parse_manifest_text(text: str, split_tag: str = "development-train", source: str = "<string>") -> Manifest:
    lines = text.splitlines()
    if not lines or tuple(lines[0].rstrip("\r").split("\t")) != MANIFEST_HEADER:
        raise ManifestError(f"{source}: expected tab-separated header {list(MANIFEST_HEADER)}")
    records = []
    seen: set[str] = set()
    for row_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 4 or not all(f.strip() for f in fields):
            raise ManifestError(f"{source}: malformed row {row_no}: expected 4 non-empty tab-separated fields")
        filename, scene, city, device = (f.strip() for f in fields)
        if scene not in SCENE_INDEX:
            raise ManifestError(f"{source}: row {row_no}: unknown scene label {scene!r}")
        try:
            dev = normalize_device(device)
        except ManifestError as exc:
            raise ManifestError(f"{source}: row {row_no}: {exc}") from None
        if filename in seen:
            raise ManifestError(f"{source}: row {row_no}: duplicate filename {filename!r}")
        seen.add(filename)
        records.append(ClipRecord(filename=filename, scene=scene, city=city, device=dev))
    return Manifest(tuple(records), split_tag)


def format_manifest(m: Manifest) -> str:
    out = io.StringIO()
    out.write("\t".join(MANIFEST_HEADER) + "\n")
    for r in m.records:
        out.write(f"{r.filename}\t{r.scene}\t{r.city}\t{r.device.lower()}\n")
    return out.getvalue()


def write_manifest(m: Manifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_manifest(m), encoding="utf-8", newline="\n")
    return path


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    filename: str | None = None


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)


def validate_manifest(m: Manifest, expected_split: str) -> ValidationReport:
    """Collect split-membership, uniqueness and field violations; never raises."""
    report = ValidationReport()
    allowed = ALLOWED_DEVICES.get(expected_split)
    if allowed is None:
        report.violations.append(Violation("split", f"unknown split tag {expected_split!r}"))
        allowed = frozenset(DEVICES)
    seen: set[str] = set()
    for r in m.records:
        if not r.filename or not r.city:
            report.violations.append(Violation("missing-field", "empty filename or city", r.filename or None))
        if r.filename in seen:
            report.violations.append(Violation("duplicate", f"duplicate filename {r.filename!r}", r.filename))
        seen.add(r.filename)
        if r.scene not in SCENE_INDEX:
            report.violations.append(Violation("scene", f"unknown scene label {r.scene!r}", r.filename))
        if r.device not in DEVICES:
            report.violations.append(Violation("device", f"unknown device {r.device!r}", r.filename))
        elif r.device not in allowed:
            report.violations.append(
                Violation("device", f"device {r.device} not allowed in {expected_split}", r.filename)
            )
    return report


def round_half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def as_fraction(f: float) -> Fraction:
    """Exact decimal reading of a user fraction such as 0.05 (avoids 0.05*10 = 0.5000000000000001)."""
    return Fraction(str(f))


def make_device_split(
    m: Manifest,
    holdout_devices: Iterable[str],
    test_fraction: float,
    seed: int,
) -> tuple[Manifest, Manifest]:
    """Send every holdout-device clip plus ``test_fraction`` of each remaining scene x device stratum to test."""
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError(f"test_fraction must lie in [0, 1], got {test_fraction}")
    holdout = {normalize_device(d) for d in holdout_devices}
    absent = holdout - m.devices()
    if absent:
        raise ManifestError(f"holdout devices not present in manifest: {sorted(absent)}")

    strata: dict[tuple[str, str], list[int]] = defaultdict(list)
    test_idx: set[int] = set()
    for i, r in enumerate(m.records):
        if r.device in holdout:
            test_idx.add(i)
        else:
            strata[(r.scene, r.device)].append(i)

    rng = np.random.default_rng(seed)
    frac = as_fraction(test_fraction)
    for key in sorted(strata):
        members = strata[key]
        k = round_half_up(frac * len(members))
        order = rng.permutation(len(members))
        test_idx.update(members[j] for j in order[:k])

    train = tuple(r for i, r in enumerate(m.records) if i not in test_idx)
    test = tuple(r for i, r in enumerate(m.records) if i in test_idx)
    return Manifest(train, "development-train"), Manifest(test, "development-test")
