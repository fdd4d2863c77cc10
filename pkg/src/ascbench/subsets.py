"""Nested, stratified training subsets (5/10/25/50/100 %)."""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .manifest import Manifest, ManifestError, as_fraction, round_half_up

DEFAULT_FRACTIONS = (0.05, 0.10, 0.25, 0.50, 1.00)


@dataclass(frozen=True)
class SubsetFamily:
    fractions: tuple[float, ...]
    members: dict[float, tuple[str, ...]]
    seed: int

    def __getitem__(self, fraction: float) -> tuple[str, ...]:
        return self.members[fraction]


def percent_tag(fraction: float) -> int:
    pct = as_fraction(fraction) * 100
    if pct.denominator != 1:
        raise ValueError(f"fraction {fraction} is not a whole percentage")
    return int(pct)


def subset_filename(fraction: float) -> str:
    return f"split{percent_tag(fraction)}.csv"


def _check_fractions(fractions: Sequence[float]) -> tuple[float, ...]:
    fr = tuple(sorted(float(f) for f in fractions))
    for f in fr:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"subset fractions must lie in (0, 1], got {f}")
    if len(set(fr)) != len(fr):
        raise ValueError("duplicate subset fractions")
    return fr


def make_nested_subsets(m: Manifest, fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0) -> SubsetFamily:
    """Per scene x device x city stratum, rank clips by a seeded random priority
    and let each fraction keep the top round-half-up(f * stratum size) clips.

    Because every subset takes a prefix of the same ranking, smaller subsets are
    contained in larger ones.
    """
    fr = _check_fractions(fractions)
    if 1.0 not in fr:
        raise ValueError("fractions must include 1.0")
    if len(m) == 0:
        raise ValueError("cannot sample subsets from an empty manifest")

    strata: dict[tuple[str, str, str], list[int]] = defaultdict(list)
    for i, rec in enumerate(m.records):
        strata[rec.stratum].append(i)

    rng = np.random.default_rng(seed)
    ranked: dict[tuple[str, str, str], list[int]] = {}
    for key in sorted(strata):
        idx = strata[key]
        ranked[key] = [idx[j] for j in rng.permutation(len(idx))]

    members = {}
    for f in fr:
        frac = as_fraction(f)
        chosen: set[int] = set()
        for key, order in ranked.items():
            chosen.update(order[: round_half_up(frac * len(order))])
        members[f] = tuple(m.records[i].filename for i in sorted(chosen))
    return SubsetFamily(fractions=fr, members=members, seed=seed)


@dataclass(frozen=True)
class ShareDeviation:
    fraction: float
    attribute: str
    value: str
    share_full: float
    share_subset: float

    @property
    def deviation_pp(self) -> float:
        return abs(self.share_subset - self.share_full) * 100.0


def stratification_report(family: SubsetFamily, m: Manifest) -> list[ShareDeviation]:
    """Scene/device/city marginal shares of every subset against the full manifest."""
    index = m.by_filename()
    rows = []
    for attribute in ("scene", "device", "city"):
        full = Counter(getattr(r, attribute) for r in m.records)
        for f in family.fractions:
            subset = [index[name] for name in family.members[f]]
            counts = Counter(getattr(r, attribute) for r in subset)
            n_sub = max(len(subset), 1)
            for value in sorted(full):
                rows.append(
                    ShareDeviation(
                        fraction=f,
                        attribute=attribute,
                        value=value,
                        share_full=full[value] / len(m),
                        share_subset=counts[value] / n_sub,
                    )
                )
    return rows


def max_deviation(rows: list[ShareDeviation], attribute: str, fraction: float | None = None) -> float:
    vals = [r.deviation_pp for r in rows if r.attribute == attribute and (fraction is None or r.fraction == fraction)]
    return max(vals, default=0.0)


def write_subset_files(family: SubsetFamily, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in family.fractions:
        path = out_dir / subset_filename(f)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["filename"])
            writer.writerows([name] for name in family.members[f])
        paths.append(path)
    return paths


def read_subset_file(path: str | Path, m: Manifest) -> list[str]:
    """Filenames listed in a subset CSV; every one must exist in ``m``.

    Tab-separated files with extra columns (the official split format) are accepted too.
    """
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        reader = csv.reader(fh, delimiter="\t" if "\t" in first else ",")
        header = next(reader, None)
        if header is None or header[0].strip() != "filename":
            raise ManifestError(f"{path}: expected CSV header 'filename'")
        names = [row[0].strip() for row in reader if row and row[0].strip()]
    known = set(m.filenames)
    for row_no, name in enumerate(names, start=2):
        if name not in known:
            raise ManifestError(f"{path}: row {row_no}: clip {name!r} not found in manifest")
    return names
