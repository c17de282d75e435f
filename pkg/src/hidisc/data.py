"""Feature datasets and their on-disk text format.

A feature file is UTF-8 with LF line endings::

    HIDISC-FEATURES v1 n=<n> d=<d>
    <domain_id>,<label>,<f0>,...,<f{d-1}>
    ...

Floats are written with 17 significant digits so a write/read round trip is exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError, ShapeError

MAGIC = "HIDISC-FEATURES v1"
_HEADER = re.compile(r"^HIDISC-FEATURES v1 n=(\d+) d=(\d+)$")


@dataclass
class FeatureDataset:
    """Rows of ``(domain id, class label, feature vector)``."""

    domains: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    known_classes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.domains = np.asarray(self.domains, dtype=str)
        self.labels = np.asarray(self.labels, dtype=str)
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.known_classes = tuple(str(k) for k in self.known_classes)
        n = len(self.features)
        if len(self.domains) != n or len(self.labels) != n:
            raise ShapeError("domains, labels and features must have the same number of rows")
        if n and self.features.shape[1] < 1:
            raise ShapeError("features must have at least one column")
        for s in np.concatenate([self.domains, self.labels]):
            if not s or "," in s or "\n" in s:
                raise DataFormatError(f"invalid domain id or label {s!r}")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def domain_ids(self) -> list[str]:
        return sorted(set(self.domains.tolist()))

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.labels.tolist()))

    @property
    def novel_classes(self) -> list[str]:
        known = set(self.known_classes)
        return [k for k in self.classes if k not in known]

    def subset(self, mask) -> "FeatureDataset":
        mask = np.asarray(mask)
        return FeatureDataset(self.domains[mask], self.labels[mask], self.features[mask], self.known_classes)

    def select_domains(self, ids: Iterable[str]) -> "FeatureDataset":
        return self.subset(np.isin(self.domains, list(ids)))

    def known_only(self) -> "FeatureDataset":
        if not self.known_classes:
            return self
        return self.subset(np.isin(self.labels, list(self.known_classes)))

    @staticmethod
    def concat(parts: Sequence["FeatureDataset"]) -> "FeatureDataset":
        if not parts:
            raise ShapeError("nothing to concatenate")
        dims = {p.dim for p in parts if len(p)}
        if len(dims) > 1:
            raise ShapeError(f"feature dimensions differ across datasets: {sorted(dims)}")
        known = tuple(dict.fromkeys(k for p in parts for k in p.known_classes))
        return FeatureDataset(
            np.concatenate([p.domains for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.features for p in parts]),
            known,
        )


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_features(ds: FeatureDataset, path) -> None:
    lines = [f"{MAGIC} n={len(ds)} d={ds.dim}"]
    for dom, lab, row in zip(ds.domains, ds.labels, ds.features):
        lines.append(",".join([dom, lab, *map(format_float, row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_features(path, known_classes: Sequence[str] = ()) -> FeatureDataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    m = _HEADER.match(lines[0])
    if not m:
        raise DataFormatError(f"{path}: bad header {lines[0]!r}")
    n, d = int(m.group(1)), int(m.group(2))
    rows = lines[1:]
    if len(rows) != n:
        raise DataFormatError(f"{path}: header declares {n} rows, found {len(rows)}")
    doms, labs = [], []
    feats = np.empty((n, d))
    for i, line in enumerate(rows):
        parts = line.split(",")
        if len(parts) != d + 2:
            raise DataFormatError(f"{path}:{i + 2}: expected {d + 2} fields, found {len(parts)}")
        doms.append(parts[0])
        labs.append(parts[1])
        try:
            feats[i] = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise DataFormatError(f"{path}:{i + 2}: {exc}") from None
    return FeatureDataset(np.array(doms), np.array(labs), feats, tuple(known_classes))
