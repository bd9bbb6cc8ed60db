"""Feature-CSV ingestion, synthetic datasets and report files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, EvaluationError
from .kitnet import Label


@dataclass
class LabeledDataset:
    rows: np.ndarray
    labels: Optional[np.ndarray] = None  # 0 benign, 1 malicious
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2:
            raise DataError(f"rows must form a matrix, got shape {self.rows.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.rows.shape[0],):
                raise DataError("label count does not match row count")
            if not np.isin(self.labels, (0, 1)).all():
                raise DataError("labels must be 0 (benign) or 1 (malicious)")
        if not self.feature_names:
            self.feature_names = [f"f{i}" for i in range(self.rows.shape[1])]

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def indices_of(self, label) -> np.ndarray:
        if self.labels is None:
            raise EvaluationError("dataset has no labels")
        return np.flatnonzero(self.labels == Label.parse(label).code)

    def of_class(self, label) -> np.ndarray:
        return self.rows[self.indices_of(label)]

    def label_counts(self) -> dict[str, int]:
        if self.labels is None:
            return {}
        return {"benign": int((self.labels == 0).sum()),
                "malicious": int((self.labels == 1).sum())}


@dataclass(frozen=True)
class DatasetManifest:
    path: str
    n_rows: int
    n_features: int
    has_labels: bool
    label_counts: dict
    checksum: str


@dataclass(frozen=True)
class ReportManifest:
    path: str
    format: str
    n_records: int
    checksum: str


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------------- loading

def _parse_label(cell: str, lineno: int) -> int:
    try:
        return Label.parse(cell).code
    except ValueError:
        raise DataError(f"line {lineno}: unknown label value {cell!r}") from None


def load_feature_csv(path, label_column: Optional[str] = None) -> LabeledDataset:
    """Read a header + comma-separated numeric feature file.

    ``label_column`` names the column holding 0/1 or benign/malicious labels;
    it is excluded from the features.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise DataError(f"{path}: no column named {label_column!r}")
            label_idx = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != label_idx]

        rows, labels = [], []
        for lineno, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(
                    f"line {lineno}: expected {len(header)} cells, found {len(cells)}"
                )
            values = []
            for i, cell in enumerate(cells):
                if i == label_idx:
                    labels.append(_parse_label(cell, lineno))
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"line {lineno}: non-numeric cell {cell!r}") from None
                if not np.isfinite(v):
                    raise DataError(f"line {lineno}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return LabeledDataset(np.array(rows, dtype=float),
                          np.array(labels, dtype=int) if label_idx is not None else None,
                          names)


def dataset_manifest(path, dataset: LabeledDataset) -> DatasetManifest:
    return DatasetManifest(str(path), len(dataset), dataset.n_features, dataset.has_labels,
                           dataset.label_counts(), file_checksum(path))


def write_dataset_csv(dataset: LabeledDataset, path, label_column: str = "label") -> DatasetManifest:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = list(dataset.feature_names)
    if dataset.has_labels:
        header.append(label_column)
    w.writerow(header)
    for i, row in enumerate(dataset.rows):
        cells = [repr(float(v)) for v in row]
        if dataset.has_labels:
            cells.append(str(int(dataset.labels[i])))
        w.writerow(cells)
    try:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e
    return dataset_manifest(path, dataset)


# ----------------------------------------------------------------- synthetic

@dataclass
class SyntheticConfig:
    """Gaussian traffic-like features with correlated blocks.

    Features come in contiguous groups of ``group_size`` that share one latent
    factor with weight ``correlation``. Malicious rows are benign-distributed
    rows plus ``malicious_shift`` (in units of ``spread``) on the first
    ``shifted_features`` features.
    """

    n_features: int = 20
    n_benign: int = 3000
    n_malicious: int = 1000
    benign_center: float = 5.0
    spread: float = 1.0
    malicious_shift: float | Sequence[float] = 4.0
    shifted_features: Optional[int] = None  # None: all features
    group_size: int = 5
    correlation: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_features < 1 or self.n_benign < 0 or self.n_malicious < 0:
            raise ConfigError("feature and row counts must be positive")
        if self.n_benign + self.n_malicious < 1:
            raise ConfigError("synthetic dataset needs at least one row")
        if not self.spread > 0:
            raise ConfigError("spread must be positive")
        if self.group_size < 1:
            raise ConfigError("group_size must be at least 1")
        if not 0 <= self.correlation < 1:
            raise ConfigError("correlation must lie in [0, 1)")
        if self.shifted_features is not None and not 0 <= self.shifted_features <= self.n_features:
            raise ConfigError("shifted_features must lie in [0, n_features]")

    def shift_vector(self) -> np.ndarray:
        if np.ndim(self.malicious_shift) == 0:
            k = self.n_features if self.shifted_features is None else self.shifted_features
            v = np.zeros(self.n_features)
            v[:k] = float(self.malicious_shift)
        else:
            v = np.asarray(self.malicious_shift, dtype=float)
            if v.shape != (self.n_features,):
                raise ConfigError("per-feature shift must have one entry per feature")
        return v * self.spread


def _draw(rng: np.random.Generator, n: int, cfg: SyntheticConfig) -> np.ndarray:
    n_groups = -(-cfg.n_features // cfg.group_size)
    latent = rng.standard_normal((n, n_groups))
    noise = rng.standard_normal((n, cfg.n_features))
    group_of = np.arange(cfg.n_features) // cfg.group_size
    a = np.sqrt(cfg.correlation)
    mixed = a * latent[:, group_of] + np.sqrt(1 - cfg.correlation) * noise
    return cfg.benign_center + cfg.spread * mixed


def generate_synthetic(cfg: SyntheticConfig) -> LabeledDataset:
    """Benign rows first, then malicious rows; a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    benign = _draw(rng, cfg.n_benign, cfg)
    malicious = _draw(rng, cfg.n_malicious, cfg) + cfg.shift_vector()
    rows = np.vstack([benign, malicious])
    labels = np.r_[np.zeros(cfg.n_benign, dtype=int), np.ones(cfg.n_malicious, dtype=int)]
    return LabeledDataset(rows, labels)


# ------------------------------------------------------------------- reports

REPORT_FORMATS = ("structured", "csv")


def write_report(report, path, format: str = "structured") -> ReportManifest:
    """Serialize any report object exposing ``to_dict`` and ``csv_rows``."""
    if format not in REPORT_FORMATS:
        raise ConfigError(f"unknown report format {format!r}; use one of {REPORT_FORMATS}")
    if format == "structured":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        n = 1
    else:
        header, rows = report.csv_rows()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        text = buf.getvalue()
        n = len(rows)
    try:
        parent = os.path.dirname(os.fspath(path))
        if parent:
            os.makedirs(parent, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e
    return ReportManifest(str(path), format, n, file_checksum(path))


def read_report(path):
    """Load a structured report written by ``write_report``."""
    from .evaluation import report_from_dict

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read report {path}: {e}") from e
    return report_from_dict(data)


def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
