"""WDBC ingestion, min-max scaling and per-participant partitioning."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DataError, ParseError

N_FEATURES = 30

_MEASURES = (
    "radius", "texture", "perimeter", "area", "smoothness", "compactness",
    "concavity", "concave_points", "symmetry", "fractal_dimension",
)
FEATURE_NAMES = tuple(f"{m}_{stat}" for stat in ("mean", "se", "worst") for m in _MEASURES)


class Diagnosis(str, enum.Enum):
    MALIGNANT = "M"
    BENIGN = "B"

    @property
    def class_label(self) -> int:
        # malignant is read from the first output concept
        return 1 if self is Diagnosis.MALIGNANT else 2


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    features: np.ndarray
    label: Diagnosis

    def __post_init__(self):
        x = np.array(self.features, dtype=float)
        if x.shape != (N_FEATURES,):
            raise ValueError(f"sample {self.id} has {x.size} features, expected {N_FEATURES}")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return self.id == other.id and self.label == other.label and np.array_equal(self.features, other.features)


def parse_wdbc(raw: bytes | str | IO) -> list[Sample]:
    """Parse the comma-separated WDBC file: id, diagnosis (M/B), 30 reals per row."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    if isinstance(raw, str):
        raw = io.StringIO(raw)
    samples = []
    for lineno, row in enumerate(csv.reader(raw), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != N_FEATURES + 2:
            raise ParseError(lineno, f"expected {N_FEATURES + 2} fields, found {len(row)}")
        sample_id, diagnosis = row[0].strip(), row[1].strip()
        try:
            label = Diagnosis(diagnosis)
        except ValueError:
            raise ParseError(lineno, f"diagnosis must be M or B, got {diagnosis!r}") from None
        try:
            values = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ParseError(lineno, f"non-numeric feature ({exc})") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(lineno, "non-finite feature value")
        samples.append(Sample(sample_id, values, label))
    return samples


def format_wdbc(samples: Iterable[Sample]) -> str:
    """Inverse of :func:`parse_wdbc`."""
    lines = []
    for s in samples:
        lines.append(",".join([s.id, s.label.value] + [repr(float(v)) for v in s.features]))
    return "\n".join(lines) + "\n"


def load_wdbc(path: str | Path) -> list[Sample]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        return parse_wdbc(fh)


def load_bundled_wdbc() -> list[Sample]:
    """The copy of WDBC shipped with scikit-learn.

    That copy keeps the rows and feature columns of the UCI file but drops
    patient ids, so ids are synthesized from the row number.
    """
    from sklearn.datasets import load_breast_cancer

    bunch = load_breast_cancer()
    # sklearn codes malignant as 0
    return [
        Sample(f"wdbc-{i:03d}", x, Diagnosis.MALIGNANT if t == 0 else Diagnosis.BENIGN)
        for i, (x, t) in enumerate(zip(bunch.data, bunch.target))
    ]


def content_hash(samples: Sequence[Sample]) -> str:
    return hashlib.sha256(format_wdbc(samples).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class Scaler:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        lo = np.array(self.minimum, dtype=float)
        hi = np.array(self.maximum, dtype=float)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("scaler needs max >= min for every feature")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.maximum - self.minimum
        out = np.divide(x - self.minimum, span, out=np.zeros(np.broadcast(x, span).shape), where=span > 0)
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"min": [float(v) for v in self.minimum], "max": [float(v) for v in self.maximum]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["min"], d["max"])


def _with_features(samples: Sequence[Sample], features: np.ndarray) -> list[Sample]:
    return [Sample(s.id, x, s.label) for s, x in zip(samples, features)]


def fit_normalize(train: Sequence[Sample]) -> tuple[Scaler, list[Sample]]:
    """Fit a min-max scaler on ``train``; constant features map to 0."""
    if len(train) == 0:
        raise ValueError("cannot fit a scaler on an empty sample list")
    x = np.stack([s.features for s in train])
    scaler = Scaler(x.min(axis=0), x.max(axis=0))
    return scaler, _with_features(train, scaler.transform(x))


def apply_scaler(scaler: Scaler, samples: Sequence[Sample]) -> list[Sample]:
    if len(samples) == 0:
        return []
    return _with_features(samples, scaler.transform(np.stack([s.features for s in samples])))


@dataclass(frozen=True, eq=False)
class DatasetPartition:
    participant_id: int
    train: list[Sample]
    test: list[Sample]
    scaler: Scaler

    @staticmethod
    def _arrays(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([s.features for s in samples]) if samples else np.empty((0, N_FEATURES))
        y = np.array([s.label.class_label for s in samples], dtype=int)
        return x, y

    @property
    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self._arrays(self.train)

    @property
    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self._arrays(self.test)

    def manifest(self, **extra) -> dict:
        return {
            "participant_id": self.participant_id,
            "train_ids": [s.id for s in self.train],
            "test_ids": [s.id for s in self.test],
            "scaler": self.scaler.to_dict(),
            **extra,
        }


def _stratified_split(shard: Sequence[Sample], train_fraction: float) -> tuple[list[Sample], list[Sample]]:
    train_ix: list[int] = []
    for label in Diagnosis:
        members = [i for i, s in enumerate(shard) if s.label is label]
        k = int(round(train_fraction * len(members)))
        train_ix.extend(members[:k])
    chosen = set(train_ix)
    train = [s for i, s in enumerate(shard) if i in chosen]
    test = [s for i, s in enumerate(shard) if i not in chosen]
    return train, test


def partition(
    samples: Sequence[Sample], n_participants: int, train_fraction: float = 0.8, seed: int = 0
) -> list[DatasetPartition]:
    """Shuffle, cut into near-equal shards and split each shard train/test by class.

    Each participant's scaler is fitted on its own training split only, and
    its test split is scaled (and clipped) with it.
    """
    if n_participants < 1:
        raise ValueError("n_participants must be at least 1")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if len(samples) < n_participants:
        raise ValueError(f"{len(samples)} samples cannot fill {n_participants} shards")
    order = np.random.default_rng(seed).permutation(len(samples))
    partitions = []
    for pid, idx in enumerate(np.array_split(order, n_participants)):
        shard = [samples[i] for i in idx]
        train, test = _stratified_split(shard, train_fraction)
        missing = {d.name.lower() for d in Diagnosis} - {s.label.name.lower() for s in train}
        if missing:
            raise ValueError(
                f"participant {pid} would train without any {', '.join(sorted(missing))} samples; "
                "use fewer participants or a larger train_fraction"
            )
        if not test:
            raise ValueError(f"participant {pid} has an empty test split; use a smaller train_fraction")
        scaler, train_n = fit_normalize(train)
        partitions.append(DatasetPartition(pid, train_n, apply_scaler(scaler, test), scaler))
    return partitions


def partition_from_manifest(samples: Sequence[Sample], manifest: dict) -> DatasetPartition:
    """Rebuild a partition from its manifest and the raw dataset."""
    by_id = {s.id: s for s in samples}
    try:
        train = [by_id[i] for i in manifest["train_ids"]]
        test = [by_id[i] for i in manifest["test_ids"]]
        scaler = Scaler.from_dict(manifest["scaler"])
        pid = int(manifest["participant_id"])
    except KeyError as exc:
        raise DataError(f"manifest refers to unknown sample or lacks field {exc}") from None
    if scaler.minimum.shape != (N_FEATURES,):
        raise DataError(f"manifest scaler must have {N_FEATURES} features")
    return DatasetPartition(pid, apply_scaler(scaler, train), apply_scaler(scaler, test), scaler)


def write_manifest(path: str | Path, partition_: DatasetPartition, **extra) -> None:
    Path(path).write_text(json.dumps(partition_.manifest(**extra), indent=1) + "\n")


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    for key in ("participant_id", "train_ids", "test_ids", "scaler"):
        if key not in manifest:
            raise DataError(f"manifest {path} lacks field {key!r}")
    return manifest
