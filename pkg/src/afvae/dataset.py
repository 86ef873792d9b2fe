"""ECG records, fixed-window segmentation, class balancing and fold plans.

On-disk record layout (one directory per record)::

    <record>/meta          JSON: record_id, sampling_rate_hz, n_samples,
                           annotations = [[sample_index, is_af_beat], ...]
    <record>/samples.f32le little-endian float32 samples in mV

A dataset manifest is a JSON file listing record directories (relative
to the manifest) together with ``window_seconds`` and ``threshold``.
"""

from __future__ import annotations

import enum
import json
import os
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

META_NAME = "meta"
SAMPLES_NAME = "samples.f32le"
MANIFEST_NAME = "dataset.json"

DEFAULT_WINDOW_SECONDS = 5.0
DEFAULT_THRESHOLD = 0.5


class RecordFormatError(ValueError):
    """A record directory or manifest does not follow the on-disk format."""


class Label(enum.IntEnum):
    """Class indices used by the model; AF is the positive class."""

    NORMAL = 0
    AF = 1

    def __str__(self):
        return "AF" if self is Label.AF else "Normal"

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, str):
            key = value.strip().upper()
            if key in ("AF", "AFIB"):
                return cls.AF
            if key in ("N", "NORMAL"):
                return cls.NORMAL
            raise ValueError(f"unknown label {value!r}")
        return cls(int(value))


@dataclass
class EcgRecord:
    record_id: str
    sampling_rate_hz: int
    samples: np.ndarray
    annotations: list[tuple[int, bool]] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.annotations = [(int(i), bool(af)) for i, af in self.annotations]
        self.validate()

    def validate(self) -> None:
        if int(self.sampling_rate_hz) <= 0:
            raise RecordFormatError(f"{self.record_id}: sampling_rate_hz must be positive")
        if self.samples.ndim != 1:
            raise RecordFormatError(f"{self.record_id}: samples must be one-dimensional")
        n = len(self.samples)
        prev = -1
        for idx, _ in self.annotations:
            if idx < 0 or idx >= n:
                raise RecordFormatError(
                    f"{self.record_id}: annotation index {idx} out of range for {n} samples")
            if idx <= prev:
                raise RecordFormatError(f"{self.record_id}: annotation indices must be strictly increasing")
            prev = idx

    @property
    def annotation_indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.annotations], dtype=np.int64)

    @property
    def annotation_flags(self) -> np.ndarray:
        return np.array([af for _, af in self.annotations], dtype=bool)


@dataclass
class Segment:
    record_id: str
    start_index: int
    samples: np.ndarray
    af_beat_fraction: float
    label: Label
    annotations: list[tuple[int, bool]] = field(default_factory=list)  # relative to start_index

    @property
    def segment_id(self) -> str:
        return f"{self.record_id}:{self.start_index}"


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        self._check(fold)
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        self._check(fold)
        return np.flatnonzero(self.assignments != fold)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def _check(self, fold: int) -> None:
        if not 0 <= fold < self.k:
            raise IndexError(f"fold {fold} outside [0, {self.k})")

    def to_dict(self) -> dict:
        return {"k": self.k, "assignments": self.assignments.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        return cls(int(d["k"]), np.asarray(d["assignments"], dtype=np.int64))


# ------------------------------------------------------------------ records on disk


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_record(record: EcgRecord, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "record_id": record.record_id,
        "sampling_rate_hz": int(record.sampling_rate_hz),
        "n_samples": int(len(record.samples)),
        "annotations": [[i, af] for i, af in record.annotations],
    }
    _atomic_write(directory / SAMPLES_NAME, record.samples.astype("<f4").tobytes())
    _atomic_write(directory / META_NAME, json.dumps(meta).encode("utf-8"))
    return directory


def load_record(path) -> EcgRecord:
    path = Path(path)
    meta_path, samples_path = path / META_NAME, path / SAMPLES_NAME
    if not meta_path.is_file() or not samples_path.is_file():
        raise FileNotFoundError(f"{path}: expected {META_NAME} and {SAMPLES_NAME}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        record_id = str(meta["record_id"])
        rate = meta["sampling_rate_hz"]
        n_samples = meta["n_samples"]
        raw_ann = meta["annotations"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise RecordFormatError(f"{meta_path}: malformed header ({exc})") from exc
    if not isinstance(rate, int) or not isinstance(n_samples, int) or n_samples < 0:
        raise RecordFormatError(f"{meta_path}: sampling_rate_hz and n_samples must be integers")
    payload = samples_path.read_bytes()
    if len(payload) != 4 * n_samples:
        raise RecordFormatError(
            f"{path}: header says {n_samples} samples, payload holds {len(payload) / 4:g}")
    try:
        annotations = [(int(i), bool(af)) for i, af in raw_ann]
    except (TypeError, ValueError) as exc:
        raise RecordFormatError(f"{meta_path}: annotations must be [index, is_af] pairs") from exc
    samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return EcgRecord(record_id, rate, samples, annotations)


def write_manifest(directory, record_dirs: Sequence[str], window_seconds: float = DEFAULT_WINDOW_SECONDS,
                   threshold: float = DEFAULT_THRESHOLD, **extra) -> Path:
    directory = Path(directory)
    body = {"records": list(record_dirs), "window_seconds": window_seconds, "threshold": threshold}
    body.update(extra)
    path = directory / MANIFEST_NAME
    _atomic_write(path, json.dumps(body, indent=2).encode("utf-8"))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
        records = [str(r) for r in body["records"]]
        window = float(body.get("window_seconds", DEFAULT_WINDOW_SECONDS))
        threshold = float(body.get("threshold", DEFAULT_THRESHOLD))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise RecordFormatError(f"{path}: malformed manifest ({exc})") from exc
    body.update(records=records, window_seconds=window, threshold=threshold, root=str(path.parent))
    return body


def load_dataset(path, window_seconds: float | None = None, threshold: float | None = None
                 ) -> list[Segment]:
    """Segments from every record in a manifest, in manifest order."""
    manifest = read_manifest(path)
    window = manifest["window_seconds"] if window_seconds is None else window_seconds
    thr = manifest["threshold"] if threshold is None else threshold
    root = Path(manifest["root"])
    segments: list[Segment] = []
    for rel in manifest["records"]:
        segments.extend(segment_record(load_record(root / rel), window, thr))
    return segments


# ------------------------------------------------------------------ segmentation


def window_length(sampling_rate_hz: int, window_seconds: float) -> int:
    n = window_seconds * sampling_rate_hz
    if n <= 0 or abs(n - round(n)) > 1e-9:
        raise ValueError(f"window of {window_seconds} s at {sampling_rate_hz} Hz is not a whole number of samples")
    return int(round(n))


def label_for(fraction: float, threshold: float) -> Label:
    """AF only when the AF-beat fraction strictly exceeds the threshold."""
    return Label.AF if fraction > threshold else Label.NORMAL


def segment_record(record: EcgRecord, window_seconds: float = DEFAULT_WINDOW_SECONDS,
                   threshold: float = DEFAULT_THRESHOLD) -> list[Segment]:
    """Non-overlapping windows from sample 0; the trailing partial window is dropped."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    n = window_length(record.sampling_rate_hz, window_seconds)
    total = len(record.samples)
    if total == 0:
        raise ValueError(f"{record.record_id}: cannot segment an empty record")
    idx, flags = record.annotation_indices, record.annotation_flags
    out = []
    for start in range(0, total - n + 1, n):
        lo, hi = np.searchsorted(idx, [start, start + n])
        beats = hi - lo
        frac = float(flags[lo:hi].sum()) / beats if beats else 0.0
        ann = [(int(i) - start, bool(f)) for i, f in zip(idx[lo:hi], flags[lo:hi])]
        out.append(Segment(record.record_id, start, record.samples[start:start + n].copy(),
                           frac, label_for(frac, threshold), ann))
    return out


def balance(segments: Sequence[Segment]) -> list[Segment]:
    """Every AF segment plus the first count(AF) Normal segments, input order kept.

    If Normal is the minority instead, the first count(Normal) AF segments
    are kept, so the two counts always come out equal.
    """
    n_af = sum(1 for s in segments if s.label == Label.AF)
    n_normal = len(segments) - n_af
    if n_af == 0:
        raise ValueError("no AF segments to balance against")
    if n_normal == 0:
        raise ValueError("no Normal segments to balance against")
    quota = {Label.AF: min(n_af, n_normal), Label.NORMAL: min(n_af, n_normal)}
    kept = []
    for s in segments:
        if quota[s.label] > 0:
            kept.append(s)
            quota[s.label] -= 1
    return kept


def make_folds(n_segments: int, k: int, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, then deal indices round-robin into k folds."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n_segments:
        raise ValueError(f"cannot make {k} folds from {n_segments} segments")
    order = np.random.default_rng(seed).permutation(n_segments)
    assignments = np.empty(n_segments, dtype=np.int64)
    assignments[order] = np.arange(n_segments) % k
    return FoldPlan(k, assignments)


def normalize_segment(segment) -> np.ndarray:
    """Per-segment z-score; a constant segment maps to zeros."""
    x = np.asarray(segment.samples if isinstance(segment, Segment) else segment, dtype=np.float64)
    centered = x - x.mean()
    std = np.sqrt(np.mean(centered * centered))
    if std <= 1e-12 * max(1.0, np.abs(x).max()):
        return np.zeros_like(x)
    return centered / std


def to_arrays(segments: Sequence[Segment], normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Stack segments into ``(n, length)`` inputs and integer labels."""
    if not segments:
        raise ValueError("no segments")
    rows = [normalize_segment(s) if normalize else np.asarray(s.samples, dtype=np.float64) for s in segments]
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"segments have differing lengths {sorted(lengths)}")
    return np.stack(rows), np.array([int(s.label) for s in segments], dtype=np.int64)
