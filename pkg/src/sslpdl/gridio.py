"""Storage, normalization, and geometric preparation of gridded fields.

Multivariate fields are stored in a purpose-built flat binary format
("SSLG") with explicit little-endian layout so that write/read round
trips are bit-exact:

    bytes 0..3    magic ``SSLG``
    bytes 4..7    version  (uint32 LE)
    bytes 8..19   n, h, w  (uint32 LE each)
    payload       n*h*w float32 LE, (var, row, col) C order
    trailer       uint32 LE byte length + UTF-8 block of variable names,
                  one name per line

Datasets are tied together by a JSON manifest listing one record per
sample (forecast path, truth path, timestamp, split tag, optional
augmentation tag).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    GridCorruptionError,
    GridFormatError,
    GridValidationError,
)

MAGIC = b"SSLG"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")  # magic, version, n, h, w


@dataclass(frozen=True)
class GridField:
    """An (n_vars, height, width) array of real-valued variables."""

    var_names: tuple[str, ...]
    values: np.ndarray  # (n, h, w)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise GridValidationError(f"values must be 3-d, got shape {v.shape}")
        if len(self.var_names) != v.shape[0]:
            raise GridValidationError(
                f"{len(self.var_names)} names for {v.shape[0]} variables"
            )
        if not np.all(np.isfinite(v)):
            raise GridValidationError("grid contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n_vars(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class NormStats:
    """Population mean/std for one variable group (name + level)."""

    group_key: str
    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ConfigError(f"negative std for group {self.group_key!r}")


@dataclass
class ManifestEntry:
    sample_id: str
    forecast: str
    truth: str
    timestamp: str  # ISO-8601
    split: str  # train | val | test
    augment: dict | None = None  # {"op": ..., "seed": ...} for duplicates


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("manifest sample_ids are not unique")

    def split(self, tag: str) -> "DatasetManifest":
        return DatasetManifest([replace(e) for e in self.entries if e.split == tag])

    def save(self, path: str | Path) -> None:
        records = []
        for e in self.entries:
            rec = {
                "sample_id": e.sample_id,
                "forecast": e.forecast,
                "truth": e.truth,
                "timestamp": e.timestamp,
                "split": e.split,
            }
            if e.augment is not None:
                rec["augment"] = e.augment
            records.append(rec)
        Path(path).write_text(json.dumps(records, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        try:
            records = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        entries = [
            ManifestEntry(
                sample_id=r["sample_id"],
                forecast=r["forecast"],
                truth=r["truth"],
                timestamp=r["timestamp"],
                split=r["split"],
                augment=r.get("augment"),
            )
            for r in records
        ]
        return cls(entries)


def write_grid(field: GridField, path: str | Path) -> None:
    """Write a field to the SSLG binary format (bit-exact round trip)."""
    n, h, w = field.values.shape
    payload = np.ascontiguousarray(field.values, dtype="<f4").tobytes()
    names = "\n".join(field.var_names).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, VERSION, n, h, w))
            f.write(payload)
            f.write(struct.pack("<I", len(names)))
            f.write(names)
    except OSError as exc:
        raise DataError(f"cannot write grid to {path}: {exc}") from exc


def read_grid(path: str | Path) -> GridField:
    """Exact inverse of :func:`write_grid`."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read grid from {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise GridCorruptionError(f"{path}: truncated header")
    magic, version, n, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise GridFormatError(f"{path}: unsupported version {version}")
    count = n * h * w
    end = _HEADER.size + 4 * count
    if len(raw) < end + 4:
        raise GridCorruptionError(f"{path}: truncated payload")
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size)
    (name_len,) = struct.unpack_from("<I", raw, end)
    if len(raw) < end + 4 + name_len:
        raise GridCorruptionError(f"{path}: truncated name block")
    names = raw[end + 4 : end + 4 + name_len].decode("utf-8")
    var_names = tuple(names.split("\n")) if names else tuple()
    if len(var_names) != n:
        raise GridCorruptionError(f"{path}: {len(var_names)} names for {n} variables")
    values = values.reshape(n, h, w)
    if not np.all(np.isfinite(values)):
        raise GridValidationError(f"{path}: non-finite values")
    return GridField(var_names=var_names, values=values.copy())


def zscore_fit(
    samples: Iterable[GridField], grouping: Mapping[int, str]
) -> list[NormStats]:
    """Fit per-group population mean/std over all pixels of all samples.

    ``grouping`` maps variable index -> group key; variables sharing a
    name at different vertical levels must map to distinct keys.
    """
    sums: dict[str, float] = {}
    sqsums: dict[str, float] = {}
    counts: dict[str, int] = {}
    n_samples = 0
    for sample in samples:
        n_samples += 1
        for vi in range(sample.n_vars):
            if vi not in grouping:
                raise ConfigError(f"grouping does not cover variable index {vi}")
            key = grouping[vi]
            plane = sample.values[vi].astype(np.float64)
            sums[key] = sums.get(key, 0.0) + float(plane.sum())
            sqsums[key] = sqsums.get(key, 0.0) + float(np.square(plane).sum())
            counts[key] = counts.get(key, 0) + plane.size
    if n_samples == 0:
        raise ConfigError("zscore_fit needs at least one sample")
    stats = []
    for key in sorted(counts):
        mean = sums[key] / counts[key]
        var = max(sqsums[key] / counts[key] - mean * mean, 0.0)
        stats.append(NormStats(group_key=key, mean=mean, std=math.sqrt(var)))
    return stats


ZERO_VARIANCE_STD = 1e-8  # below this a group normalizes to all zeros


def zscore_apply(
    field: GridField, stats: Sequence[NormStats], grouping: Mapping[int, str]
) -> GridField:
    """Normalize each variable with its group's (x - mean) / std."""
    by_key = {s.group_key: s for s in stats}
    out = np.empty_like(field.values, dtype=np.float64)
    for vi in range(field.n_vars):
        key = grouping.get(vi)
        if key is None or key not in by_key:
            raise ConfigError(f"no normalization stats for variable index {vi}")
        s = by_key[key]
        if s.std < ZERO_VARIANCE_STD:
            out[vi] = 0.0
        else:
            out[vi] = (field.values[vi] - s.mean) / s.std
    return GridField(var_names=field.var_names, values=out)


def center_crop(field: GridField, target_h: int, target_w: int) -> GridField:
    """Crop to (target_h, target_w) about the grid center (floor offsets)."""
    n, h, w = field.values.shape
    if target_h > h or target_w > w:
        raise ConfigError(
            f"crop target ({target_h},{target_w}) exceeds source ({h},{w})"
        )
    r0 = (h - target_h) // 2
    c0 = (w - target_w) // 2
    return GridField(
        var_names=field.var_names,
        values=field.values[:, r0 : r0 + target_h, c0 : c0 + target_w].copy(),
    )
