"""Synthetic feature clusters and feature-file ingestion.

Stands in for a frozen video backbone: features are Gaussian blobs around
uniformly drawn class centers, with an out-of-distribution set whose
centers are pushed to a minimum distance from every in-distribution
center. Two on-disk formats are supported: a CSV with a header row and a
compact binary format (BFV) storing float32 features.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, GenerationError, ParseError
from .fsio import atomic_write_bytes, atomic_write_text

OOD_LABEL = -1
BFV_MAGIC = b"BFV1"


@dataclass
class LabeledFeatureSet:
    """N x F features with integer labels; OOD rows use label -1."""

    features: np.ndarray
    labels: np.ndarray
    is_ood: np.ndarray
    class_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.is_ood = np.asarray(self.is_ood, dtype=bool)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (n,) or self.is_ood.shape != (n,):
            raise DataError(
                f"inconsistent lengths: {self.features.shape[0]} features,"
                f" {self.labels.shape[0]} labels, {self.is_ood.shape[0]} flags"
            )
        if not np.array_equal(self.is_ood, self.labels == OOD_LABEL):
            raise DataError("is_ood flags must match the -1 label sentinel")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def num_classes(self) -> int:
        in_dist = self.labels[~self.is_ood]
        return int(in_dist.max()) + 1 if in_dist.size else 0

    def subset(self, idx: np.ndarray) -> "LabeledFeatureSet":
        return LabeledFeatureSet(
            self.features[idx], self.labels[idx], self.is_ood[idx], self.class_names
        )


@dataclass(frozen=True)
class SynthSpec:
    # center_scale 1.3 leaves mild class overlap: a trained head lands at
    # roughly 96-98% val accuracy, so false predictions exist for the
    # confidence/uncertainty splits while OOD stays well separated
    k_in: int = 8
    k_out: int = 8
    feature_dim: int = 64
    per_class: int = 250
    center_scale: float = 1.3
    within_std: float = 1.5
    center_seed: int = 11
    noise_seed: int = 12
    ood_displacement: float = 12.0

    def __post_init__(self):
        counts = (self.k_in, self.k_out, self.feature_dim, self.per_class)
        if any(int(c) <= 0 for c in counts):
            raise ConfigError(f"all counts must be positive, got {counts}")
        if not self.within_std > 0:
            raise ConfigError(f"within-class std must be positive, got {self.within_std}")


_MAX_CENTER_TRIES = 10**5


_MAX_PUSHES = 100


def _ood_centers(
    rng: np.random.Generator, spec: SynthSpec, in_centers: np.ndarray
) -> np.ndarray:
    """Uniform draws, radially displaced away from whichever in-dist center
    is nearest, repeated until every gap is at least `ood_displacement`.
    Candidates that fail to converge are rejected and redrawn."""
    d = spec.ood_displacement
    centers = []
    tries = 0
    while len(centers) < spec.k_out:
        cand = rng.uniform(-spec.center_scale, spec.center_scale, spec.feature_dim)
        for _ in range(_MAX_PUSHES):
            tries += 1
            if tries > _MAX_CENTER_TRIES:
                raise GenerationError(
                    f"could not place OOD centers at distance >= {d} after"
                    f" {_MAX_CENTER_TRIES} tries; reduce ood_displacement or"
                    " increase center_scale"
                )
            gaps = np.linalg.norm(in_centers - cand, axis=1)
            nearest = int(np.argmin(gaps))
            if gaps[nearest] >= d - 1e-9:
                centers.append(cand)
                break
            offset = cand - in_centers[nearest]
            norm = np.linalg.norm(offset)
            if norm == 0.0:
                direction = np.zeros(spec.feature_dim)
                direction[0] = 1.0
            else:
                direction = offset / norm
            cand = in_centers[nearest] + direction * d
    return np.asarray(centers)


def generate(spec: SynthSpec) -> tuple[LabeledFeatureSet, LabeledFeatureSet, LabeledFeatureSet]:
    """Build (train, val, ood) sets, deterministic in the spec's two seeds.

    Train/val is an 80/20 split stratified by class; OOD rows carry the -1
    sentinel label.
    """
    center_rng = np.random.default_rng(spec.center_seed)
    in_centers = center_rng.uniform(
        -spec.center_scale, spec.center_scale, (spec.k_in, spec.feature_dim)
    )
    out_centers = _ood_centers(center_rng, spec, in_centers)

    noise_rng = np.random.default_rng(spec.noise_seed)
    train_x, train_y, val_x, val_y = [], [], [], []
    n_train = int(round(spec.per_class * 0.8))
    for k in range(spec.k_in):
        pts = in_centers[k] + spec.within_std * noise_rng.standard_normal(
            (spec.per_class, spec.feature_dim)
        )
        train_x.append(pts[:n_train])
        train_y.append(np.full(n_train, k))
        val_x.append(pts[n_train:])
        val_y.append(np.full(spec.per_class - n_train, k))

    ood_x = []
    for k in range(spec.k_out):
        ood_x.append(
            out_centers[k]
            + spec.within_std
            * noise_rng.standard_normal((spec.per_class, spec.feature_dim))
        )

    def pack(xs, ys, ood=False):
        x = np.concatenate(xs)
        if ood:
            y = np.full(x.shape[0], OOD_LABEL)
        else:
            y = np.concatenate(ys)
        return LabeledFeatureSet(x, y, y == OOD_LABEL)

    return (
        pack(train_x, train_y),
        pack(val_x, val_y),
        pack(ood_x, None, ood=True),
    )


def min_center_gap(spec: SynthSpec) -> float:
    """Smallest distance between any OOD center and any in-dist center."""
    center_rng = np.random.default_rng(spec.center_seed)
    in_centers = center_rng.uniform(
        -spec.center_scale, spec.center_scale, (spec.k_in, spec.feature_dim)
    )
    out_centers = _ood_centers(center_rng, spec, in_centers)
    gaps = np.linalg.norm(
        in_centers[:, None, :] - out_centers[None, :, :], axis=2
    )
    return float(gaps.min())


# ---- batching ----------------------------------------------------------------


def batches(
    data: LabeledFeatureSet, batch_size: int, seed: int, shuffle: bool
) -> list[LabeledFeatureSet]:
    """Partition into batches; the last one may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = (
        np.random.default_rng(seed).permutation(data.n)
        if shuffle
        else np.arange(data.n)
    )
    return [
        data.subset(order[i : i + batch_size]) for i in range(0, data.n, batch_size)
    ]


# ---- CSV format ----------------------------------------------------------------


def save_csv(data: LabeledFeatureSet, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{i}" for i in range(data.feature_dim)] + ["label", "is_ood"])
    for row, label, ood in zip(data.features, data.labels, data.is_ood):
        writer.writerow([repr(float(v)) for v in row] + [int(label), int(ood)])
    atomic_write_text(path, buf.getvalue())


def _load_csv(path) -> LabeledFeatureSet:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 3 or header[-2:] != ["label", "is_ood"]:
            raise ParseError(f"{path}: line 1: expected header f0..fN,label,is_ood")
        f_dim = len(header) - 2
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                feats.append([float(v) for v in row[:f_dim]])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            try:
                labels.append(int(row[f_dim]))
            except ValueError:
                raise ParseError(
                    f"{path}: line {lineno}: non-integer label {row[f_dim]!r}"
                ) from None
    if not feats:
        raise ParseError(f"{path}: no data rows")
    labels = np.asarray(labels)
    return LabeledFeatureSet(np.asarray(feats), labels, labels == OOD_LABEL)


# ---- BFV binary format -------------------------------------------------------


def save_bfv(data: LabeledFeatureSet, path) -> None:
    """Magic 'BFV1', little-endian u32 N and F, N*F float32, N int32 labels."""
    out = bytearray()
    out += BFV_MAGIC
    out += struct.pack("<II", data.n, data.feature_dim)
    out += data.features.astype("<f4").tobytes(order="C")
    out += data.labels.astype("<i4").tobytes()
    atomic_write_bytes(path, bytes(out))


def _load_bfv(path) -> LabeledFeatureSet:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise ParseError(f"{path}: truncated at byte {len(raw)}: missing header")
    if raw[:4] != BFV_MAGIC:
        raise ParseError(f"{path}: byte 0: bad magic {raw[:4]!r}, expected {BFV_MAGIC!r}")
    n, f = struct.unpack("<II", raw[4:12])
    feat_bytes = n * f * 4
    expected = 12 + feat_bytes + n * 4
    if len(raw) != expected:
        raise ParseError(
            f"{path}: byte {len(raw)}: expected {expected} bytes for N={n}, F={f}"
        )
    feats = np.frombuffer(raw, dtype="<f4", count=n * f, offset=12).reshape(n, f)
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=12 + feat_bytes)
    labels = labels.astype(np.int64)
    return LabeledFeatureSet(feats.astype(np.float64), labels, labels == OOD_LABEL)


def load_features(path, fmt: str) -> LabeledFeatureSet:
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "bfv":
        return _load_bfv(path)
    raise ConfigError(f"unknown format {fmt!r}; expected 'csv' or 'bfv'")


def save_features(data: LabeledFeatureSet, path, fmt: str) -> None:
    if fmt == "csv":
        save_csv(data, path)
    elif fmt == "bfv":
        save_bfv(data, path)
    else:
        raise ConfigError(f"unknown format {fmt!r}; expected 'csv' or 'bfv'")
