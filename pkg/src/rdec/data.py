"""Dataset ingestion (IDX image files, labeled CSV) and imbalanced subsampling.

IDX reads are big-endian and magic-checked, transparently gunzipping when
the file starts with the gzip signature. Pixels are scaled to [0, 1] by
dividing by 255; that normalization is the contract the reconstruction
loss and the shipped defaults assume.
"""

from __future__ import annotations

import csv
import gzip
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

SUBSAMPLE_MODES = ("single_class", "explicit_counts", "interpolated")


class IdxFormatError(ValueError):
    """Malformed IDX file."""


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray | None  # (n,) int64 or None
    name: str = "dataset"

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> dict[int, int]:
        if self.labels is None:
            return {}
        return {int(k): int(v) for k, v in sorted(Counter(self.labels.tolist()).items())}


@dataclass
class SubsampleSpec:
    mode: str
    r_min: float = 1.0
    target_class: int | None = None
    counts: list[int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SUBSAMPLE_MODES:
            raise ValueError(f"unknown subsample mode {self.mode!r}")
        if not 0.0 < self.r_min <= 1.0:
            raise ValueError(f"r_min must be in (0, 1], got {self.r_min}")
        if self.mode == "single_class" and self.target_class is None:
            raise ValueError("single_class mode needs target_class")
        if self.mode == "explicit_counts" and not self.counts:
            raise ValueError("explicit_counts mode needs counts")


def _open_maybe_gzip(path):
    with open(path, "rb") as probe:
        head = probe.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_be32(fh, path, what: str) -> int:
    data = fh.read(4)
    if len(data) != 4:
        raise IdxFormatError(f"{path}: truncated while reading {what}")
    return struct.unpack(">i", data)[0]


def _read_idx_images(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        magic = _read_be32(fh, path, "magic")
        if magic != IMAGES_MAGIC:
            raise IdxFormatError(
                f"{path}: bad image magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IMAGES_MAGIC:08x}"
            )
        count = _read_be32(fh, path, "image count")
        rows = _read_be32(fh, path, "row count")
        cols = _read_be32(fh, path, "column count")
        raw = fh.read(count * rows * cols)
    if len(raw) != count * rows * cols:
        raise IdxFormatError(
            f"{path}: truncated pixel data, wanted {count * rows * cols} bytes, "
            f"got {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    return pixels.astype(np.float64) / 255.0


def _read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        magic = _read_be32(fh, path, "magic")
        if magic != LABELS_MAGIC:
            raise IdxFormatError(
                f"{path}: bad label magic 0x{magic:08x} at offset 0, "
                f"expected 0x{LABELS_MAGIC:08x}"
            )
        count = _read_be32(fh, path, "label count")
        raw = fh.read(count)
    if len(raw) != count:
        raise IdxFormatError(f"{path}: truncated labels, wanted {count}, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path, name: str = "idx") -> Dataset:
    """Load an IDX image/label pair as flattened rows scaled to [0, 1]."""
    features = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if features.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {features.shape[0]} images ({images_path}) vs "
            f"{labels.shape[0]} labels ({labels_path})"
        )
    return Dataset(features=features, labels=labels, name=name)


def save_idx(ds: Dataset, images_path, labels_path, side: int | None = None) -> None:
    """Write a dataset back to an IDX pair, rescaling features to bytes.

    Exact round-trip for IDX-loaded data (values k/255). Feature counts
    must form a square image unless `side` is given.
    """
    if ds.labels is None:
        raise ValueError("save_idx needs labels")
    if side is None:
        side = int(round(ds.dim**0.5))
        if side * side != ds.dim:
            raise ValueError(f"feature dim {ds.dim} is not square; pass side explicitly")
    rows, cols = side, ds.dim // side
    pixels = np.clip(np.round(ds.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGES_MAGIC, ds.n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", LABELS_MAGIC, ds.n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def load_csv(path, label_column: str | None = None, name: str = "csv") -> Dataset:
    """Load a rectangular numeric CSV with a header row.

    When label_column is given, that column becomes the integer labels and
    the remaining columns the features.
    """
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise ValueError(f"{path}: no column named {label_column!r} in header")
            label_idx = header.index(label_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: ragged row with {len(row)} cells, "
                    f"header has {len(header)}"
                )
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        values = np.array(rows, dtype=np.float64)
    except ValueError:
        for lineno, row in enumerate(rows, start=2):
            for col, cell in enumerate(row):
                try:
                    float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric cell {cell!r} in column "
                        f"{header[col]!r}"
                    ) from None
        raise
    if label_idx is None:
        return Dataset(features=values, labels=None, name=name)
    labels = values[:, label_idx].astype(np.int64)
    features = np.delete(values, label_idx, axis=1)
    return Dataset(features=features, labels=labels, name=name)


def save_csv(ds: Dataset, path, label_column: str = "label") -> None:
    """Write features (and labels, when present) as CSV; floats round-trip."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", newline="") as fh:
        writer = csv.writer(fh)
        feature_names = [f"f{i}" for i in range(ds.dim)]
        if ds.labels is not None:
            writer.writerow(feature_names + [label_column])
            for row, label in zip(ds.features, ds.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])
        else:
            writer.writerow(feature_names)
            for row in ds.features:
                writer.writerow([repr(float(v)) for v in row])


def concat(first: Dataset, second: Dataset, name: str | None = None) -> Dataset:
    if first.dim != second.dim:
        raise ValueError(f"dimension mismatch: {first.dim} vs {second.dim}")
    if (first.labels is None) != (second.labels is None):
        raise ValueError("cannot concatenate labeled with unlabeled data")
    labels = None
    if first.labels is not None:
        labels = np.concatenate([first.labels, second.labels])
    return Dataset(
        features=np.vstack([first.features, second.features]),
        labels=labels,
        name=name or first.name,
    )


def filter_classes(ds: Dataset, keep, name: str | None = None) -> Dataset:
    """Keep only rows whose label is in `keep`, preserving order."""
    if ds.labels is None:
        raise ValueError("filter_classes needs a labeled dataset")
    keep = [int(k) for k in keep]
    missing = set(keep) - set(np.unique(ds.labels).tolist())
    if missing:
        raise ValueError(f"classes {sorted(missing)} absent from {ds.name}")
    mask = np.isin(ds.labels, keep)
    return Dataset(
        features=ds.features[mask],
        labels=ds.labels[mask],
        name=name or ds.name,
    )


def _take(ds: Dataset, indices: np.ndarray, name: str) -> Dataset:
    indices = np.sort(indices)  # keep original row order
    return Dataset(
        features=ds.features[indices],
        labels=ds.labels[indices] if ds.labels is not None else None,
        name=name,
    )


def subsample(ds: Dataset, spec: SubsampleSpec) -> Dataset:
    """Produce an imbalanced variant of a labeled dataset.

    single_class: downsample one class to round(r_min * count), others intact.
    explicit_counts: sample each class without replacement to a given count.
    interpolated: keep class k of C independently with probability
        r_min + k (1 - r_min) / (C - 1), so the lowest class is retained at
        rate r_min and the highest at rate 1.
    """
    if ds.labels is None:
        raise ValueError("subsample needs a labeled dataset")
    rng = np.random.default_rng(spec.seed)
    classes = np.unique(ds.labels)
    name = f"{ds.name}-{spec.mode}"

    if spec.mode == "single_class":
        if spec.target_class not in classes:
            raise ValueError(f"class {spec.target_class} absent from {ds.name}")
        target_idx = np.flatnonzero(ds.labels == spec.target_class)
        want = int(round(spec.r_min * len(target_idx)))
        kept_target = rng.choice(target_idx, size=want, replace=False)
        others = np.flatnonzero(ds.labels != spec.target_class)
        return _take(ds, np.concatenate([kept_target, others]), name)

    if spec.mode == "explicit_counts":
        if len(spec.counts) != len(classes):
            raise ValueError(
                f"{len(spec.counts)} counts for {len(classes)} classes in {ds.name}"
            )
        picks = []
        for cls, want in zip(classes, spec.counts):
            idx = np.flatnonzero(ds.labels == cls)
            if want > len(idx):
                raise ValueError(
                    f"class {int(cls)}: requested {want} of {len(idx)} available"
                )
            picks.append(rng.choice(idx, size=want, replace=False))
        return _take(ds, np.concatenate(picks), name)

    # interpolated; rng.random() < 1.0 always holds, so rate-1 classes keep every row
    keep_mask = np.zeros(ds.n, dtype=bool)
    denom = max(len(classes) - 1, 1)
    for k, cls in enumerate(classes):
        prob = spec.r_min + k * (1.0 - spec.r_min) / denom
        idx = np.flatnonzero(ds.labels == cls)
        keep_mask[idx] = rng.random(len(idx)) < prob
    return _take(ds, np.flatnonzero(keep_mask), name)
