"""Datasets: file ingestion, synthetic generators, splits and artifact files."""

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .pursuit import CodeMatrix

BINARY_MAGIC = b"BMPF"
FORMATS = ("text", "f32")


@dataclass
class Dataset:
    features: np.ndarray
    labels: list
    split: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataFormatError("features must be an (n, d) matrix")
        if not np.all(np.isfinite(self.features)):
            raise DataFormatError("features contain non-finite values")
        self.labels = [frozenset(int(v) for v in s) for s in self.labels]
        if self.labels and len(self.labels) != self.n:
            raise DataFormatError(
                f"{len(self.labels)} label lines for {self.n} feature rows"
            )
        self.split = {k: np.asarray(v, dtype=np.int64) for k, v in self.split.items()}
        check_split(self.split, self.n)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def class_ids(self, idx=None):
        """Single class id per instance; fails on multi-label or unlabeled rows."""
        labels = self.labels if idx is None else [self.labels[i] for i in idx]
        out = []
        for i, s in enumerate(labels):
            if len(s) != 1:
                raise DataFormatError(f"instance {i} does not carry exactly one label")
            out.append(next(iter(s)))
        return np.array(out, dtype=np.int64)

    def subset(self, name):
        idx = self.split[name]
        return self.features[idx], [self.labels[i] for i in idx] if self.labels else []


def check_split(split, n):
    seen = set()
    for name, idx in split.items():
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DataFormatError(f"split {name!r} has indices outside [0, {n})")
        s = set(idx.tolist())
        if len(s) != idx.size:
            raise DataFormatError(f"split {name!r} repeats indices")
        if seen & s:
            raise DataFormatError(f"split {name!r} overlaps another split")
        seen |= s


def read_text_matrix(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if rows and len(row) != len(rows[0]):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(rows[0])} values, got {len(row)}"
                )
            if not all(np.isfinite(row)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def read_f32_matrix(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != BINARY_MAGIC:
        raise DataFormatError(f"{path}: missing BMPF header")
    n, d = struct.unpack("<II", raw[4:12])
    expected = 16 + 4 * n * d
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: header says {n}x{d} ({expected} bytes), file has {len(raw)} bytes"
        )
    x = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, d).astype(np.float64)
    bad = np.argwhere(~np.isfinite(x))
    if bad.size:
        i, j = bad[0]
        raise DataFormatError(f"{path}: non-finite value at byte offset {16 + 4 * (i * d + j)}")
    return x


def read_labels(path):
    """One line per instance of space-separated integers; blank means unlabeled."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                vals = [int(v) for v in line.split()]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if any(v < 0 for v in vals):
                raise DataFormatError(f"{path}:{lineno}: negative label")
            out.append(frozenset(vals))
    return out


def load(features_path, labels_path=None, fmt="text"):
    if fmt == "text":
        x = read_text_matrix(features_path)
    elif fmt == "f32":
        x = read_f32_matrix(features_path)
    else:
        raise ValueError(f"format must be one of {FORMATS}")
    labels = read_labels(labels_path) if labels_path else []
    if labels and len(labels) != x.shape[0]:
        raise DataFormatError(
            f"{labels_path}: {len(labels)} label lines for {x.shape[0]} feature rows"
        )
    return Dataset(x, labels)


def save(dataset, features_path, labels_path=None, fmt="text"):
    x = dataset.features
    if fmt == "text":
        with open(features_path, "w") as fh:
            for row in x:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif fmt == "f32":
        with open(features_path, "wb") as fh:
            fh.write(BINARY_MAGIC + struct.pack("<III", x.shape[0], x.shape[1], 0))
            fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
    else:
        raise ValueError(f"format must be one of {FORMATS}")
    if labels_path is not None:
        with open(labels_path, "w") as fh:
            for s in dataset.labels:
                fh.write(" ".join(str(v) for v in sorted(s)) + "\n")


def synth_multiclass(n_classes, per_class, dim, sep=4.0, seed=0):
    """Unit-variance Gaussian blobs around random unit-sphere centers times ``sep``.

    Instance order is shuffled so class membership is not contiguous.
    """
    if n_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= sep
    y = rng.permutation(np.repeat(np.arange(n_classes), per_class))
    x = centers[y] + rng.standard_normal((y.size, dim))
    return Dataset(x, [[c] for c in y])


def synth_multilabel(n, n_labels, dim, max_labels=3, sep=4.0, seed=0):
    """Each instance draws 1..max_labels labels; features sum the label centers plus noise."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_labels, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= sep
    labels, rows = [], []
    for _ in range(n):
        k = int(rng.integers(1, max_labels + 1))
        s = sorted(rng.choice(n_labels, size=k, replace=False).tolist())
        labels.append(s)
        rows.append(centers[s].sum(axis=0) + rng.standard_normal(dim))
    return Dataset(np.array(rows), labels)


def split(dataset, train_per_class, query_per_class, seed=0):
    """Per-class sampling without replacement into train/query; the rest is db."""
    classes = dataset.class_ids()
    rng = np.random.default_rng(seed)
    train, query, db = [], [], []
    for c in np.unique(classes):
        members = np.flatnonzero(classes == c)
        if train_per_class + query_per_class > members.size:
            raise ValueError(
                f"class {c} has {members.size} instances, "
                f"cannot take {train_per_class} + {query_per_class}"
            )
        perm = rng.permutation(members)
        train += perm[:train_per_class].tolist()
        query += perm[train_per_class:train_per_class + query_per_class].tolist()
        db += perm[train_per_class + query_per_class:].tolist()
    parts = {"train": sorted(train), "query": sorted(query), "db": sorted(db)}
    return Dataset(dataset.features, dataset.labels, parts)


def split_random(dataset, n_train, n_query, seed=0):
    """Label-agnostic split: random train/query draws, the rest is db."""
    if n_train + n_query > dataset.n:
        raise ValueError("split sizes exceed the dataset")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    parts = {"train": np.sort(perm[:n_train]),
             "query": np.sort(perm[n_train:n_train + n_query]),
             "db": np.sort(perm[n_train + n_query:])}
    return Dataset(dataset.features, dataset.labels, parts)


def item_key(item):
    if isinstance(item, tuple):
        return "labels:" + ";".join(str(v) for v in item)
    return str(item)


def parse_item_key(key):
    if key.startswith("labels:"):
        return tuple(int(v) for v in key[len("labels:"):].split(";") if v)
    return int(key)


def save_codes(codes, items, path):
    """Code matrix as CSV: ``alpha`` row first, then one row per item."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item"] + [f"bit_{k}" for k in range(1, codes.bits + 1)])
        w.writerow(["alpha"] + [repr(float(a)) for a in codes.alpha])
        for key, row in zip(items, codes.v):
            w.writerow([item_key(key)] + [int(b) for b in row])


def load_codes(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[1][0] != "alpha":
        raise DataFormatError(f"{path}: expected header and alpha row")
    alpha = np.array([float(v) for v in rows[1][1:]])
    items = [parse_item_key(r[0]) for r in rows[2:]]
    v = np.array([[int(b) for b in r[1:]] for r in rows[2:]], dtype=np.int8)
    return CodeMatrix(v.reshape(len(items), alpha.size), alpha), items
