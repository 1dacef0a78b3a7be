"""Datasets, unlearning splits and i.i.d. Hessian sample streams."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from certunlearn.errors import FormatError, InvalidArgument
from certunlearn.model import Batch
from certunlearn.numerics import SeededRng, fnv1a_64

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    source: str = "memory"
    num_classes: int | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.labels)
        if X.shape[0] != y.shape[0]:
            raise InvalidArgument("features and labels disagree on the sample count")
        if X.shape[0] < 2:
            raise InvalidArgument("a dataset needs at least two samples")
        if np.issubdtype(y.dtype, np.integer):
            y = y.astype(np.int64)
            k = int(y.max()) + 1 if self.num_classes is None else self.num_classes
            if y.min() < 0 or y.max() >= k:
                raise InvalidArgument("labels must lie in [0, num_classes)")
            object.__setattr__(self, "num_classes", k)
        else:
            y = y.astype(np.float64)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @cached_property
    def content_hash(self) -> int:
        """64-bit FNV-1a over shape, features (f64 LE) and labels (LE)."""
        X, y = self.features, self.labels
        head = struct.pack("<QQ", *X.shape)
        label_dtype = "<i8" if np.issubdtype(y.dtype, np.integer) else "<f8"
        body = X.astype("<f8").tobytes() + y.astype(label_dtype).tobytes()
        return fnv1a_64(head + body)

    @property
    def hash_hex(self) -> str:
        return f"{self.content_hash:016x}"

    def batch(self, indices=None) -> Batch:
        if indices is None:
            return Batch(self.features, self.labels, np.arange(self.n))
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(self.features[idx], self.labels[idx], idx)

    def subset(self, indices, source: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            source or f"{self.source}[subset]",
            self.num_classes,
        )


@dataclass(frozen=True)
class SplitPlan:
    """Partition of ``range(n)`` into unlearned and retained indices."""

    unlearn_indices: np.ndarray
    retained_indices: np.ndarray
    seed: int | None = None
    n: int = field(default=0)

    @classmethod
    def from_unlearn(cls, n: int, unlearn, seed=None) -> "SplitPlan":
        u = np.unique(np.asarray(unlearn, dtype=np.int64))
        if len(u) != len(np.asarray(unlearn).ravel()):
            raise InvalidArgument("unlearn indices must be unique")
        if len(u) < 1 or len(u) >= n:
            raise InvalidArgument(f"need 1 <= n_u < n, got n_u={len(u)}, n={n}")
        if u[0] < 0 or u[-1] >= n:
            raise InvalidArgument("unlearn indices out of range")
        mask = np.ones(n, dtype=bool)
        mask[u] = False
        return cls(u, np.flatnonzero(mask), seed, n)

    @property
    def n_u(self) -> int:
        return len(self.unlearn_indices)

    @property
    def split_hash(self) -> str:
        data = struct.pack("<Q", self.n) + self.unlearn_indices.astype("<i8").tobytes()
        return f"{fnv1a_64(data):016x}"


def make_split(dataset: Dataset, n_u: int, seed: int) -> SplitPlan:
    """Uniformly random unlearned set of size ``n_u`` (without replacement)."""
    n = len(dataset)
    if not 1 <= n_u < n:
        raise InvalidArgument(f"need 1 <= n_u < n, got n_u={n_u}, n={n}")
    gen = SeededRng(seed, "split").generator()
    chosen = gen.choice(n, size=n_u, replace=False)
    return SplitPlan.from_unlearn(n, chosen, seed)


def hessian_batch_stream(
    dataset: Dataset,
    split: SplitPlan,
    batch_size: int | None,
    s: int,
    rng: SeededRng,
) -> list[Batch]:
    """``s`` i.i.d. minibatches of the retained set.

    Batches are drawn independently of each other (so an index may recur across
    batches); within a batch rows are distinct. ``batch_size=None`` or
    ``batch_size >= |D_r|`` yields the full retained set every time.
    """
    retained = split.retained_indices
    if len(retained) == 0:
        raise InvalidArgument("retained set is empty")
    if s < 0:
        raise InvalidArgument(f"s must be non-negative, got {s}")
    if batch_size is None or batch_size >= len(retained):
        full = dataset.batch(retained)
        return [full] * s
    if batch_size < 1:
        raise InvalidArgument(f"batch_size must be >= 1, got {batch_size}")
    gen = rng.generator()
    out = []
    for _ in range(s):
        idx = np.sort(gen.choice(retained, size=batch_size, replace=False))
        out.append(dataset.batch(idx))
    return out


def synth_blobs(
    n: int,
    dim: int,
    classes: int,
    separation: float,
    seed: int,
    noise: float = 1.0,
) -> Dataset:
    """Gaussian clusters with balanced labels.

    Class centres are the vertices of a centred regular simplex with edge
    length ``separation`` when ``dim >= classes``; otherwise they are evenly
    spaced on a circle of radius ``separation / 2`` in the first two
    coordinates.
    """
    if dim < 1:
        raise InvalidArgument(f"dim must be >= 1, got {dim}")
    if not n >= classes >= 2:
        raise InvalidArgument(f"need n >= classes >= 2, got n={n}, classes={classes}")
    gen = SeededRng(seed, "blobs").generator()
    if dim >= classes:
        centres = np.zeros((classes, dim))
        centres[:, :classes] = np.eye(classes) - 1.0 / classes
        centres *= separation / np.sqrt(2.0)  # edge length = separation
    elif dim >= 2:
        angles = 2 * np.pi * np.arange(classes) / classes
        centres = np.zeros((classes, dim))
        centres[:, 0] = np.cos(angles) * separation / 2
        centres[:, 1] = np.sin(angles) * separation / 2
    else:
        centres = (np.arange(classes) - (classes - 1) / 2).reshape(-1, 1) * separation
    labels = gen.permutation(np.arange(n) % classes)
    X = centres[labels] + noise * gen.standard_normal((n, dim))
    return Dataset(X, labels, f"blobs(n={n},dim={dim},k={classes},sep={separation},seed={seed})", classes)


def train_test_split(dataset: Dataset, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    if not 2 <= n_test <= len(dataset) - 2:
        raise InvalidArgument("n_test leaves too few samples on one side")
    perm = SeededRng(seed, "test-split").generator().permutation(len(dataset))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return dataset.subset(train, f"{dataset.source}[train]"), dataset.subset(test, f"{dataset.source}[test]")


# -- file formats ------------------------------------------------------------

def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    shape = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    body = raw[4 + 4 * ndim :]
    if len(body) != int(np.prod(shape)):
        raise FormatError(f"{path}: payload length {len(body)} does not match shape {shape}")
    return np.frombuffer(body, dtype=np.uint8).reshape(shape)


def load_mnist_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Read MNIST-style IDX files; pixels are scaled to [0, 1]."""
    if limit is not None and limit < 1:
        raise InvalidArgument(f"limit must be positive, got {limit}")
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError("image and label files disagree on the sample count")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), f"idx:{Path(images_path).name}", 10)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">I3I", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    )


def load_csv(path, label_column: str, num_classes: int | None = None) -> Dataset:
    """Numeric CSV with a header row; every non-label column becomes a feature."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if label_column not in header:
        raise FormatError(f"{path}: missing label column {label_column!r}")
    li = header.index(label_column)
    feats, labels = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            values = [float(c) for c in row]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
        labels.append(values[li])
        feats.append(values[:li] + values[li + 1 :])
    if len(body) < 2:
        raise FormatError(f"{path}: need at least two data rows")
    y = np.asarray(labels)
    if np.all(y == np.round(y)):
        y = y.astype(np.int64)
    X = np.asarray(feats, dtype=np.float64).reshape(len(body), len(header) - 1)
    return Dataset(X, y, f"csv:{Path(path).name}", num_classes)


def write_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    width = dataset.features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(width)] + [label_column])
        for x, y in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in x] + [repr(y.item())])
