"""Datasets: IDX (MNIST) files and deterministic synthetic tasks."""

from __future__ import annotations

import enum
import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hvlearn.errors import FormatError, MismatchError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
MNIST_VALIDATION = 10000


@dataclass(frozen=True)
class Batch:
    """Samples with integer class targets.

    ``groups`` optionally tags each sample with a subpopulation id
    (0 = majority, 1 = rare) for synthetic tasks.
    """

    inputs: np.ndarray
    targets: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.int64).reshape(-1)
        if x.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise MismatchError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        if self.groups is not None:
            g = np.asarray(self.groups, dtype=np.int64).reshape(-1)
            if g.shape != y.shape:
                raise MismatchError("groups must align with targets")
            object.__setattr__(self, "groups", g)

    @property
    def size(self) -> int:
        return int(self.targets.shape[0])

    def take(self, idx) -> "Batch":
        g = None if self.groups is None else self.groups[idx]
        return Batch(self.inputs[idx], self.targets[idx], g)


@dataclass(frozen=True)
class SplitDataset:
    train: Batch
    validation: Batch
    test: Batch
    name: str
    num_classes: int
    normalization: str
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return int(self.train.inputs.shape[1])


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise FormatError(f"{path}: bad magic number 0x{magic:08x}")
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (gzip-compressed if ``path`` ends in .gz)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise FormatError(f"IDX writer supports uint8 only, got {arr.dtype}")
    header = struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    payload = header + np.ascontiguousarray(arr).tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def load_idx(images_path, labels_path) -> Batch:
    """Load an image/label IDX pair; pixels are scaled to [0, 1] by 1/255."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise MismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Batch(x, labels.astype(np.int64))


def batch_to_idx(batch: Batch, images_path, labels_path, shape: tuple[int, int] | None = None) -> None:
    """Quantize ``batch`` to 8 bits and write it as an IDX image/label pair."""
    n, d = batch.inputs.shape
    rows, cols = shape if shape is not None else (1, d)
    if rows * cols != d:
        raise MismatchError(f"cannot reshape {d} features into {rows}x{cols}")
    pixels = np.rint(np.clip(batch.inputs, 0.0, 1.0) * 255.0).astype(np.uint8)
    write_idx(images_path, pixels.reshape(n, rows, cols))
    write_idx(labels_path, batch.targets.astype(np.uint8))


def _find(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def subset_per_class(batch: Batch, n_per_class: int, seed: int) -> Batch:
    """First ``n_per_class`` samples of each class after a seeded shuffle."""
    order = np.random.default_rng(seed).permutation(batch.size)
    picked = []
    for c in np.unique(batch.targets):
        members = order[batch.targets[order] == c]
        picked.append(members[:n_per_class])
    idx = np.sort(np.concatenate(picked))
    return batch.take(idx)


def load_mnist(directory, train_per_class: int | None = None, seed: int = 0) -> SplitDataset:
    """MNIST with the last 10000 training images held out for validation.

    ``train_per_class`` subsamples the training split (not validation or test).
    """
    directory = Path(directory)
    train = load_idx(*(_find(directory, f) for f in MNIST_FILES["train"]))
    test = load_idx(*(_find(directory, f) for f in MNIST_FILES["test"]))
    cut = train.size - MNIST_VALIDATION
    val = train.take(np.arange(cut, train.size))
    train = train.take(np.arange(cut))
    if train_per_class is not None:
        train = subset_per_class(train, train_per_class, seed)
    return SplitDataset(train, val, test, name="mnist", num_classes=10, normalization="divide-255")


class SyntheticKind(enum.Enum):
    GAUSSIAN_BLOBS = "blobs"
    RARE_SUBPOPULATION = "rare"


RARE_FRACTION = 0.05
SPLIT_FRACTIONS = (0.70, 0.15)


def _split_indices(n: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_train = int(np.floor(SPLIT_FRACTIONS[0] * n))
    n_val = int(np.floor(SPLIT_FRACTIONS[1] * n))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def _circle(k: int, radius: float, phase: float = 0.0) -> np.ndarray:
    ang = phase + 2 * np.pi * np.arange(k) / k
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def gen_synthetic(
    kind: SyntheticKind | str,
    n_per_class: int,
    seed: int,
    num_classes: int = 2,
    dim: int = 2,
    separation: float = 6.0,
) -> SplitDataset:
    """Generate a deterministic synthetic classification task.

    ``GAUSSIAN_BLOBS`` places one unit-variance cluster per class on a circle
    of radius ``separation`` (the default keeps them far apart).
    ``RARE_SUBPOPULATION`` gives every class a majority cluster plus a small
    subcluster (5% of the class) placed beyond a neighbouring class, so a
    model fit to the average loss tends to sacrifice it. Features are min-max
    scaled to [0, 1] over the whole dataset and split 70/15/15, stratified by
    subpopulation.
    """
    kind = SyntheticKind(kind)
    if n_per_class < 10:
        raise ValueError(f"n_per_class must be >= 10, got {n_per_class}")
    if dim < 2:
        raise ValueError("synthetic tasks need dim >= 2")
    rng = np.random.default_rng(seed)
    k = num_classes

    xs, ys, gs = [], [], []
    if kind is SyntheticKind.GAUSSIAN_BLOBS:
        centers = np.zeros((k, dim))
        centers[:, :2] = _circle(k, separation)
        for c in range(k):
            xs.append(centers[c] + rng.standard_normal((n_per_class, dim)))
            ys.append(np.full(n_per_class, c))
            gs.append(np.zeros(n_per_class, dtype=np.int64))
    else:
        n_rare = max(1, int(round(RARE_FRACTION * n_per_class)))
        n_major = n_per_class - n_rare
        major = np.zeros((k, dim))
        major[:, :2] = _circle(k, 1.0)
        # each rare subcluster sits beyond the next class's majority
        rare = np.zeros((k, dim))
        rare[:, :2] = np.roll(_circle(k, 2.5), -1, axis=0)
        for c in range(k):
            xs.append(major[c] + 0.4 * rng.standard_normal((n_major, dim)))
            xs.append(rare[c] + 0.2 * rng.standard_normal((n_rare, dim)))
            ys.append(np.full(n_per_class, c))
            gs.append(np.r_[np.zeros(n_major, dtype=np.int64), np.ones(n_rare, dtype=np.int64)])

    x = np.concatenate(xs)
    y = np.concatenate(ys)
    g = np.concatenate(gs)
    lo, hi = x.min(axis=0), x.max(axis=0)
    x = (x - lo) / np.where(hi > lo, hi - lo, 1.0)

    parts = ([], [], [])
    for grp in np.unique(g):
        members = np.flatnonzero(g == grp)
        for bucket, idx in zip(parts, _split_indices(members.size, rng)):
            bucket.append(members[idx])
    splits = []
    for bucket in parts:
        idx = np.concatenate(bucket)
        idx = idx[rng.permutation(idx.size)]
        splits.append(Batch(x[idx], y[idx], g[idx]))
    return SplitDataset(
        *splits,
        name=kind.value,
        num_classes=k,
        normalization="min-max",
        meta={"seed": seed, "n_per_class": n_per_class, "dim": dim, "separation": separation},
    )


def default_mnist_dir() -> str | None:
    return os.environ.get("HV_MNIST_DIR")
