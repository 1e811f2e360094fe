"""Datasets, partitioning schemes and backdoor patterns.

Covers binary IDX image/label parsing, a seeded synthetic blob generator
for desk-scale experiments, class-shard and Dirichlet partitioning of a
dataset across participants, and pixel-pattern embedding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "Partition",
    "BackdoorPattern",
    "IdxParseError",
    "load_mnist_idx",
    "synth_blobs",
    "partition_shards",
    "partition_dirichlet",
    "embed_backdoor",
]

_IMAGE_MAGIC = 2051
_LABEL_MAGIC = 2049

# Distance between synthetic class centers, in units of the per-coordinate
# noise scale at spread=1.
_CENTER_NORM = 5.0


class IdxParseError(ValueError):
    """Raised for malformed IDX files."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1:
            raise ValueError("features must be (M, D), labels (M,)")
        if features.shape[0] != labels.shape[0]:
            raise ValueError("features and labels must align")
        if features.shape[0] == 0:
            raise ValueError("dataset must hold at least one sample")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels out of range")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class Partition:
    """Disjoint per-participant index lists into one dataset."""

    assignments: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        cleaned = tuple(np.asarray(a, dtype=np.int64) for a in self.assignments)
        if not cleaned:
            raise ValueError("partition must hold at least one participant")
        seen: set[int] = set()
        for part, idx in enumerate(cleaned):
            if idx.size == 0:
                raise ValueError(f"participant {part} received no samples")
            overlap = seen.intersection(idx.tolist())
            if overlap:
                raise ValueError(f"sample {min(overlap)} assigned twice")
            seen.update(idx.tolist())
        object.__setattr__(self, "assignments", cleaned)

    @property
    def num_participants(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [a.size for a in self.assignments]


def _read_header(data: bytes, path: str, expected_magic: int, dims: int) -> tuple:
    head = 4 * (1 + dims)
    if len(data) < head:
        raise IdxParseError(f"{path}: truncated header")
    magic = struct.unpack(">i", data[:4])[0]
    if magic != expected_magic:
        raise IdxParseError(f"{path}: magic mismatch, expected {expected_magic}, got {magic}")
    return struct.unpack(f">{dims}i", data[4:head])


def load_mnist_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse big-endian IDX image/label files into a flat [0, 1] dataset."""
    with open(images_path, "rb") as fh:
        image_data = fh.read()
    with open(labels_path, "rb") as fh:
        label_data = fh.read()

    count, rows, cols = _read_header(image_data, images_path, _IMAGE_MAGIC, 3)
    (label_count,) = _read_header(label_data, labels_path, _LABEL_MAGIC, 1)
    if count != label_count:
        raise IdxParseError(
            f"count mismatch: {count} images in {images_path}, "
            f"{label_count} labels in {labels_path}"
        )

    pixels = np.frombuffer(image_data, dtype=np.uint8, offset=16)
    if pixels.size != count * rows * cols:
        raise IdxParseError(f"{images_path}: truncated, expected {count * rows * cols} pixels")
    labels = np.frombuffer(label_data, dtype=np.uint8, offset=8)
    if labels.size != count:
        raise IdxParseError(f"{labels_path}: truncated, expected {count} labels")

    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    num_classes = max(2, int(labels.max()) + 1)
    return Dataset(features, labels.astype(np.int64), num_classes)


def synth_blobs(
    num_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    seed: int,
    center_seed: int | None = None,
) -> Dataset:
    """Isotropic Gaussian blobs at well-separated deterministic centers.

    Centers are orthonormal directions (from a seeded QR factorization)
    scaled to a fixed norm, so any two classes sit a constant distance apart
    regardless of ``dim``; classes beyond ``dim`` reuse directions at larger
    norms. ``spread`` is the per-coordinate noise scale. ``center_seed``
    decouples center placement from sampling, so train and test splits can
    share a geometry while drawing independent noise; by default centers
    follow ``seed``.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if dim < 1 or per_class < 1:
        raise ValueError("dim and per_class must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    center_rng = rng if center_seed is None else np.random.default_rng(center_seed)
    base = min(num_classes, dim)
    q, _ = np.linalg.qr(center_rng.standard_normal((dim, base)))
    centers = np.empty((num_classes, dim))
    for c in range(num_classes):
        centers[c] = q[:, c % base] * _CENTER_NORM * (1 + c // base)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = centers[labels] + spread * rng.standard_normal((labels.size, dim))
    return Dataset(features, labels, num_classes)


def _class_indices(ds: Dataset) -> list[np.ndarray]:
    return [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]


def partition_shards(
    ds: Dataset,
    num_participants: int,
    classes_per_participant: int,
    seed: int,
    samples_per_class: int | None = None,
) -> Partition:
    """Give each participant equal-size sample sets from a few classes.

    Class slots are spread as evenly as possible (with K participants, c
    classes each, and C classes total, every class is held by K*c/C
    participants when that divides evenly). Each participant draws the same
    number of samples from each of its classes; by default that is the
    largest globally feasible quota.
    """
    k = num_participants
    cpp = classes_per_participant
    c = ds.num_classes
    if k < 1:
        raise ValueError("need at least one participant")
    if not 1 <= cpp <= c:
        raise ValueError("classes_per_participant must lie in [1, num_classes]")
    rng = np.random.default_rng(seed)

    counts = np.full(c, (k * cpp) // c, dtype=np.int64)
    extra = (k * cpp) % c
    if extra:
        counts[rng.choice(c, size=extra, replace=False)] += 1

    # Assign each participant cpp distinct classes, always drawing from the
    # classes with the most remaining slots; that keeps every class feasible.
    remaining = counts.copy()
    class_sets = []
    for _ in range(k):
        order = np.lexsort((rng.random(c), -remaining))
        chosen = [cls for cls in order if remaining[cls] > 0][:cpp]
        if len(chosen) < cpp:
            raise ValueError("not enough distinct classes to fill every participant")
        remaining[chosen] -= 1
        class_sets.append(sorted(chosen))

    by_class = _class_indices(ds)
    holders = counts
    if samples_per_class is None:
        feasible = [
            by_class[cls].size // holders[cls] for cls in range(c) if holders[cls] > 0
        ]
        quota = min(feasible)
    else:
        quota = samples_per_class
    if quota < 1:
        raise ValueError("not enough samples to give every holder a share")
    for cls in range(c):
        if holders[cls] * quota > by_class[cls].size:
            raise ValueError(
                f"class {cls} has {by_class[cls].size} samples, "
                f"needs {holders[cls] * quota}"
            )

    for cls in range(c):
        shuffled = by_class[cls].copy()
        rng.shuffle(shuffled)
        by_class[cls] = shuffled
    assignments = []
    offsets = np.zeros(c, dtype=np.int64)
    for classes in class_sets:
        chunks = []
        for cls in classes:
            start = offsets[cls]
            chunks.append(by_class[cls][start : start + quota])
            offsets[cls] += quota
        assignments.append(np.sort(np.concatenate(chunks)))
    return Partition(tuple(assignments))


def partition_dirichlet(
    ds: Dataset, num_participants: int, alpha: float, seed: int
) -> Partition:
    """Split each class by a Dirichlet(alpha) draw over participants.

    Small alpha concentrates classes on few participants; large alpha
    approaches an even split. Participants left empty are repaired by taking
    one sample from the currently largest participant.
    """
    if num_participants < 1:
        raise ValueError("need at least one participant")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if ds.size < num_participants:
        raise ValueError("fewer samples than participants")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(num_participants)]
    for idx in _class_indices(ds):
        if idx.size == 0:
            continue
        shuffled = idx.copy()
        rng.shuffle(shuffled)
        proportions = rng.dirichlet(np.full(num_participants, alpha))
        splits = (np.cumsum(proportions)[:-1] * idx.size).astype(np.int64)
        for part, chunk in enumerate(np.split(shuffled, splits)):
            buckets[part].extend(chunk.tolist())

    sizes = np.array([len(b) for b in buckets])
    while (sizes == 0).any():
        empty = int(np.argmin(sizes))
        donor = int(np.argmax(sizes))
        buckets[empty].append(buckets[donor].pop())
        sizes = np.array([len(b) for b in buckets])
    return Partition(tuple(np.sort(np.asarray(b, dtype=np.int64)) for b in buckets))


@dataclass(frozen=True)
class BackdoorPattern:
    """Feature indices forced to fixed values, plus the label they trigger."""

    indices: np.ndarray
    values: np.ndarray
    target_label: int

    def __post_init__(self) -> None:
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if indices.ndim != 1 or values.ndim != 1 or indices.size != values.size:
            raise ValueError("indices and values must be matching vectors")
        if indices.size and len(np.unique(indices)) != indices.size:
            raise ValueError("pattern indices must be distinct")
        if indices.size and indices.min() < 0:
            raise ValueError("pattern indices must be non-negative")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @classmethod
    def pixel_block(
        cls,
        target_label: int,
        image_side: int = 28,
        block: int = 3,
        value: float = 1.0,
    ) -> "BackdoorPattern":
        """A solid block in the top-left corner of a square image."""
        if not 1 <= block <= image_side:
            raise ValueError("block must fit inside the image")
        rows, cols = np.divmod(np.arange(block * block), block)
        flat = rows * image_side + cols
        return cls(flat, np.full(flat.size, value), target_label)

    def __len__(self) -> int:
        return int(self.indices.size)

    def apply(self, features: np.ndarray) -> np.ndarray:
        """Stamp the pattern onto a row or a batch of rows (copies)."""
        features = np.asarray(features, dtype=np.float64)
        dim = features.shape[-1]
        if self.indices.size and self.indices.max() >= dim:
            raise ValueError(
                f"pattern index {int(self.indices.max())} out of range for dim {dim}"
            )
        out = features.copy()
        out[..., self.indices] = self.values
        return out


def embed_backdoor(row: np.ndarray, pattern: BackdoorPattern) -> np.ndarray:
    """Return a copy of ``row`` with the pattern stamped in."""
    return pattern.apply(row)
