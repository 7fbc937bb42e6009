"""Federated dataset construction.

Three sources: synthetic mixtures with known latent clusters, Dirichlet
label partitions of a pooled dataset, and IDX image files.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .nn import Batch

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file."""


class IdxMagicError(IdxFormatError):
    """Magic number does not identify the expected IDX record type."""


class IdxTruncatedError(IdxFormatError):
    """File ends before the declared payload."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files declare different record counts."""


@dataclass(frozen=True)
class DeviceData:
    """One device's private train/test split, plus its latent cluster when known."""

    device_id: int
    train: Batch
    test: Batch
    true_cluster: int | None = None

    def __post_init__(self):
        if self.train.n == 0:
            raise ValueError(f"device {self.device_id}: training set must be nonempty")


@dataclass(frozen=True)
class FederatedDataset:
    devices: tuple[DeviceData, ...]
    classes: int
    input_dim: int

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        if len(self.devices) == 0:
            raise ValueError("dataset must contain at least one device")
        for d in self.devices:
            if d.train.dim != self.input_dim:
                raise ValueError(f"device {d.device_id}: input dim {d.train.dim} != {self.input_dim}")

    @property
    def m(self) -> int:
        return len(self.devices)

    @property
    def true_clusters(self) -> np.ndarray | None:
        labels = [d.true_cluster for d in self.devices]
        if any(c is None for c in labels):
            return None
        return np.asarray(labels, dtype=np.int64)


def train_test_split(data: Batch, ratio: float, seed: int) -> tuple[Batch, Batch]:
    """Shuffled split; the first part gets floor(ratio * n) samples, at least 1."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if data.n == 0:
        raise ValueError("cannot split an empty batch")
    perm = np.random.default_rng(seed).permutation(data.n)
    n_train = max(1, math.floor(ratio * data.n))
    tr, te = perm[:n_train], perm[n_train:]
    return (
        Batch(data.inputs[tr], data.labels[tr]),
        Batch(data.inputs[te], data.labels[te]),
    )


def _mixture_means(k_true: int, classes: int, input_dim: int, sep: float) -> np.ndarray:
    """Class-conditional input means per latent cluster, shape (k_true, classes, d).

    Class means sit on a ring (or a line for d=1); each cluster rotates the
    ring by a small cluster-specific angle so input distributions differ
    across clusters without destroying class separability.
    """
    means = np.zeros((k_true, classes, input_dim))
    if input_dim == 1:
        line = sep * (np.arange(classes) - (classes - 1) / 2.0)
        for g in range(k_true):
            means[g, :, 0] = line + g * sep / (4.0 * k_true)
    else:
        for g in range(k_true):
            ang = 2.0 * np.pi * np.arange(classes) / classes + g * np.pi / (6.0 * k_true)
            means[g, :, 0] = sep * np.cos(ang)
            means[g, :, 1] = sep * np.sin(ang)
    return means


def synth_mixture(
    m: int,
    k_true: int,
    per_device: int,
    input_dim: int,
    classes: int,
    seed: int,
    *,
    sep: float = 3.0,
    noise: float = 0.5,
    split: float = 0.8,
) -> FederatedDataset:
    """Synthetic non-IID federation with known cluster structure.

    Devices are assigned round-robin to k_true latent clusters. A cluster
    has its own class-conditional Gaussian input means and its own label
    permutation (a cyclic shift), so the input-to-label map itself differs
    across clusters and no single model can fit them all.
    """
    if k_true < 1 or m < k_true:
        raise ValueError(f"need m >= k_true >= 1, got m={m}, k_true={k_true}")
    if per_device < 2:
        raise ValueError(f"per_device must be >= 2, got {per_device}")
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")

    rng = np.random.default_rng(seed)
    means = _mixture_means(k_true, classes, input_dim, sep)
    devices = []
    for i in range(m):
        g = i % k_true
        latent = np.arange(per_device) % classes
        x = means[g, latent] + rng.normal(0.0, noise, (per_device, input_dim))
        y = (latent + g) % classes
        train, test = train_test_split(Batch(x, y), split, int(rng.integers(0, 2**32)))
        devices.append(DeviceData(i, train, test, true_cluster=g))
    return FederatedDataset(tuple(devices), classes, input_dim)


def dirichlet_partition(
    inputs: np.ndarray,
    labels: np.ndarray,
    m: int,
    alpha: float,
    seed: int,
    *,
    split: float = 0.8,
) -> FederatedDataset:
    """Label-skewed partition of a pooled dataset across m devices.

    For each class, device proportions are drawn from a symmetric
    Dirichlet(alpha) and the class's samples are allocated accordingly.
    Every sample lands on exactly one device; a device left empty steals
    one sample from the currently largest device.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"inputs {x.shape} and labels {y.shape} do not align")
    if x.shape[0] == 0:
        raise ValueError("cannot partition an empty dataset")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if x.shape[0] < m:
        raise ValueError(f"need at least {m} samples for {m} devices, got {x.shape[0]}")
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")

    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in range(m)]
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        proportions = rng.dirichlet(np.full(m, alpha))
        bounds = np.floor(np.cumsum(proportions) * idx.shape[0]).astype(int)
        bounds[-1] = idx.shape[0]
        start = 0
        for dev, end in enumerate(bounds):
            parts[dev].extend(idx[start:end].tolist())
            start = end

    for dev in range(m):
        if not parts[dev]:
            donor = max(range(m), key=lambda j: len(parts[j]))
            parts[dev].append(parts[donor].pop())

    classes = int(y.max()) + 1
    devices = []
    for dev in range(m):
        sel = np.asarray(parts[dev], dtype=np.int64)
        train, test = train_test_split(
            Batch(x[sel], y[sel]), split, int(rng.integers(0, 2**32))
        )
        devices.append(DeviceData(dev, train, test))
    return FederatedDataset(tuple(devices), classes, x.shape[1])


def _read_exact(fh, count: int, path) -> bytes:
    data = fh.read(count)
    if len(data) < count:
        raise IdxTruncatedError(f"{path}: expected {count} more bytes, got {len(data)}")
    return data


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label file pair (big-endian, MNIST layout).

    Returns images flattened row-major and scaled to [0, 1], and integer
    labels.
    """
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(
                f"{images_path}: magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
            )
        pixels = _read_exact(fh, count * rows * cols, images_path)
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
            )
        raw_labels = _read_exact(fh, label_count, labels_path)
    if label_count != count:
        raise IdxCountMismatchError(
            f"{images_path} holds {count} images but {labels_path} holds {label_count} labels"
        )
    images = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64)
    images = images.reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return images, labels
