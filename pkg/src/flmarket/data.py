"""Dataset ingestion (IDX, CSV, bundled digits) and Dirichlet partitioning."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import MarketError, StructuralError

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803


class PartitionError(MarketError, RuntimeError):
    pass


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file (labels 0x801 or images 0x803)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise StructuralError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_LABEL_MAGIC:
        ndim = 1
    elif magic == IDX_IMAGE_MAGIC:
        ndim = 3
    else:
        raise StructuralError(f"{path}: bad IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise StructuralError(f"{path}: header promises {count} bytes, file holds {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 1:
        magic = IDX_LABEL_MAGIC
    elif array.ndim == 3:
        magic = IDX_IMAGE_MAGIC
    else:
        raise StructuralError(f"IDX writer supports 1-d labels or 3-d images, got {array.ndim}-d")
    header = struct.pack(">I" + "I" * array.ndim, magic, *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def load_idx_dataset(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise StructuralError("expected an image file (0x803) and a label file (0x801)")
    if len(images) != len(labels):
        raise StructuralError(f"{len(images)} images but {len(labels)} labels")
    return images.reshape(len(images), -1).astype(np.float64) / 255.0, labels.astype(np.int64)


def load_csv_dataset(path, scale: float = 255.0) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``label, pixel, pixel, ...``; a non-numeric first row is skipped as a header."""
    with open(path) as fh:
        first = fh.readline()
    skip = 0 if first.split(",")[0].strip().lstrip("-").isdigit() else 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    return data[:, 1:] / scale, data[:, 0].astype(np.int64)


def load_digits_dataset() -> tuple[np.ndarray, np.ndarray]:
    """The 8x8 handwritten digits bundled with scikit-learn (1797 samples, 10 classes)."""
    from sklearn.datasets import load_digits

    d = load_digits()
    return d.data.astype(np.float64) / 16.0, d.target.astype(np.int64)


def subsample(x: np.ndarray, y: np.ndarray, max_samples: int, rng: np.random.Generator):
    if len(y) <= max_samples:
        return x, y
    idx = np.sort(rng.choice(len(y), size=max_samples, replace=False))
    return x[idx], y[idx]


@dataclass
class DirichletPartition:
    alpha: float
    client_index_sets: list[np.ndarray]

    @property
    def n_clients(self) -> int:
        return len(self.client_index_sets)

    def to_manifest(self) -> dict:
        return {"alpha": self.alpha, "clients": {str(i): s.tolist() for i, s in enumerate(self.client_index_sets)}}

    @classmethod
    def from_manifest(cls, data: dict) -> DirichletPartition:
        clients = data["clients"]
        sets = [np.array(clients[str(i)], dtype=np.int64) for i in range(len(clients))]
        return cls(float(data["alpha"]), sets)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_manifest(), fh)

    @classmethod
    def load(cls, path) -> DirichletPartition:
        with open(path) as fh:
            return cls.from_manifest(json.load(fh))


def dirichlet_partition(labels, n_clients: int, alpha: float, rng: np.random.Generator, max_attempts: int = 100) -> DirichletPartition:
    """Split sample indices class by class with Dirichlet(alpha) client shares.

    Draws that leave any client empty are redrawn, at most ``max_attempts`` times.
    """
    labels = np.asarray(labels)
    if n_clients < 2:
        raise PartitionError(f"need at least 2 clients to partition, got {n_clients}")
    if alpha <= 0:
        raise PartitionError(f"Dirichlet concentration must be positive, got {alpha}")
    classes = np.unique(labels)
    by_class = [np.flatnonzero(labels == c) for c in classes]
    for _ in range(max_attempts):
        buckets: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for idx in by_class:
            idx = rng.permutation(idx)
            share = rng.dirichlet(np.full(n_clients, alpha))
            cuts = (np.cumsum(share)[:-1] * len(idx)).astype(int)
            for client, part in enumerate(np.split(idx, cuts)):
                buckets[client].append(part)
        sets = [np.sort(np.concatenate(b)) for b in buckets]
        if all(len(s) > 0 for s in sets):
            return DirichletPartition(alpha, sets)
    raise PartitionError(
        f"every one of {max_attempts} Dirichlet draws left a client without samples; "
        "use a larger alpha or fewer clients"
    )


def train_test_split(indices: np.ndarray, test_fraction: float, rng: np.random.Generator):
    """Fixed per-client split; at least one sample on each side when possible."""
    idx = rng.permutation(indices)
    n_test = int(round(test_fraction * len(idx)))
    if len(idx) >= 2:
        n_test = min(max(n_test, 1), len(idx) - 1)
    return np.sort(idx[n_test:]), np.sort(idx[:n_test])
