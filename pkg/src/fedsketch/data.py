"""Datasets and client partitioning.

The built-in task is a Gaussian mixture classifier: class centers drawn once,
examples scattered around them. CSV files with a header row and rows of
label,feat1,...,featD are accepted as a drop-in replacement.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorops import DTYPE


@dataclass
class Dataset:
    x: np.ndarray  # n x dim, float32
    y: np.ndarray  # n, int64 labels
    classes: int

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("feature/label count mismatch")

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass
class ClientDataset:
    client_id: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) == 0:
            raise ValueError(f"client {self.client_id} received no examples")

    def __len__(self) -> int:
        return self.x.shape[0]


def make_synthetic(
    classes: int,
    dim: int,
    n_train: int,
    n_test: int,
    rng: np.random.Generator,
    class_spread: float = 1.0,
    noise: float = 1.0,
) -> tuple[Dataset, Dataset]:
    """Gaussian-mixture classification data with a held-out test split."""
    centers = rng.normal(0.0, class_spread, size=(classes, dim))
    n = n_train + n_test
    y = rng.integers(0, classes, size=n)
    x = (centers[y] + rng.normal(0.0, noise, size=(n, dim))).astype(DTYPE)
    y = y.astype(np.int64)
    return (
        Dataset(x[:n_train], y[:n_train], classes),
        Dataset(x[n_train:], y[n_train:], classes),
    )


def load_csv(path: str | Path) -> Dataset:
    """Read label,feat1,...,featD rows below a single header line."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    if raw.shape[1] < 2:
        raise ValueError(f"{path}: need a label column plus at least one feature")
    y = raw[:, 0].astype(np.int64)
    if np.any(raw[:, 0] != y):
        raise ValueError(f"{path}: labels must be integers")
    if y.min() < 0:
        raise ValueError(f"{path}: labels must be non-negative")
    return Dataset(raw[:, 1:].astype(DTYPE), y, classes=int(y.max()) + 1)


def split_train_test(ds: Dataset, test_fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    order = rng.permutation(len(ds))
    n_test = max(1, int(round(test_fraction * len(ds))))
    test, train = order[:n_test], order[n_test:]
    if len(train) == 0:
        raise ValueError("test_fraction leaves no training data")
    return (
        Dataset(ds.x[train], ds.y[train], ds.classes),
        Dataset(ds.x[test], ds.y[test], ds.classes),
    )


def partition_iid(ds: Dataset, n_clients: int, rng: np.random.Generator) -> list[ClientDataset]:
    """Random disjoint split with sizes differing by at most one."""
    if n_clients < 1:
        raise ValueError("need at least one client")
    if n_clients > len(ds):
        raise ValueError(f"cannot split {len(ds)} examples across {n_clients} clients")
    order = rng.permutation(len(ds))
    return [
        ClientDataset(i, ds.x[idx], ds.y[idx])
        for i, idx in enumerate(np.array_split(order, n_clients))
    ]


def partition_by_label(
    ds: Dataset, n_clients: int, labels_per_client: int, rng: np.random.Generator
) -> list[ClientDataset]:
    """Skewed split: each client holds examples of at most `labels_per_client` labels."""
    if labels_per_client < 1:
        raise ValueError("labels_per_client must be >= 1")
    labels = np.unique(ds.y)
    if n_clients * labels_per_client < labels.size:
        raise ValueError(
            f"label budget infeasible: {n_clients} clients x {labels_per_client} labels "
            f"cannot cover {labels.size} labels"
        )
    # deal labels to client slots round-robin so every label has a holder
    shuffled = rng.permutation(labels)
    slots = [shuffled[i % labels.size] for i in range(n_clients * labels_per_client)]
    holders: dict[int, list[int]] = {int(l): [] for l in labels}
    for slot, label in enumerate(slots):
        client = slot // labels_per_client
        if client not in holders[int(label)]:
            holders[int(label)].append(client)

    assigned: dict[int, list[np.ndarray]] = {c: [] for c in range(n_clients)}
    for label, clients in holders.items():
        idx = rng.permutation(np.flatnonzero(ds.y == label))
        for client, chunk in zip(clients, np.array_split(idx, len(clients))):
            if chunk.size:
                assigned[client].append(chunk)

    out = []
    for c in range(n_clients):
        if not assigned[c]:
            raise ValueError(f"label budget infeasible: client {c} received no examples")
        idx = np.concatenate(assigned[c])
        out.append(ClientDataset(c, ds.x[idx], ds.y[idx]))
    return out
