"""Synthetic prototype-plus-noise classification data and non-IID partitions."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .prompts import ConfigurationError
from .tensor import stream

MAX_PROTOTYPE_DRAWS = 1000
MAX_DIRICHLET_RETRIES = 100


@dataclass(frozen=True)
class LabeledData:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "LabeledData":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledData(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class Dataset:
    train: LabeledData
    test: LabeledData
    prototypes: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]


@dataclass(frozen=True)
class Shard:
    train: LabeledData
    test: LabeledData


@dataclass(frozen=True)
class SyntheticTask:
    num_classes: int = 10
    feature_dim: int = 32
    noise_std: float = 0.3
    n_per_class: int = 200
    seed: int = 0
    train_fraction: float = 0.8
    max_abs_cosine: float = 0.5

    def __post_init__(self):
        if self.num_classes < 1 or self.feature_dim < 1 or self.n_per_class < 1:
            raise ConfigurationError("task sizes must be positive")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be non-negative")


def make_prototypes(task: SyntheticTask) -> np.ndarray:
    """Unit vectors drawn one at a time, rejecting any too aligned with earlier ones."""
    rng = stream(task.seed, "data/prototypes")
    protos: list[np.ndarray] = []
    draws = 0
    while len(protos) < task.num_classes:
        if draws >= MAX_PROTOTYPE_DRAWS:
            raise ConfigurationError(
                f"could not place {task.num_classes} prototypes in dimension {task.feature_dim} "
                f"with |cos| <= {task.max_abs_cosine} after {MAX_PROTOTYPE_DRAWS} draws; raise m or lower L"
            )
        draws += 1
        v = rng.standard_normal(task.feature_dim)
        v /= np.linalg.norm(v)
        if all(abs(v @ p) <= task.max_abs_cosine for p in protos):
            protos.append(v)
    return np.array(protos)


def generate(task: SyntheticTask) -> Dataset:
    protos = make_prototypes(task)
    rng = stream(task.seed, "data/samples")
    n_train = int(round(task.train_fraction * task.n_per_class))
    parts = {"train": ([], []), "test": ([], [])}
    for c in range(task.num_classes):
        x = protos[c] + task.noise_std * rng.standard_normal((task.n_per_class, task.feature_dim))
        parts["train"][0].append(x[:n_train])
        parts["test"][0].append(x[n_train:])
        parts["train"][1].append(np.full(n_train, c))
        parts["test"][1].append(np.full(task.n_per_class - n_train, c))
    split = {k: LabeledData(np.vstack(xs), np.concatenate(ys).astype(np.int64)) for k, (xs, ys) in parts.items()}
    return Dataset(split["train"], split["test"], protos)


def nearest_prototype_accuracy(data: LabeledData, prototypes: np.ndarray) -> float:
    d2 = ((data.x[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=-1)
    return float(np.mean(np.argmin(d2, axis=1) == data.y))


def _class_indices(data: LabeledData, c: int) -> np.ndarray:
    return np.flatnonzero(data.y == c)


def partition_pathological(dataset: Dataset, num_clients: int, classes_per_client: int, seed: int) -> list[Shard]:
    """Disjoint groups of ``classes_per_client`` classes, one group per client."""
    n_classes = dataset.num_classes
    if num_clients < 1 or classes_per_client < 1:
        raise ConfigurationError("num_clients and classes_per_client must be positive")
    if classes_per_client * num_clients > n_classes:
        raise ConfigurationError(
            f"pathological split needs k*M <= L, got {classes_per_client}*{num_clients} > {n_classes}"
        )
    order = stream(seed, "partition/pathological").permutation(n_classes)
    shards = []
    for client in range(num_clients):
        classes = np.sort(order[client * classes_per_client : (client + 1) * classes_per_client])
        tr = np.concatenate([_class_indices(dataset.train, c) for c in classes])
        te = np.concatenate([_class_indices(dataset.test, c) for c in classes])
        shards.append(Shard(dataset.train.subset(tr), dataset.test.subset(te)))
    return shards


def largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer counts summing to ``total`` that track ``total * proportions``."""
    raw = total * np.asarray(proportions, dtype=np.float64)
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        # ties go to the lower client index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(dataset: Dataset, num_clients: int, alpha: float, seed: int) -> list[Shard]:
    """Per-class Dirichlet(alpha) proportions; test split follows the same proportions."""
    if alpha <= 0:
        raise ConfigurationError("dirichlet alpha must be positive")
    if num_clients < 1:
        raise ConfigurationError("num_clients must be positive")
    for attempt in range(MAX_DIRICHLET_RETRIES):
        rng = stream(seed, "partition/dirichlet", attempt)
        train_idx = [[] for _ in range(num_clients)]
        test_idx = [[] for _ in range(num_clients)]
        for c in range(dataset.num_classes):
            props = rng.dirichlet(np.full(num_clients, alpha))
            for split, bucket in ((dataset.train, train_idx), (dataset.test, test_idx)):
                idx = _class_indices(split, c)
                idx = idx[rng.permutation(len(idx))]
                counts = largest_remainder(len(idx), props)
                bounds = np.concatenate([[0], np.cumsum(counts)])
                for client in range(num_clients):
                    bucket[client].append(idx[bounds[client] : bounds[client + 1]])
        train_idx = [np.sort(np.concatenate(b)) for b in train_idx]
        test_idx = [np.sort(np.concatenate(b)) for b in test_idx]
        if all(len(a) and len(b) for a, b in zip(train_idx, test_idx)):
            return [
                Shard(dataset.train.subset(a), dataset.test.subset(b)) for a, b in zip(train_idx, test_idx)
            ]
    raise ConfigurationError(
        f"dirichlet split left a client empty after {MAX_DIRICHLET_RETRIES} retries (alpha={alpha}, M={num_clients})"
    )


def save_csv(data: LabeledData, path) -> None:
    m = data.x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(m)])
        for label, row in zip(data.y, data.x):
            w.writerow([int(label)] + [format(v, ".17g") for v in row])


def load_csv(path) -> LabeledData:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
            raise ValueError(f"{path}: header must be label,f0,...,f{{m-1}}")
        labels, rows = [], []
        for row in reader:
            labels.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    return LabeledData(np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1), np.array(labels, dtype=np.int64))
