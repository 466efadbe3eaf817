"""Shared dataset container and CSV round-trip helpers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")


def assign_splits(n: int, fractions: tuple[float, float, float]) -> np.ndarray:
    """Ordered train/val/test labels for n rows; test takes the remainder."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    labels = np.empty(n, dtype=object)
    labels[:n_train] = "train"
    labels[n_train : n_train + n_val] = "val"
    labels[n_train + n_val :] = "test"
    return labels


@dataclass
class Dataset:
    """Feature matrix, target matrix, and a per-row split label."""

    x: np.ndarray  # (n, d) inputs
    y: np.ndarray  # (n, m) targets
    split: np.ndarray  # (n,) labels from SPLITS

    def __post_init__(self) -> None:
        if self.y.ndim == 1:
            self.y = self.y.reshape(-1, 1)
        n = self.x.shape[0]
        if self.y.shape[0] != n or self.split.shape[0] != n:
            raise ValueError("x, y, and split must have the same number of rows")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        mask = self.split == split
        return self.x[mask], self.y[mask]

    def counts(self) -> dict[str, int]:
        return {s: int(np.sum(self.split == s)) for s in SPLITS}


def write_dataset_csv(path: str | Path, dataset: Dataset, columns: list[str]) -> None:
    """Write x columns, y columns, then the split column, with a header row.

    Floats are rendered with %.17g so a read-back reproduces the exact values.
    """
    n_cols = dataset.x.shape[1] + dataset.y.shape[1] + 1
    if len(columns) != n_cols:
        raise ValueError(f"expected {n_cols} column names, got {len(columns)}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for xi, yi, si in zip(dataset.x, dataset.y, dataset.split):
            writer.writerow([f"{v:.17g}" for v in xi] + [f"{v:.17g}" for v in yi] + [si])


def read_dataset_csv(path: str | Path, n_targets: int) -> Dataset:
    """Inverse of write_dataset_csv given the number of target columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    d = len(header) - n_targets - 1
    if d < 1:
        raise ValueError(f"{path}: header has too few columns for {n_targets} targets")
    x = np.array([[float(v) for v in row[:d]] for row in rows])
    y = np.array([[float(v) for v in row[d : d + n_targets]] for row in rows])
    split = np.array([row[-1] for row in rows], dtype=object)
    return Dataset(x=x, y=y, split=split)
