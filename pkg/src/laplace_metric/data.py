"""Labeled point datasets: CSV I/O and synthetic Gaussian blobs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class InvalidDatasetError(ValueError):
    pass


class DatasetParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class Dataset:
    ids: list[str]
    X: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.labels.shape[0] or len(self.ids) != self.labels.shape[0]:
            raise InvalidDatasetError("ids, features and labels disagree in length")
        if self.labels.size and self.labels.min() < 0:
            raise InvalidDatasetError("labels must be nonnegative")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset([self.ids[k] for k in idx], self.X[idx], self.labels[idx], self.n_classes)

    def check_classes(self) -> None:
        """Every class in ``0..n_classes-1`` must have at least one row."""
        n_classes = self.n_classes if self.n_classes is not None else int(self.labels.max()) + 1
        sizes = np.bincount(self.labels, minlength=n_classes)
        empty = np.flatnonzero(sizes[:n_classes] == 0)
        if empty.size:
            raise InvalidDatasetError(f"class {int(empty[0])} has no rows")


def simplex_means(n_classes: int, dim: int, scale: float) -> np.ndarray:
    """Vertices of a centered regular simplex, projected to ``dim`` dimensions.

    A centered simplex with C vertices spans C-1 dimensions, so the projection
    is exact (equal pairwise distances) whenever ``dim >= n_classes - 1``.
    """
    V = np.eye(n_classes) - 1.0 / n_classes
    _, _, vt = np.linalg.svd(V)
    coords = V @ vt[: min(dim, n_classes)].T
    out = np.zeros((n_classes, dim))
    out[:, : coords.shape[1]] = coords
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return scale * out / norms.max()


def center_direction(dim: int) -> np.ndarray:
    return np.ones(dim) / np.sqrt(dim)


def ood_direction(dim: int) -> np.ndarray:
    """OoD shift direction: opposite to the centre direction, so an offset of
    twice the centre distance mirrors the mixture through the input origin."""
    return -center_direction(dim)


def gen_blobs(n_classes: int = 3, per_class: int = 200, dim: int = 2, spread: float = 0.5,
              ood_offset: float = 6.0, seed: int = 0, scale: float = 3.0,
              test_per_class: int | None = None, n_ood: int | None = None, center: float = 0.0):
    """Gaussian class clusters plus an offset copy used as out-of-distribution data.

    ``center`` moves the whole mixture away from the input origin along
    ``center_direction``. ReLU networks are positively homogeneous far from
    the origin, so an origin-centred mixture leaves radially offset OoD
    points looking like confident in-distribution directions.

    Returns:
        (train, test, ood) datasets. OoD rows are drawn from the same mixture
        and shifted by ``ood_offset`` along a fixed unit direction; their label
        is the class they were drawn from.
    """
    rng = np.random.default_rng(seed)
    means = simplex_means(n_classes, dim, scale) + center * center_direction(dim)
    test_per_class = per_class if test_per_class is None else test_per_class
    n_ood = n_classes * test_per_class if n_ood is None else n_ood

    def draw(labels, prefix, shift):
        X = means[labels] + spread * rng.normal(size=(labels.size, dim)) + shift
        ids = [f"{prefix}{k:05d}" for k in range(labels.size)]
        return Dataset(ids, X, labels, n_classes)

    train = draw(np.repeat(np.arange(n_classes), per_class), "train", 0.0)
    test = draw(np.repeat(np.arange(n_classes), test_per_class), "test", 0.0)
    ood_labels = np.sort(rng.integers(0, n_classes, size=n_ood))
    ood = draw(ood_labels, "ood", ood_offset * ood_direction(dim))
    return train, test, ood


def dumps_dataset(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label"] + [f"f{k}" for k in range(ds.dim)])
    for ident, label, row in zip(ds.ids, ds.labels, ds.X):
        w.writerow([ident, int(label)] + [repr(float(v)) for v in row])
    return buf.getvalue()


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def load_dataset(path, n_classes: int | None = None) -> Dataset:
    """Read ``id,label,f0,...`` CSV. Errors carry the offending line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError("empty file", 1) from None
        if len(header) < 3 or header[0] != "id" or header[1] != "label":
            raise DatasetParseError("header must start with id,label and have features", 1)
        expected = [f"f{k}" for k in range(len(header) - 2)]
        if header[2:] != expected:
            raise DatasetParseError(f"feature columns must be {','.join(expected)}", 1)
        width = len(header)
        ids, labels, rows = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise DatasetParseError(f"expected {width} columns, got {len(rec)}", lineno)
            try:
                label = int(rec[1])
                feats = [float(v) for v in rec[2:]]
            except ValueError as exc:
                raise DatasetParseError(str(exc), lineno) from None
            if label < 0:
                raise DatasetParseError("negative label", lineno)
            ids.append(rec[0])
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise InvalidDatasetError(f"{path}: no data rows")
    ds = Dataset(ids, np.array(rows), np.array(labels), n_classes)
    ds.check_classes()
    return ds
