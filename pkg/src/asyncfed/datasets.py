"""Synthetic datasets, splitting across workers, and CSV import/export."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeMismatchError, SplitError

SPLIT_MODES = ("overlap_iid", "disjoint_iid", "disjoint_noniid")

# Concentration of the symmetric Dirichlet that skews per-part label
# proportions in the disjoint_noniid mode.
NONIID_DIRICHLET_ALPHA = 0.3


@dataclass
class Dataset:
    """Feature matrix, integer labels, and a scalar quality-of-data rating.

    ``source_rows`` records which rows of a parent dataset this one was
    split from; it is None for datasets that were not produced by
    ``split_dataset``.
    """

    features: np.ndarray
    labels: np.ndarray
    qod: float = 1.0
    source_rows: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeMismatchError(
                f"features must be 2-D, got shape {self.features.shape}"
            )
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeMismatchError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if not 0.0 < self.qod <= 1.0:
            raise ParameterError(f"qod must be in (0, 1], got {self.qod}")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def subset(self, rows: np.ndarray, *, qod: float | None = None) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        parent_rows = self.source_rows if self.source_rows is not None else np.arange(self.size)
        return Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            qod=self.qod if qod is None else qod,
            source_rows=parent_rows[rows],
        )


def make_synthetic_dataset(
    n: int, dims: int, classes: int, separation: float, seed: int
) -> Dataset:
    """Gaussian class clusters with unit noise and means ``separation`` apart.

    Class means sit on a circle in the first two feature dimensions (a
    line when ``dims == 1``), scaled by ``separation``, so separability
    is controlled deterministically rather than by luck of the draw.
    Labels are balanced within one sample of each other.
    """
    if dims <= 0 or classes <= 0:
        raise ParameterError(f"dims and classes must be positive, got {dims}, {classes}")
    if n < classes:
        raise ParameterError(f"need at least one sample per class: n={n} < classes={classes}")
    if separation < 0:
        raise ParameterError(f"separation must be nonnegative, got {separation}")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n, dtype=np.int64) % classes)

    means = np.zeros((classes, dims))
    if dims == 1:
        means[:, 0] = separation * (np.arange(classes) - (classes - 1) / 2.0)
    else:
        angles = 2.0 * np.pi * np.arange(classes) / classes
        means[:, 0] = separation * np.cos(angles)
        means[:, 1] = separation * np.sin(angles)

    features = means[labels] + rng.standard_normal((n, dims))
    return Dataset(features=features, labels=labels)


def split_dataset(
    data: Dataset, n_parts: int, mode: str, seed: int
) -> list[Dataset]:
    """Split a dataset into per-worker shards.

    ``overlap_iid`` draws each part independently at a uniform ratio in
    [0.20, 0.40] of the parent (parts may overlap, totals exceed the
    parent).  ``disjoint_iid`` partitions the parent so every part holds
    every label.  ``disjoint_noniid`` partitions with per-part label
    proportions skewed by a symmetric Dirichlet draw.
    """
    if n_parts <= 0:
        raise ParameterError(f"n_parts must be positive, got {n_parts}")
    if mode not in SPLIT_MODES:
        raise ParameterError(f"unknown split mode {mode!r}, expected one of {SPLIT_MODES}")
    rng = np.random.default_rng(seed)
    n = data.size

    if mode == "overlap_iid":
        lo = math.ceil(0.20 * n)
        hi = math.floor(0.40 * n)
        if lo > hi or lo == 0:
            raise SplitError(
                f"dataset of {n} samples is too small for parts in [20%, 40%]"
            )
        parts = []
        for _ in range(n_parts):
            ratio = rng.uniform(0.20, 0.40)
            size = min(max(int(round(ratio * n)), lo), hi)
            rows = np.sort(rng.choice(n, size=size, replace=False))
            parts.append(data.subset(rows))
        return parts

    label_rows = {
        int(lbl): rng.permutation(np.flatnonzero(data.labels == lbl))
        for lbl in np.unique(data.labels)
    }

    if mode == "disjoint_iid":
        for lbl, rows in label_rows.items():
            if rows.size < n_parts:
                raise SplitError(
                    f"label {lbl} has only {rows.size} samples; cannot cover {n_parts} parts"
                )
        assigned: list[list[np.ndarray]] = [[] for _ in range(n_parts)]
        offset = 0
        for rows in label_rows.values():
            for part in range(n_parts):
                assigned[(part + offset) % n_parts].append(rows[part::n_parts])
            offset += 1
        return [
            data.subset(np.sort(np.concatenate(chunks))) for chunks in assigned
        ]

    # disjoint_noniid: draw label->part proportions until no part is empty
    for _ in range(100):
        assigned = [[] for _ in range(n_parts)]
        for rows in label_rows.values():
            proportions = rng.dirichlet(np.full(n_parts, NONIID_DIRICHLET_ALPHA))
            cuts = (np.cumsum(proportions)[:-1] * rows.size).astype(int)
            for part, chunk in enumerate(np.split(rows, cuts)):
                if chunk.size:
                    assigned[part].append(chunk)
        if all(chunks for chunks in assigned):
            return [
                data.subset(np.sort(np.concatenate(chunks))) for chunks in assigned
            ]
    raise SplitError(
        f"could not draw a non-iid split of {n} samples leaving all {n_parts} parts nonempty"
    )


def save_csv(data: Dataset, path) -> None:
    """Write ``f0..f{d-1},label`` rows; floats use full round-trip precision."""
    header = ",".join([f"f{j}" for j in range(data.dims)] + ["label"])
    table = np.column_stack([data.features, data.labels.astype(np.float64)])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")


def load_csv(path, *, qod: float = 1.0) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        table = np.loadtxt(fh, delimiter=",", ndmin=2)
    cols = header.split(",")
    if len(cols) < 2 or cols[-1] != "label" or cols[0] != "f0":
        raise ParameterError(f"unexpected CSV header {header!r}")
    return Dataset(features=table[:, :-1], labels=table[:, -1].astype(np.int64), qod=qod)
