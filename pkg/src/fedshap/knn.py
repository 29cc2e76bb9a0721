"""K-nearest-neighbour classifier with a deterministic tie rule.

Neighbours are ordered by (squared Euclidean distance, training-row index),
so the k-nearest set is unique. The KD-tree is only an accelerator: it
proposes candidates, and the final ordering is always done on exact
squared distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .data import NumericDataset
from .errors import DataError

SNAPSHOT_VERSION = 1
LEAF_SIZE = 30


def partial_sq_dist(columns: Sequence[int], x_sub, rows: np.ndarray) -> np.ndarray:
    """Squared distance restricted to ``columns``.

    ``rows`` may hold either all columns or exactly the selected ones.
    """
    columns = list(columns)
    x_sub = np.asarray(x_sub, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    if x_sub.shape != (len(columns),):
        raise ValueError(f"x_sub has length {x_sub.size}, expected {len(columns)}")
    if not columns:
        return np.zeros(len(rows))
    sub = rows if rows.shape[1] == len(columns) else rows[:, columns]
    diff = sub - x_sub
    return np.einsum("ij,ij->i", diff, diff)


def knn_vote(sq_dist: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Positive-label vote fraction among the k nearest rows, per row of ``sq_dist``.

    Ties at the k-th distance are resolved toward the smaller column index.
    """
    sq = np.atleast_2d(sq_dist)
    pos = np.asarray(labels, dtype=bool)
    kth = np.partition(sq, k - 1, axis=1)[:, k - 1 : k]
    less = sq < kth
    votes = np.count_nonzero(less & pos, axis=1)
    need = k - np.count_nonzero(less, axis=1)
    eq = sq == kth
    take = eq & (np.cumsum(eq, axis=1) <= need[:, None])
    votes += np.count_nonzero(take & pos, axis=1)
    return votes / k


@dataclass(frozen=True, eq=False)
class KnnModel:
    training_rows: np.ndarray
    training_labels: np.ndarray
    k: int
    leaf_size: int = LEAF_SIZE
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.training_rows, dtype=np.float64)
        labels = np.asarray(self.training_labels, dtype=np.int8)
        if rows.ndim != 2 or len(rows) == 0:
            raise DataError("training set is empty")
        if len(labels) != len(rows):
            raise DataError("labels length must equal row count")
        if not 1 <= self.k <= len(rows):
            raise ValueError(f"k must satisfy 1 <= k <= n_train ({len(rows)}), got {self.k}")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "training_rows", rows)
        object.__setattr__(self, "training_labels", labels)
        # minkowski p=2, leaf capacity as configured
        object.__setattr__(self, "_tree", cKDTree(rows, leafsize=self.leaf_size))

    @property
    def p(self) -> int:
        return self.training_rows.shape[1]

    @property
    def n_train(self) -> int:
        return len(self.training_rows)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.p:
            raise ValueError(f"expected {self.p} features, got {x.shape[-1]}")
        return x

    def kneighbors(self, x) -> np.ndarray:
        """Indices of the k nearest training rows, via the KD-tree."""
        x = self._check(x)
        d, _ = self._tree.query(x, k=self.k)
        radius = float(np.max(d)) * (1 + 1e-9) + 1e-12
        cand = np.asarray(self._tree.query_ball_point(x, radius), dtype=np.intp)
        sq = partial_sq_dist(range(self.p), x, self.training_rows[cand])
        order = np.lexsort((cand, sq))
        return cand[order[: self.k]]

    def kneighbors_scan(self, x) -> np.ndarray:
        """Same as :meth:`kneighbors` by exhaustive scan."""
        x = self._check(x)
        sq = partial_sq_dist(range(self.p), x, self.training_rows)
        return np.lexsort((np.arange(self.n_train), sq))[: self.k]

    def predict_proba(self, x) -> float:
        idx = self.kneighbors(x)
        return int(self.training_labels[idx].sum()) / self.k

    def predict_proba_scan(self, x) -> float:
        x = self._check(x)
        sq = partial_sq_dist(range(self.p), x, self.training_rows)
        return float(knn_vote(sq, self.training_labels, self.k)[0])

    def predict_label(self, x) -> int:
        return int(self.predict_proba(x) >= 0.5)

    def predict_proba_many(self, X) -> np.ndarray:
        X = self._check(np.atleast_2d(X))
        return np.array([self.predict_proba(x) for x in X])

    def predict_proba_batch(self, X) -> np.ndarray:
        """Vote fractions for many queries by exhaustive scan."""
        X = self._check(np.atleast_2d(X))
        sq = np.zeros((len(X), self.n_train))
        for j in range(self.p):
            sq += np.square(self.training_rows[:, j][None, :] - X[:, j][:, None])
        return knn_vote(sq, self.training_labels, self.k)

    def predict_proba_masked(self, x, ref, column_masks: np.ndarray) -> np.ndarray:
        """Vote fractions for ``where(column_masks, x, ref)``, one per mask row.

        Uses ``d(z) = d(ref) + sum_j on_j * ((t_j - x_j)**2 - (t_j - ref_j)**2)``,
        which is exact for inputs on the encoding grid.
        """
        x, ref = self._check(x), self._check(ref)
        on_sq = np.square(self.training_rows - x)
        off_sq = np.square(self.training_rows - ref)
        base = off_sq.sum(axis=1)
        delta_t = np.ascontiguousarray((on_sq - off_sq).T)
        masks = np.atleast_2d(column_masks).astype(np.float64)
        sq = base[None, :] + masks @ delta_t
        return knn_vote(sq, self.training_labels, self.k)

    def save(self, path: str | Path) -> None:
        with Path(path).open("wb") as fh:
            np.savez(
                fh,
                format_version=SNAPSHOT_VERSION,
                rows=self.training_rows,
                labels=self.training_labels,
                k=self.k,
                leaf_size=self.leaf_size,
            )

    @classmethod
    def load(cls, path: str | Path) -> "KnnModel":
        with np.load(Path(path)) as z:
            version = int(z["format_version"])
            if version != SNAPSHOT_VERSION:
                raise DataError(f"unsupported model snapshot version {version}")
            return cls(z["rows"], z["labels"], int(z["k"]), int(z["leaf_size"]))


def fit(train: NumericDataset, k: int = 5, leaf_size: int = LEAF_SIZE) -> KnnModel:
    if len(train) == 0:
        raise DataError("training set is empty")
    return KnnModel(train.rows, train.labels, k, leaf_size)


def accuracy(model: KnnModel, test: NumericDataset) -> float:
    if len(test) == 0:
        raise DataError("test set is empty")
    pred = model.predict_proba_many(test.rows) >= 0.5
    return float(np.mean(pred == test.labels.astype(bool)))
