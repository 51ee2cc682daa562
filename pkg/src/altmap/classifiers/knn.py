"""Exact k-nearest-neighbour classifier with uniform vote weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["KnnModel", "knn_fit", "knn_predict", "nearest_neighbors"]


def _sq_distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    # accumulate band by band so every distance is summed in the same order
    dist = np.zeros((queries.shape[0], points.shape[0]))
    for j in range(queries.shape[1]):
        diff = queries[:, j, None] - points[None, :, j]
        dist += diff * diff
    return dist


def _k_smallest(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest entries per row, ordered by (distance, index)."""
    n = dist.shape[1]
    if k >= n:
        return np.argsort(dist, axis=1, kind="stable")
    kth = np.partition(dist, k - 1, axis=1)[:, k - 1 : k]
    below = dist < kth
    missing = k - below.sum(axis=1)
    equal = dist == kth
    take = below | (equal & (np.cumsum(equal, axis=1) <= missing[:, None]))
    idx = np.nonzero(take)[1].reshape(dist.shape[0], k)
    order = np.argsort(np.take_along_axis(dist, idx, axis=1), axis=1, kind="stable")
    return np.take_along_axis(idx, order, axis=1)


@dataclass
class KnnModel:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    k: int = 5

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (n, d) with one label per row")
        if not 1 <= self.k <= len(self.labels):
            raise ValueError(f"k={self.k} must be between 1 and the training size {len(self.labels)}")
        if not np.isfinite(self.features).all():
            raise ValueError("training features must be finite")

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def predict_proba(self, queries: np.ndarray, block: int = 512) -> np.ndarray:
        """Vote fractions per class for each query row."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if queries.shape[1] != self.n_features:
            raise ValueError(f"query has {queries.shape[1]} features, model expects {self.n_features}")
        scores = np.zeros((len(queries), self.n_classes))
        for start in range(0, len(queries), block):
            q = queries[start : start + block]
            idx = nearest_neighbors(self.features, q, self.k)
            votes = self.labels[idx]
            rows = np.arange(len(q))
            for j in range(self.k):
                scores[start + rows, votes[:, j]] += 1.0
        return scores / self.k

    def predict(self, queries: np.ndarray) -> np.ndarray:
        return self.predict_proba(queries).argmax(axis=1)


def nearest_neighbors(points: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Brute-force ``k`` nearest training indices per query; distance ties go to the lower index."""
    return _k_smallest(_sq_distances(queries, points), k)


def knn_fit(features, labels, n_classes: int | None = None, k: int = 5) -> KnnModel:
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    return KnnModel(features, labels, n_classes, k)


def knn_predict(model: KnnModel, query) -> tuple[int, np.ndarray]:
    """Class and vote-fraction vector for a single query vector."""
    scores = model.predict_proba(np.asarray(query, dtype=np.float64).reshape(1, -1))[0]
    return int(scores.argmax()), scores
