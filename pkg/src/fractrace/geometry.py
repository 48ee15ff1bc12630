"""Small geometric helpers: tolerance clustering and point lookup."""
from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree


def as_points(x, dim: int | None = None) -> np.ndarray:
    """Coerce scalars, vectors or stacks of vectors into a (k, d) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if dim is not None and dim == 1:
            arr = arr.reshape(-1, 1)
        else:
            arr = arr.reshape(1, -1)
    return arr


def cluster_labels(points: np.ndarray, eps: float) -> tuple[np.ndarray, int]:
    """Label points so that any two within ``eps`` share a label (transitively).

    Labels are numbered in order of first appearance.
    """
    k = len(points)
    if k == 0:
        return np.zeros(0, dtype=int), 0
    pairs = cKDTree(points).query_pairs(r=eps, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(k), k
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(k, k))
    n_comp, raw = connected_components(graph, directed=False)
    # renumber by first appearance for deterministic output
    first = np.full(n_comp, k)
    np.minimum.at(first, raw, np.arange(k))
    order = np.argsort(first, kind="stable")
    relabel = np.empty(n_comp, dtype=int)
    relabel[order] = np.arange(n_comp)
    return relabel[raw], n_comp


def has_close_pair(points: np.ndarray, eps: float) -> bool:
    if len(points) < 2:
        return False
    return len(cKDTree(points).query_pairs(r=eps, output_type="ndarray")) > 0


class PointIndex:
    """Nearest-neighbour lookup of query points against a fixed point set."""

    def __init__(self, points: np.ndarray, eps: float):
        self.points = np.asarray(points, dtype=float)
        self.eps = eps
        self._tree = cKDTree(self.points) if len(self.points) else None

    def match(self, queries: np.ndarray) -> np.ndarray:
        """Index of the stored point within eps of each query, or -1."""
        queries = np.asarray(queries, dtype=float)
        if self._tree is None or len(queries) == 0:
            return np.full(len(queries), -1, dtype=int)
        dist, idx = self._tree.query(queries, k=1)
        idx = np.where(dist <= self.eps, idx, -1)
        return idx.astype(int)

    def contains(self, queries: np.ndarray) -> np.ndarray:
        return self.match(queries) >= 0
