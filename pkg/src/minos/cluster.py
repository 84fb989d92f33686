"""Similarity structure over workloads.

Spike vectors are compared by cosine distance and grouped agglomeratively;
utilization points are grouped by 2-D K-means with silhouette-driven K.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import IncompatibleVectors, InsufficientData, InvalidParameter, ZeroVector
from .features import SpikeVector, UtilizationPoint

LINKAGES = ("ward", "average", "complete")
NO_SPIKE_CLASS = -1
KMEANS_MAX_ITER = 300
TIE_TOLERANCE = 1e-12


def _as_array(v) -> np.ndarray:
    if isinstance(v, SpikeVector):
        return np.asarray(v.counts, dtype=np.float64)
    return np.asarray(v, dtype=np.float64)


def cosine_distance(a, b) -> float:
    """1 - cos(a, b). Accepts SpikeVectors or plain arrays."""
    if isinstance(a, SpikeVector) and isinstance(b, SpikeVector):
        if a.bin_width != b.bin_width or a.n_bins != b.n_bins:
            raise IncompatibleVectors(f"bin widths differ: {a.bin_width} vs {b.bin_width}")
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise IncompatibleVectors(f"length mismatch {x.size} vs {y.size}")
    sxx, syy = float(np.dot(x, x)), float(np.dot(y, y))
    if sxx == 0 or syy == 0:
        raise ZeroVector("cosine distance is undefined for an all-zero vector")
    # one square root of the product keeps identical count vectors at exactly 0
    d = 1.0 - float(np.dot(x, y)) / np.sqrt(sxx * syy)
    return min(max(d, 0.0), 2.0)


def pairwise_cosine(vectors: Mapping[str, SpikeVector]) -> tuple[list[str], np.ndarray]:
    ids = sorted(vectors)
    X = np.array([_as_array(vectors[i]) for i in ids])
    G = X @ X.T
    sq = np.diag(G).copy()
    if np.any(sq == 0):
        bad = [i for i, n in zip(ids, sq) if n == 0]
        raise ZeroVector(f"zero spike vectors: {bad}")
    D = np.clip(1.0 - G / np.sqrt(np.outer(sq, sq)), 0.0, 2.0)
    np.fill_diagonal(D, 0.0)
    return ids, D


# --- agglomerative clustering -----------------------------------------------


@dataclass(frozen=True)
class Merge:
    a: int  # cluster index: < n leaves are leaves, otherwise n + merge index
    b: int
    distance: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    leaves: tuple[str, ...]
    merges: tuple[Merge, ...]
    linkage: str = "ward"
    metric: str = "cosine"

    def members(self, cluster: int) -> frozenset[str]:
        n = len(self.leaves)
        if cluster < n:
            return frozenset([self.leaves[cluster]])
        m = self.merges[cluster - n]
        return self.members(m.a) | self.members(m.b)

    def to_json(self) -> list[dict]:
        n = len(self.leaves)

        def ref(c):
            return self.leaves[c] if c < n else c - n

        return [{"a": ref(m.a), "b": ref(m.b), "dist": m.distance} for m in self.merges]


def _lance_williams(linkage: str, d_ki, d_kj, d_ij, n_i, n_j, n_k):
    if linkage == "ward":
        t = n_i + n_j + n_k
        return ((n_i + n_k) * d_ki + (n_j + n_k) * d_kj - n_k * d_ij) / t
    if linkage == "average":
        return (n_i * d_ki + n_j * d_kj) / (n_i + n_j)
    if linkage == "complete":
        return np.maximum(d_ki, d_kj)
    raise InvalidParameter(f"unknown linkage {linkage!r}; choose from {LINKAGES}")


def hac_from_matrix(ids: list[str], D: np.ndarray, linkage: str = "ward") -> Dendrogram:
    """Agglomerate using Lance-Williams updates on a precomputed distance matrix.

    Ties (within ``TIE_TOLERANCE``) go to the lowest (slot_i, slot_j) pair; a
    merged cluster takes the lower slot, i.e. its smallest leaf index. Callers pass ids sorted so the result is order-independent.
    """
    if linkage not in LINKAGES:
        raise InvalidParameter(f"unknown linkage {linkage!r}; choose from {LINKAGES}")
    n = len(ids)
    if n < 2:
        raise InsufficientData("need at least 2 workloads to cluster")
    D = np.array(D, dtype=np.float64)
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    label = list(range(n))  # slot -> cluster index
    active = np.ones(n, dtype=bool)
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    merges = []
    for step in range(n - 1):
        masked = np.where(upper & active[:, None] & active[None, :], D, np.inf)
        # near-equal distances count as ties so rounding in the update cannot reorder merges
        flat = int(np.flatnonzero(masked <= masked.min() + TIE_TOLERANCE)[0])
        i, j = divmod(flat, n)
        d_ij = D[i, j]
        ni, nj = size[i], size[j]
        a, b = sorted((label[i], label[j]))
        merges.append(Merge(a, b, float(d_ij), int(ni + nj)))
        others = np.flatnonzero(active)
        others = others[(others != i) & (others != j)]
        if others.size:
            upd = _lance_williams(linkage, D[others, i], D[others, j], d_ij, ni, nj, size[others])
            D[others, i] = upd
            D[i, others] = upd
        active[j] = False
        D[j, :] = np.inf
        D[:, j] = np.inf
        size[i] = ni + nj
        label[i] = n + step
    return Dendrogram(tuple(ids), tuple(merges), linkage)


def hac_build(vectors: Mapping[str, SpikeVector], linkage: str = "ward") -> Dendrogram:
    if len(vectors) < 2:
        raise InsufficientData("need at least 2 workloads to cluster")
    widths = {v.bin_width for v in vectors.values()}
    if len(widths) > 1:
        raise IncompatibleVectors(f"mixed bin widths {sorted(widths)}")
    ids, D = pairwise_cosine(vectors)
    return hac_from_matrix(ids, D, linkage)


def slice_dendrogram(d: Dendrogram, threshold: float) -> dict[str, int]:
    """Class label per leaf after discarding merges above ``threshold``.

    Labels are numbered by first appearance in leaf order.
    """
    if threshold < 0:
        raise InvalidParameter("threshold must be >= 0")
    n = len(d.leaves)
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k, m in enumerate(d.merges):
        node = n + k
        if m.distance <= threshold:
            parent[find(m.a)] = node
            parent[find(m.b)] = node
    labels: dict[int, int] = {}
    out = {}
    for i, leaf in enumerate(d.leaves):
        root = find(i)
        out[leaf] = labels.setdefault(root, len(labels))
    return out


def classify_power(vectors: Mapping[str, SpikeVector], threshold: float,
                   linkage: str = "ward") -> tuple[Dendrogram | None, dict[str, int]]:
    """Dendrogram + sliced classes; zero vectors get ``NO_SPIKE_CLASS``."""
    spiky = {k: v for k, v in vectors.items() if not v.is_zero}
    labels = {k: NO_SPIKE_CLASS for k, v in vectors.items() if v.is_zero}
    dendro = None
    if len(spiky) >= 2:
        dendro = hac_build(spiky, linkage)
        labels.update(slice_dendrogram(dendro, threshold))
    elif spiky:
        labels.update({k: 0 for k in spiky})
    return dendro, dict(sorted(labels.items()))


# --- K-means ----------------------------------------------------------------


@dataclass(frozen=True)
class KMeansModel:
    k: int
    seed: int
    ids: tuple[str, ...]
    centroids: np.ndarray
    labels: np.ndarray
    silhouette: float | None
    inertia_history: tuple[float, ...] = field(default=(), compare=False)
    n_iter: int = 0

    @property
    def assignments(self) -> dict[str, int]:
        return {i: int(l) for i, l in zip(self.ids, self.labels)}

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]

    def predict(self, point) -> int:
        p = point.as_array() if isinstance(point, UtilizationPoint) else np.asarray(point, float)
        return int(np.argmin(np.sum((self.centroids - p) ** 2, axis=1)))

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "centroids": [[float(x) for x in c] for c in self.centroids],
            "assignments": self.assignments,
            "silhouette": self.silhouette,
        }


def _points_matrix(points: Mapping[str, UtilizationPoint]) -> tuple[list[str], np.ndarray]:
    ids = sorted(points)
    X = np.array([points[i].as_array() if isinstance(points[i], UtilizationPoint)
                  else np.asarray(points[i], float) for i in ids], dtype=np.float64)
    return ids, X.reshape(len(ids), -1)


def _assign(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, _inertia(X, C, labels)


def _inertia(X, C, labels) -> float:
    # one summation order for both Lloyd steps, so rounding cannot break monotonicity
    return float(((X - C[labels]) ** 2).sum(axis=1).sum())


def _farthest_point_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = [int(rng.integers(X.shape[0]))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[idx].copy()


def kmeans_fit(points: Mapping[str, UtilizationPoint], k: int, seed: int = 0,
               max_iter: int = KMEANS_MAX_ITER) -> KMeansModel:
    """Lloyd's algorithm from a seeded farthest-point start.

    ``inertia_history`` holds the within-cluster sum of squares after every
    assignment and every centroid update, so it is non-increasing.
    """
    ids, X = _points_matrix(points)
    n = len(ids)
    if k < 2:
        raise InvalidParameter(f"k must be >= 2, got {k}")
    if k > n:
        raise InvalidParameter(f"k={k} exceeds number of points {n}")
    if k > np.unique(X, axis=0).shape[0]:
        raise InvalidParameter(f"k={k} exceeds number of distinct points")
    rng = np.random.default_rng(seed)
    C = _farthest_point_init(X, k, rng)
    labels, inertia = _assign(X, C)
    history = [inertia]
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = X[labels == j]
            if members.size:
                C[j] = members.mean(axis=0)
        history.append(_inertia(X, C, labels))
        new_labels, inertia = _assign(X, C)
        history.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    sil = silhouette_score(X, labels) if 2 <= len(set(labels.tolist())) <= n - 1 else None
    C.setflags(write=False)
    labels.setflags(write=False)
    return KMeansModel(k, seed, tuple(ids), C, labels, sil, tuple(history), it)


def silhouette_score(X, labels) -> float:
    """Mean sample silhouette; singleton clusters score 0."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    n = X.shape[0]
    uniq = np.unique(labels)
    if not 2 <= uniq.size <= n - 1:
        raise InsufficientData(f"silhouette needs 2..n-1 clusters, got {uniq.size} for n={n}")
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
    s = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == other].mean() for other in uniq if other != labels[i])
        m = max(a, b)
        s[i] = 0.0 if m == 0 else (b - a) / m
    return float(s.mean())


def silhouette_sweep(points: Mapping[str, UtilizationPoint], k_min: int = 3, k_max: int = 17,
                     seed: int = 0) -> tuple[int, dict[int, float]]:
    """Best K by mean silhouette over ``k_min..k_max`` (ties -> smaller K).

    The range is cut to K <= n-1 and to the number of distinct points.
    """
    ids, X = _points_matrix(points)
    n = len(ids)
    if n < 4:
        raise InsufficientData(f"silhouette sweep needs at least 4 points, got {n}")
    hi = min(k_max, n - 1, np.unique(X, axis=0).shape[0])
    lo = max(k_min, 2)
    if hi < lo:
        raise InsufficientData(f"no admissible K in [{k_min}, {k_max}] for {n} points")
    scores = {}
    best_k, best = None, -np.inf
    for k in range(lo, hi + 1):
        model = kmeans_fit(points, k, seed)
        s = model.silhouette if model.silhouette is not None else -1.0
        scores[k] = s
        if s > best + 1e-12:
            best_k, best = k, s
    return best_k, scores


# --- nearest neighbours -----------------------------------------------------


@dataclass(frozen=True)
class NeighborResult:
    neighbor: str
    distance: float

    def to_json(self) -> dict:
        return {"id": self.neighbor, "distance": self.distance}


def _argmin(pairs) -> NeighborResult:
    best = min(pairs, key=lambda p: (p[1], p[0]))
    return NeighborResult(best[0], float(best[1]))


def nearest_power_neighbor(query: SpikeVector, refs: Mapping[str, SpikeVector],
                           exclude: str | None = None) -> NeighborResult:
    """Closest reference by cosine distance; zero-spike references are skipped."""
    if query.is_zero:
        raise ZeroVector("query workload has no spikes")
    cands = [(k, cosine_distance(query, v)) for k, v in refs.items()
             if k != exclude and not v.is_zero]
    if not cands:
        raise InsufficientData("no reference with spikes to compare against")
    return _argmin(cands)


def nearest_util_neighbor(query: UtilizationPoint, refs: Mapping[str, UtilizationPoint],
                          exclude: str | None = None) -> NeighborResult:
    q = query.as_array()
    cands = [(k, float(np.linalg.norm(v.as_array() - q))) for k, v in refs.items()
             if k != exclude and v is not None]
    if not cands:
        raise InsufficientData("no reference with utilization data")
    return _argmin(cands)
