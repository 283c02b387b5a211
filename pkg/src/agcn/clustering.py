"""K-means on embeddings plus matched-accuracy and NMI metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DimensionError

__all__ = ["ClusterResult", "kmeans", "accuracy", "nmi", "evaluate"]


def _kmeans_pp_init(points, n_clusters, rng):
    """k-means++ seeding: each new center is drawn with probability
    proportional to squared distance from the nearest chosen center."""
    n = points.shape[0]
    centers = np.empty((n_clusters, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, n_clusters):
        total = d2.sum()
        if total <= 0:
            centers[c] = points[rng.integers(n)]
            continue
        idx = rng.choice(n, p=d2 / total)
        centers[c] = points[idx]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def _assign(points, centers):
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2


def _lloyd(points, centers, tol, max_iter):
    """Lloyd iterations with farthest-point repair for empty clusters.

    Returns (labels, inertia, inertia_trace)."""
    n_clusters = centers.shape[0]
    prev_inertia = np.inf
    trace = []
    labels = None
    for _ in range(max_iter):
        labels, d2 = _assign(points, centers)
        # repair empty clusters with the point farthest from its center
        for c in range(n_clusters):
            if (labels == c).any():
                continue
            dist_own = d2[np.arange(len(labels)), labels]
            cluster_sizes = np.bincount(labels, minlength=n_clusters)
            movable = cluster_sizes[labels] > 1
            if not movable.any():
                movable = np.ones(len(labels), dtype=bool)
            cand = np.where(movable, dist_own, -np.inf)
            far = int(cand.argmax())
            labels[far] = c
            centers[c] = points[far]
            d2[:, c] = ((points - centers[c]) ** 2).sum(axis=1)
        inertia = float(d2[np.arange(len(labels)), labels].sum())
        trace.append(inertia)
        for c in range(n_clusters):
            members = labels == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
        if prev_inertia - inertia <= tol:
            break
        prev_inertia = inertia
    return labels, trace[-1], trace


def kmeans(points: np.ndarray, n_clusters: int, seed: int,
           restarts: int = 10, tol: float = 1e-6, max_iter: int = 300) -> np.ndarray:
    """Best-of-restarts k-means labels (k-means++ init, Lloyd refinement)."""
    points = np.asarray(points, dtype=np.float64)
    if n_clusters > points.shape[0]:
        raise ConfigError(
            f"n_clusters={n_clusters} exceeds number of points {points.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _kmeans_pp_init(points, n_clusters, rng)
        labels, inertia, _ = _lloyd(points, centers, tol, max_iter)
        if inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    return best_labels


def _kmeans_with_inertia(points, n_clusters, seed, restarts, tol=1e-6, max_iter=300):
    rng = np.random.default_rng(seed)
    best = (None, np.inf)
    for _ in range(restarts):
        centers = _kmeans_pp_init(points, n_clusters, rng)
        labels, inertia, _ = _lloyd(points, centers, tol, max_iter)
        if inertia < best[1]:
            best = (labels, inertia)
    return best


def accuracy(pred, truth) -> float:
    """Fraction matched under the best bijection between label sets."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise DimensionError(f"label lengths differ: {pred.shape} vs {truth.shape}")
    size = int(max(pred.max(), truth.max())) + 1
    confusion = np.zeros((size, size), dtype=np.int64)
    np.add.at(confusion, (pred, truth), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / len(pred))


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of entropies (natural log).

    Zero total entropy (e.g. a single cluster on either side) gives 0.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise DimensionError(f"label lengths differ: {pred.shape} vs {truth.shape}")
    n = len(pred)
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    row = table.sum(axis=1)
    col = table.sum(axis=0)

    def _entropy(counts):
        c = counts[counts > 0].astype(np.float64)
        return float(((c / n) * np.log(n / c)).sum())

    nz = table > 0
    cells = table[nz].astype(np.float64)
    outer = (row[:, None] * col[None, :])[nz].astype(np.float64)
    mi = float(((cells / n) * np.log(n * cells / outer)).sum())
    mean_h = 0.5 * (_entropy(row) + _entropy(col))
    if mean_h == 0.0:
        return 0.0
    return min(max(mi / mean_h, 0.0), 1.0)


@dataclass(frozen=True)
class ClusterResult:
    """Clustering of one embedding matrix across several k-means seeds."""

    labels: np.ndarray
    acc: float
    nmi: float
    chosen_seed: int
    seed_records: tuple         # (seed, inertia, acc, nmi) per seed

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "nmi": self.nmi,
            "chosen_seed": self.chosen_seed,
            "seed_records": [
                {"seed": s, "inertia": i, "acc": a, "nmi": m}
                for s, i, a, m in self.seed_records
            ],
        }


def evaluate(h: np.ndarray, n_clusters: int, truth, seeds,
             restarts: int = 10) -> ClusterResult:
    """Run k-means per seed and report the best-by-inertia result.

    Selection is by inertia, not by accuracy, so ground truth never leaks
    into model selection.
    """
    truth = np.asarray(truth, dtype=np.int64)
    records = []
    best = None
    for seed in seeds:
        labels, inertia = _kmeans_with_inertia(h, n_clusters, seed, restarts)
        a = accuracy(labels, truth)
        m = nmi(labels, truth)
        records.append((int(seed), float(inertia), a, m))
        if best is None or inertia < best[1]:
            best = (labels, inertia, a, m, int(seed))
    labels, _, a, m, chosen = best
    return ClusterResult(labels=labels, acc=a, nmi=m, chosen_seed=chosen,
                         seed_records=tuple(records))
