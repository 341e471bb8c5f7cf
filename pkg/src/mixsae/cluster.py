"""Classical clusterers: k-means++ seeding, Lloyd iterations, and naive
agglomerative hierarchical clustering. All are deterministic given their
seed/config and operate on (n, dim) float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    iterations_run: int


@dataclass(frozen=True)
class AhcConfig:
    linkage: str = "average"       # average | complete | single
    metric: str = "cosine"         # cosine | euclidean
    target_clusters: int = 2

    def __post_init__(self):
        if self.linkage not in ("average", "complete", "single"):
            raise ValueError(f"unknown linkage: {self.linkage!r}")
        if self.metric not in ("cosine", "euclidean"):
            raise ValueError(f"unknown metric: {self.metric!r}")
        if self.target_clusters < 1:
            raise ValueError("target_clusters must be >= 1")


def _sq_dists_to(points: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    diff = points - centroid
    return (diff * diff).sum(axis=1)


def kmeans_pp_init(data: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """k-means++ seeding: first centroid uniform, each next drawn with
    probability proportional to the squared distance to the nearest
    already-chosen centroid."""
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    closest = _sq_dists_to(x, centroids[0])
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining mass sits on already-chosen points; pick uniformly
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            idx = min(idx, n - 1)
        centroids[i] = x[idx]
        closest = np.minimum(closest, _sq_dists_to(x, centroids[i]))
    return centroids


def _assign(x: np.ndarray, centroids: np.ndarray):
    # (n, k) squared distances via the expansion ||x||^2 - 2 x.c + ||c||^2
    d = (
        (x * x).sum(axis=1, keepdims=True)
        - 2.0 * x @ centroids.T
        + (centroids * centroids).sum(axis=1)
    )
    np.maximum(d, 0.0, out=d)
    labels = d.argmin(axis=1)
    return labels, d


def kmeans_fit(data: np.ndarray, k: int, seed: int = 0, max_iter: int = 300,
               tol: float = 1e-6, n_init: int = 10):
    """Lloyd iterations from a k-means++ start, best of ``n_init`` restarts.

    Returns (KMeansModel, labels) for the restart with the lowest inertia
    (first such restart on ties). Restart seeds are derived from ``seed``,
    so the whole fit is deterministic.
    """
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    best: KMeansModel | None = None
    best_labels = None
    for restart_seed in np.random.SeedSequence(seed).generate_state(n_init):
        model, labels = _kmeans_single(x, k, int(restart_seed), max_iter, tol)
        if best is None or model.inertia < best.inertia:
            best, best_labels = model, labels
    return best, best_labels


def _kmeans_single(x: np.ndarray, k: int, seed: int, max_iter: int,
                   tol: float):
    """One Lloyd run. An empty cluster is repaired by reseeding its centroid
    to the point currently farthest from its own centroid; repair candidates
    are consumed in farthest-first order so multiple empty clusters stay
    deterministic.
    """
    n = x.shape[0]
    centroids = kmeans_pp_init(x, k, seed)
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        labels, d = _assign(x, centroids)
        point_dist = d[np.arange(n), labels]
        new_centroids = centroids.copy()
        taken: list[int] = []
        for c in range(k):
            members = labels == c
            if members.any():
                new_centroids[c] = x[members].mean(axis=0)
            else:
                order = np.argsort(-point_dist, kind="stable")
                far = next(int(i) for i in order if int(i) not in taken)
                taken.append(far)
                new_centroids[c] = x[far]
                labels[far] = c
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    labels, d = _assign(x, centroids)
    inertia = float(d[np.arange(n), labels].sum())
    return KMeansModel(centroids=centroids, inertia=inertia, iterations_run=it), labels


def pairwise_distances(x: np.ndarray, metric: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if metric == "euclidean":
        sq = (
            (x * x).sum(axis=1, keepdims=True)
            - 2.0 * x @ x.T
            + (x * x).sum(axis=1)
        )
        np.maximum(sq, 0.0, out=sq)
        return np.sqrt(sq)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[:, None]
    sim = unit @ unit.T
    np.clip(sim, -1.0, 1.0, out=sim)
    d = 1.0 - sim
    np.fill_diagonal(d, 0.0)
    return d


def ahc_fit(data: np.ndarray, config: AhcConfig) -> np.ndarray:
    """Agglomerative clustering from singletons down to
    config.target_clusters, merging the closest active pair each step.

    Cluster-to-cluster distances follow the configured linkage and are
    maintained with Lance-Williams updates; ties pick the lexicographically
    smallest (i, j) pair. Output labels are renumbered 0..k-1 in order of
    each cluster's smallest member index.
    """
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    if n < config.target_clusters:
        raise ValueError(f"need at least {config.target_clusters} points, got {n}")
    dist = pairwise_distances(x, config.metric)
    active = list(range(n))
    members = {i: [i] for i in range(n)}
    d = dist.copy()
    np.fill_diagonal(d, np.inf)

    while len(active) > config.target_clusters:
        best = (np.inf, -1, -1)
        for ai in range(len(active)):
            i = active[ai]
            row = d[i]
            for aj in range(ai + 1, len(active)):
                j = active[aj]
                if row[j] < best[0]:
                    best = (row[j], i, j)
        _, i, j = best
        ni, nj = len(members[i]), len(members[j])
        for c in active:
            if c in (i, j):
                continue
            if config.linkage == "single":
                new = min(d[i, c], d[j, c])
            elif config.linkage == "complete":
                new = max(d[i, c], d[j, c])
            else:
                new = (ni * d[i, c] + nj * d[j, c]) / (ni + nj)
            d[i, c] = d[c, i] = new
        members[i].extend(members[j])
        del members[j]
        active.remove(j)

    labels = np.empty(n, dtype=np.int64)
    for new_id, cid in enumerate(sorted(active, key=lambda c: min(members[c]))):
        labels[np.array(members[cid])] = new_id
    return labels
