"""Lloyd's k-means over a bundle's visual embeddings.

Determinism contract: identical (inputs, seed) always give identical
output. Initialization is k-means++ driven by the seed, ties in the
assignment step go to the lowest-indexed centroid (``np.argmin``
semantics), and centroid updates are bincount reductions, so results do
not depend on thread count.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericError, ValidationError
from .store import ClusterModel


def _as_matrix(embeddings) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError("embeddings must be a non-empty 2-D matrix")
    if not np.isfinite(x).all():
        raise ValidationError("embeddings must be finite")
    return x


def assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid assignment under squared Euclidean distance.

    Equidistant points join the lowest-indexed centroid.
    """
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def inertia_of(x: np.ndarray, assignments: np.ndarray, centroids: np.ndarray) -> float:
    diff = x - centroids[assignments]
    return float(np.sum(diff * diff))


def _update_centroids(x, assignments, k, old_centroids):
    counts = np.bincount(assignments, minlength=k)
    centroids = np.empty((k, x.shape[1]))
    for d in range(x.shape[1]):
        sums = np.bincount(assignments, weights=x[:, d], minlength=k)
        centroids[:, d] = np.where(counts > 0, sums / np.maximum(counts, 1), old_centroids[:, d])
    return centroids, counts


def _repair_empty(x, assignments, centroids, counts):
    """Move the point farthest from its centroid into each empty cluster."""
    for c in range(len(counts)):
        if counts[c] > 0:
            continue
        dist = ((x - centroids[assignments]) ** 2).sum(axis=1)
        dist[counts[assignments] <= 1] = -np.inf  # don't empty another cluster
        victim = int(np.argmax(dist))
        counts[assignments[victim]] -= 1
        assignments[victim] = c
        counts[c] = 1
        centroids[c] = x[victim]
    return assignments, centroids, counts


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # D^2 sampling over a lexicographically sorted view of the points, so
    # the chosen centers depend on the point multiset, not the row order
    x = x[np.lexsort(x.T[::-1])]
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # all points identical to chosen centers
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random(), side="right"))
            idx = min(idx, n - 1)
        centroids[c] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[c]) ** 2).sum(axis=1))
    return centroids


def _swap_polish(x, assignments, counts, max_sweeps: int = 100):
    """Single-point improvement pass (Hartigan-style) after Lloyd converges.

    Lloyd stops at Voronoi-consistent partitions, but moving one point can
    still lower the inertia once the centroid shift it causes is priced in:
    moving p from cluster a (size n_a) to b (size n_b) changes inertia by
    n_b/(n_b+1)*|p-c_b|^2 - n_a/(n_a-1)*|p-c_a|^2. Applying such moves until
    none is left escapes many of Lloyd's local minima.
    """
    assignments = assignments.copy()
    counts = counts.astype(np.int64).copy()
    k = counts.shape[0]
    sums = np.zeros((k, x.shape[1]))
    for c in range(k):
        sums[c] = x[assignments == c].sum(axis=0)
    sweep_order = np.lexsort(x.T[::-1])  # row-order-invariant visit order
    for _ in range(max_sweeps):
        improved = False
        for i in sweep_order:
            a = assignments[i]
            if counts[a] <= 1:
                continue  # never empty a cluster
            centroids = sums / counts[:, None]
            d2 = ((centroids - x[i]) ** 2).sum(axis=1)
            gain_out = counts[a] / (counts[a] - 1) * d2[a]
            cost_in = counts / (counts + 1) * d2
            cost_in[a] = np.inf
            b = int(np.argmin(cost_in))
            if cost_in[b] < gain_out * (1 - 1e-12) - 1e-15:
                sums[a] -= x[i]
                sums[b] += x[i]
                counts[a] -= 1
                counts[b] += 1
                assignments[i] = b
                improved = True
        if not improved:
            break
    return assignments


def _uniform_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # uniform over the sorted view, like _kmeanspp_init, for row-order invariance
    x = x[np.lexsort(x.T[::-1])]
    return x[rng.choice(x.shape[0], size=k, replace=False)]


def kmeans(
    embeddings,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-4,
    normalize: bool = False,
    restarts: int = 1,
) -> ClusterModel:
    """Cluster rows of ``embeddings`` into ``k`` groups.

    With ``restarts > 1``, runs Lloyd from seeds ``seed, seed+1, ...`` and
    keeps the lowest-inertia result. The first restart initializes with
    k-means++; later restarts draw k distinct points uniformly, which
    spreads the starts over more basins than repeated D^2 sampling would.
    """
    x = _as_matrix(embeddings)
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")
    if k > x.shape[0]:
        raise ValidationError(f"k={k} exceeds point count {x.shape[0]}")
    if max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    if tol < 0:
        raise ValidationError("tol must be nonnegative")
    if normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValidationError("cannot normalize a zero embedding row")
        x = x / norms

    best = None
    for r in range(restarts):
        model = _lloyd(x, k, seed + r, max_iter, tol, uniform_init=r > 0)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def _lloyd(x, k, seed, max_iter, tol, uniform_init: bool = False) -> ClusterModel:
    rng = np.random.default_rng(seed)
    init = _uniform_init if uniform_init else _kmeanspp_init
    centroids = init(x, k, rng)
    prev_inertia = np.inf
    assignments = None
    for _ in range(max_iter):
        new_assignments = assign(x, centroids)
        counts = np.bincount(new_assignments, minlength=k)
        centroids, counts = _update_centroids(x, new_assignments, k, centroids)
        new_assignments, centroids, counts = _repair_empty(
            x, new_assignments, centroids, counts
        )
        if (counts == 0).any():
            raise NumericError("empty cluster survived repair")
        centroids, counts = _update_centroids(x, new_assignments, k, centroids)
        inertia = inertia_of(x, new_assignments, centroids)
        if inertia > prev_inertia * (1 + 1e-9) + 1e-12:
            raise NumericError(
                f"inertia increased across Lloyd iteration: {prev_inertia} -> {inertia}"
            )
        converged = (
            assignments is not None and np.array_equal(assignments, new_assignments)
        ) or (np.isfinite(prev_inertia) and prev_inertia - inertia < tol * max(prev_inertia, 1e-300))
        assignments = new_assignments
        prev_inertia = inertia
        if converged:
            break

    polished = _swap_polish(x, assignments, np.bincount(assignments, minlength=k))
    if not np.array_equal(polished, assignments):
        new_centroids, _ = _update_centroids(x, polished, k, centroids)
        inertia = inertia_of(x, polished, new_centroids)
        if inertia <= prev_inertia:
            assignments, centroids, prev_inertia = polished, new_centroids, inertia
    return ClusterModel(k=k, centroids=centroids, assignments=assignments, inertia=prev_inertia)


def cluster_sizes(model: ClusterModel) -> list[int]:
    """Per-cluster member counts; sums to the number of patches."""
    return np.bincount(model.assignments, minlength=model.k).tolist()
