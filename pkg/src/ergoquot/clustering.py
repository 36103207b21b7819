"""k-means on diffusion coordinates."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterResult:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    seed: int
    iterations: int


def _check(coords, k: int) -> np.ndarray:
    X = np.asarray(coords, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ClusteringError("coordinates must be an n x m array")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} must lie in [1, {n}]")
    if not np.all(np.isfinite(X)):
        raise ClusteringError("coordinates contain non-finite values")
    return X


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkm,nkm->nk", diff, diff)


def _plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _canonical(labels: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = np.empty(C.shape[0], dtype=np.int64)
    remap[order] = np.arange(order.size)
    return remap[labels], C[order]


def _lloyd(X: np.ndarray, k: int, seed: int, max_iter: int, tol: float) -> ClusterResult:
    rng = np.random.default_rng(seed)
    C = _plusplus(X, k, rng)
    labels = np.argmin(_sq_dists(X, C), axis=1)
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # repair: move the point farthest from the centre of the largest cluster
            big = int(np.argmax(counts))
            members = np.flatnonzero(labels == big)
            far = members[np.argmax(np.sum((X[members] - C[big]) ** 2, axis=1))]
            labels[far] = j
            counts = np.bincount(labels, minlength=k)
        newC = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.max(np.abs(newC - C)))
        C = newC
        d2 = _sq_dists(X, C)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(X.shape[0]), labels].sum())
        assert inertia <= prev * (1 + 1e-12) + 1e-300, "k-means inertia increased"
        prev = inertia
        if shift < tol:
            break
    # final centroids are the means of the final assignment
    counts = np.bincount(labels, minlength=k)
    C = np.array([X[labels == j].mean(axis=0) if counts[j] else C[j] for j in range(k)])
    inertia = float(np.sum((X - C[labels]) ** 2))
    labels, C = _canonical(labels, C[: k])
    return ClusterResult(k=k, labels=labels, centroids=C, inertia=inertia, seed=seed, iterations=it)


def kmeans(
    coords,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-10,
    restarts: int = 10,
    workers: int = 1,
) -> ClusterResult:
    """Best of ``restarts`` Lloyd runs from k-means++ seeds ``seed, seed+1, ...``.

    The winner is the lowest inertia, ties broken by the smaller seed, so the
    result does not depend on ``workers``.
    """
    X = _check(coords, k)
    if restarts < 1:
        raise ClusteringError("restarts must be at least 1")
    seeds = [seed + r for r in range(restarts)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda s: _lloyd(X, k, s, max_iter, tol), seeds))
    else:
        runs = [_lloyd(X, k, s, max_iter, tol) for s in seeds]
    return min(runs, key=lambda r: (r.inertia, r.seed))


def kmeans_oracle(coords, k: int, limit: int = 10**7) -> float:
    """Exact optimal inertia by enumerating every label assignment."""
    X = _check(coords, k)
    n = X.shape[0]
    if k**n > limit:
        raise ClusteringError(f"{k}^{n} assignments exceed the enumeration limit")
    best = np.inf
    for labels in itertools.product(range(k), repeat=n):
        lab = np.array(labels)
        total = 0.0
        for j in range(k):
            pts = X[lab == j]
            if pts.size:
                total += float(np.sum((pts - pts.mean(axis=0)) ** 2))
        best = min(best, total)
    return best
