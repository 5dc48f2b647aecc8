"""k-means (Lloyd iterations, k-means++ seeding, best of several restarts) and the
adjusted Rand index."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import ComputationError, DataError

_CHUNK = 2048


@dataclass
class ClusteringResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_restarts: int
    seed: int
    n_iter: int = 0
    inertia_trace: list[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def to_dict(self) -> dict:
        return {
            "labels": self.labels.tolist(),
            "centroids": self.centroids.tolist(),
            "inertia": self.inertia,
            "n_restarts": self.n_restarts,
            "seed": self.seed,
            "n_iter": self.n_iter,
        }


def _sq_dist_fast(points, centroids, p_sq=None):
    if p_sq is None:
        p_sq = np.einsum("ij,ij->i", points, points)
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    d = p_sq[:, None] - 2.0 * points @ centroids.T + c_sq[None, :]
    return np.maximum(d, 0.0)


def _sq_dist_exact(points, centroids):
    """Squared distances from explicit differences; used where labels must be
    reproducible by :func:`assign`."""
    out = np.empty((points.shape[0], centroids.shape[0]))
    step = max(1, _CHUNK * 64 // max(1, centroids.size))
    for s in range(0, points.shape[0], step):
        diff = points[s: s + step, None, :] - centroids[None, :, :]
        out[s: s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def assign(centroids, point) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    point = np.asarray(point, dtype=np.float64).ravel()
    if point.size != centroids.shape[1]:
        raise DataError(f"point has dimension {point.size}, centroids {centroids.shape[1]}")
    diff = centroids - point
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def assign_all(centroids, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return np.argmin(_sq_dist_exact(points, np.asarray(centroids, dtype=np.float64)), axis=1)


def _kmeans_plusplus(points, k, rng, p_sq):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dist_fast(points, centers[:1], p_sq)[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            raise ComputationError("k-means++ seeding ran out of distinct points")
        idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
        idx = min(idx, n - 1)
        # never pick a point that already coincides with a centre
        while closest[idx] <= 0.0:
            idx = (idx + 1) % n
        centers[c] = points[idx]
        closest = np.minimum(closest, _sq_dist_fast(points, centers[c: c + 1], p_sq)[:, 0])
    return centers


def _lloyd(points, centers, max_iter, tol, p_sq):
    k = centers.shape[0]
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = _sq_dist_fast(points, centers, p_sq)
        labels = np.argmin(d, axis=1)
        dmin = d[np.arange(points.shape[0]), labels]
        trace.append(float(dmin.sum()))
        counts = np.bincount(labels, minlength=k)
        new = np.zeros_like(centers)
        np.add.at(new, labels, points)
        empty = np.flatnonzero(counts == 0)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        # empty cluster: re-seed at the point farthest from its current centre
        taken = set()
        for c in empty:
            order = np.argsort(-dmin, kind="stable")
            pick = next(int(i) for i in order if int(i) not in taken)
            taken.add(pick)
            new[c] = points[pick]
            dmin[pick] = 0.0
        shift = float(np.sum((new - centers) ** 2))
        centers = new
        if empty.size == 0 and shift <= tol:
            break
    return centers, n_iter, trace


def _hartigan(points, labels, k, max_pass=20):
    """Single-point transfers that strictly lower the inertia (Hartigan's rule).

    A point leaves cell ``a`` for ``b`` when ``n_b/(n_b+1)*d_b < n_a/(n_a-1)*d_a``.
    Every Hartigan-stable partition is also Lloyd-stable, but not conversely, so
    this escapes some local optima Lloyd iterations stop at.  Passes are capped
    because structureless data can keep trading points for a long time.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    centers = sums / np.maximum(counts, 1.0)[:, None]
    for _ in range(max_pass):
        # screen all points at once, then re-check candidates one by one
        d = _sq_dist_exact(points, centers)
        stay = d[np.arange(points.shape[0]), labels]
        n_own = counts[labels]
        leave = np.full_like(stay, -np.inf)
        big = n_own > 1
        leave[big] = n_own[big] / (n_own[big] - 1.0) * stay[big]
        join = counts / (counts + 1.0) * d
        join[np.arange(points.shape[0]), labels] = np.inf
        candidates = np.flatnonzero(join.min(axis=1) < leave * (1.0 - 1e-12))
        moved = False
        for i in candidates:
            a = labels[i]
            if counts[a] <= 1:
                continue
            diff = centers - points[i]
            di = np.einsum("ij,ij->i", diff, diff)
            gain = counts / (counts + 1.0) * di
            gain[a] = np.inf
            b = int(np.argmin(gain))
            if gain[b] < counts[a] / (counts[a] - 1.0) * di[a] * (1.0 - 1e-12):
                sums[a] -= points[i]
                sums[b] += points[i]
                counts[a] -= 1.0
                counts[b] += 1.0
                centers[a] = sums[a] / counts[a]
                centers[b] = sums[b] / counts[b]
                labels[i] = b
                moved = True
        if not moved:
            break
    return centers


def kmeans(points, k: int, seed: int = 0, n_restarts: int = 10, max_iter: int = 300,
           tol: float = 1e-10) -> ClusteringResult:
    """Cluster ``points`` (one row per point) into ``k`` cells.

    Each restart draws k-means++ seeds from its own child of ``seed``, runs
    Lloyd iterations until the summed squared centroid shift falls to ``tol`` or
    ``max_iter`` is reached, then applies Hartigan single-point transfers.  The restart with the smallest inertia wins, ties
    going to the earlier restart, so the result does not depend on how restarts
    are scheduled.  Final labels use exact differences so that :func:`assign`
    reproduces them.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if not np.all(np.isfinite(points)):
        raise DataError("points must be finite")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    n_distinct = np.unique(points, axis=0).shape[0] if points.shape[0] else 0
    if k > n_distinct:
        if n_distinct == 1:
            raise ComputationError(f"all points are identical; cannot split them into {k} clusters")
        raise ComputationError(f"k={k} exceeds the number of distinct points ({n_distinct})")

    # centring keeps the squared-distance expansion accurate for tightly packed points
    offset = points.mean(axis=0)
    points = points - offset
    p_sq = np.einsum("ij,ij->i", points, points)
    children = np.random.SeedSequence(seed).spawn(n_restarts)
    best = None
    for r, child in enumerate(children):
        rng = np.random.default_rng(child)
        centers = _kmeans_plusplus(points, k, rng, p_sq)
        centers, n_iter, trace = _lloyd(points, centers, max_iter, tol, p_sq)
        centers = _hartigan(points, np.argmin(_sq_dist_exact(points, centers), axis=1), k)
        d = _sq_dist_exact(points, centers)
        labels = np.argmin(d, axis=1)
        inertia = float(d[np.arange(points.shape[0]), labels].sum())
        if best is None or inertia < best.inertia:
            best = ClusteringResult(labels, centers, inertia, n_restarts, seed, n_iter, trace)
    best.centroids = best.centroids + offset
    return best


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Hubert-Arabie adjusted Rand index computed from the contingency table."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.size != b.size:
        raise DataError(f"label arrays differ in length ({a.size} vs {b.size})")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max(initial=-1) + 1, bi.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    sum_cells = sum(comb(int(v), 2) for v in table.ravel())
    sum_rows = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_cols = sum(comb(int(v), 2) for v in table.sum(axis=0))
    total = comb(n, 2)
    if total == 0:
        return 1.0
    expected = sum_rows * sum_cols / total
    max_index = (sum_rows + sum_cols) / 2
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
