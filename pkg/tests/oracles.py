"""Slow, obviously-correct reference implementations used only by the tests."""

import itertools

import numpy as np


def best_partition_inertia(points, k):
    """Exhaustive minimum of the k-means objective over all partitions into k non-empty cells."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    best = np.inf
    for labels in itertools.product(range(k), repeat=n):
        if labels[0] != 0 or len(set(labels)) != k:
            continue
        lab = np.array(labels)
        total = 0.0
        for c in range(k):
            members = points[lab == c]
            total += float(((members - members.mean(axis=0)) ** 2).sum())
        best = min(best, total)
    return best


def pair_count_ari(a, b):
    """Adjusted Rand index by enumerating every pair of items."""
    n = len(a)
    both = only_a = only_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            sa, sb = a[i] == a[j], b[i] == b[j]
            both += sa and sb
            only_a += sa and not sb
            only_b += sb and not sa
    pairs = n * (n - 1) / 2
    same_a, same_b = both + only_a, both + only_b
    expected = same_a * same_b / pairs
    top = (same_a + same_b) / 2
    if top == expected:
        return 1.0
    return (both - expected) / (top - expected)


def knn_sorted(Y, w_labels, k, n_cells):
    """k-th neighbour distance by sorting every candidate distance."""
    Y = np.asarray(Y, dtype=float)
    out = np.empty((len(Y), n_cells))
    for i in range(len(Y)):
        for w in range(n_cells):
            dists = sorted(
                float(np.sqrt(((Y[i] - Y[j]) ** 2).sum()))
                for j in range(len(Y)) if w_labels[j] == w and j != i
            )
            out[i, w] = dists[k - 1]
    return out


def hand_precision(t_labels, anomalies, theta):
    best = 0.0
    for c in sorted(set(t_labels)):
        members = [a for t, a in zip(t_labels, anomalies) if t == c]
        hits = sum(1 for a in members if (a > theta if theta > 0 else a < theta))
        best = max(best, hits / len(members))
    return best


def brute_manipulation(vectors, t_labels, a, b):
    src = [v for v, t in zip(vectors, t_labels) if t == a]
    dst = [v for v, t in zip(vectors, t_labels) if t == b]
    diffs = []
    for v in src:
        dists = [float(((u - v) ** 2).sum()) for u in dst]
        diffs.append(dst[int(np.argmin(dists))] - v)
    return np.mean(diffs, axis=0)
