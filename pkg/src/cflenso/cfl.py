"""Causal feature learning: input and effect macro-variables from paired data.

The pipeline regresses outputs on inputs, clusters the fitted conditional
expectations into the input macro-variable ``W``, describes every output sample
by its k-th nearest neighbour distance inside each ``W`` cell's output set, and
clusters those descriptions into the effect macro-variable ``T``.  States whose
conditional rows (or columns) of ``P(T | W)`` are indistinguishable are then
merged into effective states.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import kmeans
from .errors import CellSizeError, ComputationError, DataError
from .regression import Regressor, RegressorConfig, fit_regressor

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# conditional expectations closer than this fraction of the output scale are
# indistinguishable (residue of a regressor decayed to a constant)
EXPECTATION_RESOLUTION = 1e-6
# input states whose expected outputs differ by less than this fraction of the
# output spread are treated as one state
EXPECTATION_TOL = 0.05
_QUERY_CHUNK = 1024


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for the stage identified by ``keys``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1)[0])


@dataclass
class KnnRepresentation:
    values: np.ndarray  # (n_samples, n_cells)
    k: int

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]


@dataclass
class MacroAssignment:
    """Per-sample macro-variable labels.

    ``w_labels``/``t_labels`` are the raw cluster labels; ``w_merge[w]`` and
    ``t_merge[t]`` map raw states onto effective states numbered ``0..m-1`` in
    order of their smallest raw member.
    """

    w_labels: np.ndarray
    t_labels: np.ndarray
    w_centroids: np.ndarray
    t_centroids: np.ndarray
    w_merge: np.ndarray | None = None
    t_merge: np.ndarray | None = None
    knn_k: int = 3
    seed: int = 0
    regressor: Regressor | None = field(default=None, repr=False)
    expectations: np.ndarray | None = field(default=None, repr=False)
    knn: KnnRepresentation | None = field(default=None, repr=False)

    def __post_init__(self):
        self.w_labels = np.asarray(self.w_labels, dtype=np.int64)
        self.t_labels = np.asarray(self.t_labels, dtype=np.int64)
        if self.w_labels.shape != self.t_labels.shape:
            raise DataError("w_labels and t_labels must have one entry per sample")
        if self.w_merge is None:
            self.w_merge = np.arange(self.n_w)
        if self.t_merge is None:
            self.t_merge = np.arange(self.n_t)
        self.w_merge = np.asarray(self.w_merge, dtype=np.int64)
        self.t_merge = np.asarray(self.t_merge, dtype=np.int64)
        for name, labels, n in (("w", self.w_labels, self.n_w), ("t", self.t_labels, self.n_t)):
            if labels.size and (labels.min() < 0 or labels.max() >= n):
                raise DataError(f"{name}_labels outside 0..{n - 1}")
        for name, m in (("w_merge", self.w_merge), ("t_merge", self.t_merge)):
            if m.size and not np.array_equal(np.unique(m), np.arange(m.max() + 1)):
                raise DataError(f"{name} is not a surjection onto a contiguous range")

    @property
    def n_w(self) -> int:
        return self.w_centroids.shape[0]

    @property
    def n_t(self) -> int:
        return self.t_centroids.shape[0]

    @property
    def n_effective_w(self) -> int:
        return int(self.w_merge.max()) + 1

    @property
    def n_effective_t(self) -> int:
        return int(self.t_merge.max()) + 1

    @property
    def w_effective(self) -> np.ndarray:
        return self.w_merge[self.w_labels]

    @property
    def t_effective(self) -> np.ndarray:
        return self.t_merge[self.t_labels]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "knn_k": self.knn_k,
            "seed": self.seed,
            "n_w": self.n_w,
            "n_t": self.n_t,
            "n_effective_w": self.n_effective_w,
            "n_effective_t": self.n_effective_t,
            "w_merge": self.w_merge.tolist(),
            "t_merge": self.t_merge.tolist(),
            "w_labels": self.w_labels.tolist(),
            "t_labels": self.t_labels.tolist(),
            "w_centroids": self.w_centroids.tolist(),
            "t_centroids": self.t_centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MacroAssignment":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported assignment schema {d.get('schema_version')}")
        return cls(
            np.asarray(d["w_labels"]), np.asarray(d["t_labels"]),
            np.asarray(d["w_centroids"], dtype=np.float64), np.asarray(d["t_centroids"], dtype=np.float64),
            np.asarray(d["w_merge"]), np.asarray(d["t_merge"]), d["knn_k"], d["seed"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class ConditionalTable:
    """Row-stochastic estimate of ``P(T | W)``; ``counts[w]`` samples back row ``w``."""

    probs: np.ndarray
    counts: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def max_row_tv(self) -> float:
        rows = self.probs[self.counts > 0]
        if rows.shape[0] < 2:
            return 0.0
        return float(max(total_variation(rows[i], rows[j])
                         for i in range(rows.shape[0]) for j in range(i + 1, rows.shape[0])))

    def marginal_t(self) -> np.ndarray:
        return (self.probs * self.counts[:, None]).sum(axis=0) / self.counts.sum()

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "probs": self.probs.tolist(),
                "counts": self.counts.tolist()}


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def knn_representation(Y, w_labels, k: int = 3, n_cells: int | None = None) -> KnnRepresentation:
    """Exact k-th nearest neighbour distance of every ``Y`` row within each cell.

    Entry ``(i, w)`` is the k-th smallest Euclidean distance from ``Y[i]`` to the
    rows labelled ``w``, leaving ``Y[i]`` itself out.  Every cell therefore needs
    at least ``k + 1`` members.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    w_labels = np.asarray(w_labels, dtype=np.int64)
    if w_labels.shape != (Y.shape[0],):
        raise DataError("one label per output sample required")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    n_cells = int(w_labels.max()) + 1 if n_cells is None else n_cells
    members = [np.flatnonzero(w_labels == w) for w in range(n_cells)]
    for w, m in enumerate(members):
        if m.size < k + 1:
            raise CellSizeError(w, m.size, k + 1, "reduce the number of input states or knn_k")

    # distances are translation invariant; centring limits cancellation in the expansion
    Yc = Y - Y.mean(axis=0)
    sq = np.einsum("ij,ij->i", Yc, Yc)
    n = Y.shape[0]
    out = np.empty((n, n_cells))
    for w, m in enumerate(members):
        ref, ref_sq = Yc[m], sq[m]
        pos = np.full(n, -1)
        pos[m] = np.arange(m.size)
        for s in range(0, n, _QUERY_CHUNK):
            q = slice(s, min(n, s + _QUERY_CHUNK))
            d = sq[q, None] - 2.0 * Yc[q] @ ref.T + ref_sq[None, :]
            np.maximum(d, 0.0, out=d)
            inside = np.flatnonzero(pos[q] >= 0)
            d[inside, pos[q][inside]] = np.inf
            out[q, w] = np.sqrt(np.partition(d, k - 1, axis=1)[:, k - 1])
    return KnnRepresentation(out, k)


def table_from_labels(w_labels, t_labels, n_w: int | None = None, n_t: int | None = None) -> ConditionalTable:
    w = np.asarray(w_labels, dtype=np.int64)
    t = np.asarray(t_labels, dtype=np.int64)
    n_w = int(w.max()) + 1 if n_w is None else n_w
    n_t = int(t.max()) + 1 if n_t is None else n_t
    joint = np.zeros((n_w, n_t), dtype=np.int64)
    np.add.at(joint, (w, t), 1)
    counts = joint.sum(axis=1)
    probs = np.zeros((n_w, n_t))
    nz = counts > 0
    probs[nz] = joint[nz] / counts[nz, None]
    return ConditionalTable(probs, counts)


def conditional_table(assignment: MacroAssignment, effective: bool = True) -> ConditionalTable:
    """Empirical ``P(T | W)``; rows and columns follow effective states unless
    ``effective`` is false."""
    if effective:
        return table_from_labels(assignment.w_effective, assignment.t_effective,
                                 assignment.n_effective_w, assignment.n_effective_t)
    return table_from_labels(assignment.w_labels, assignment.t_labels, assignment.n_w, assignment.n_t)


def _linkage_components(n: int, close) -> np.ndarray:
    """Connected components of the graph with an edge wherever ``close(i, j)``,
    numbered by smallest member."""
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if close(i, j):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = [find(i) for i in range(n)]
    ids: dict[int, int] = {}
    return np.array([ids.setdefault(r, len(ids)) for r in roots], dtype=np.int64)


def merge_effective_states(assignment: MacroAssignment, table: ConditionalTable | None = None,
                           tol_tv: float = 0.05, groups=None) -> MacroAssignment:
    """Merge raw states that ``P(T | W)`` cannot tell apart.

    Input states are linked when their rows lie within total-variation distance
    ``tol_tv`` or when ``groups`` (one id per input state) puts them together;
    effect states are linked when their columns of the table with merged input
    rows differ by at most ``tol_tv`` in every row.  Linked states are merged by
    single linkage.
    """
    table = table if table is not None else conditional_table(assignment, effective=False)
    probs, counts = table.probs, table.counts

    def rows_close(i, j):
        if groups is not None and groups[i] == groups[j]:
            return True
        return counts[i] > 0 and counts[j] > 0 and total_variation(probs[i], probs[j]) <= tol_tv

    w_merge = _linkage_components(probs.shape[0], rows_close)
    merged = table_from_labels(w_merge[assignment.w_labels], assignment.t_labels,
                               int(w_merge.max()) + 1, assignment.n_t)
    live = merged.probs[merged.counts > 0]

    def cols_close(a, b):
        return bool(np.max(np.abs(live[:, a] - live[:, b]), initial=0.0) <= tol_tv)

    t_merge = _linkage_components(probs.shape[1], cols_close)
    return replace(assignment, w_merge=w_merge, t_merge=t_merge)


def distinct_expectations(fx, Y, resolution: float = EXPECTATION_RESOLUTION) -> int:
    """Number of distinct rows of ``fx`` once values closer than ``resolution``
    times the output scale are treated as equal."""
    step = resolution * _output_scale(Y)
    q = np.round((fx - fx.mean(axis=0)) / step)
    return int(np.unique(q, axis=0).shape[0])


def _output_scale(Y) -> float:
    scale = float(np.sqrt(np.mean(np.var(np.asarray(Y, dtype=np.float64), axis=0))))
    return scale if scale > 0 else 1.0


def expectation_groups(centroids, Y, tol: float = EXPECTATION_TOL) -> np.ndarray:
    """Single-linkage groups of input centroids whose RMS difference is at most
    ``tol`` times the RMS spread of ``Y``."""
    c = np.asarray(centroids, dtype=np.float64)
    step = tol * _output_scale(Y)

    def close(i, j):
        return float(np.sqrt(np.mean((c[i] - c[j]) ** 2))) <= step

    return _linkage_components(c.shape[0], close)


def cfl_pipeline(data, kw: int = 4, kt: int = 4, knn_k: int = 3, reg_cfg: RegressorConfig | None = None,
                 seed: int = 0, tol_tv: float = 0.05, n_restarts: int = 10,
                 regressor: Regressor | None = None, tol_expectation: float = EXPECTATION_TOL) -> MacroAssignment:
    """Learn ``W`` and ``T`` from ``data`` (a :class:`~cflenso.grid.PairedDataset`).

    The regression, the ``W`` clustering and the ``T`` clustering each draw an
    independent seed derived from ``seed``; ``reg_cfg.seed`` is overridden.  A
    pre-fitted ``regressor`` skips the regression step.

    Input states whose centroids lie within ``tol_expectation`` (relative to the
    spread of ``Y``) share one output set when building the k-NN features and
    are reported as one effective state.
    """
    n = len(data)
    if n <= max(kw, kt):
        raise DataError(f"need more than max(kw, kt) = {max(kw, kt)} samples, got {n}")
    if knn_k < 1:
        raise DataError("knn_k must be >= 1")
    reg_cfg = replace(reg_cfg or RegressorConfig(), seed=derive_seed(seed, 0))
    f = regressor if regressor is not None else fit_regressor(data, reg_cfg)
    fx = f.predict(data.X)
    if not np.all(np.isfinite(fx)):
        raise ComputationError("regression produced non-finite predictions")

    n_w = min(kw, distinct_expectations(fx, data.Y))
    if n_w < kw:
        log.info("only %d distinct conditional expectation(s); using %d input states instead of %d",
                 n_w, n_w, kw)
    w_res = kmeans(fx, n_w, seed=derive_seed(seed, 1), n_restarts=n_restarts)
    groups = expectation_groups(w_res.centroids, data.Y, tol_expectation)
    try:
        g = knn_representation(data.Y, groups[w_res.labels], knn_k, n_cells=int(groups.max()) + 1)
    except CellSizeError as exc:
        raise CellSizeError(exc.cell, exc.size, exc.required,
                            "the output set of this input state is too small; use a smaller kw") from None
    t_res = kmeans(g.values, kt, seed=derive_seed(seed, 2), n_restarts=n_restarts)

    raw = MacroAssignment(w_res.labels, t_res.labels, w_res.centroids, t_res.centroids,
                          knn_k=knn_k, seed=seed, regressor=f, expectations=fx, knn=g)
    return merge_effective_states(raw, conditional_table(raw, effective=False), tol_tv, groups)
