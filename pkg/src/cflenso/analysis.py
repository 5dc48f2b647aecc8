"""Evaluation of learned macro-variables.

Precision of a partition of SST maps against the Niño 3.4 anomaly, minimal
state-to-state manipulation maps, the reshuffle sanity check, plain k-means
baselines, sweeps over the number of states and subset chains across a sweep.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .cfl import EXPECTATION_TOL, ConditionalTable, MacroAssignment, cfl_pipeline, conditional_table, derive_seed
from .clustering import kmeans
from .errors import CflError, DataError
from .regression import RegressorConfig

log = logging.getLogger(__name__)

MILD, STRONG = 0.5, 1.5
THRESHOLDS = (MILD, STRONG, -MILD, -STRONG)
PRECISION_FIELDS = ("mild_elnino", "strong_elnino", "mild_lanina", "strong_lanina")
METHODS = ("cfl", "sst_kmeans", "joint_kmeans", "cfl_reshuffled")

# stage keys for derive_seed
_SEED_CFL, _SEED_SST, _SEED_JOINT, _SEED_SHUFFLE = 10, 11, 12, 13


@dataclass
class PrecisionReport:
    """Best per-cell exceedance fractions for the four anomaly thresholds.

    ``fractions[theta]`` holds ``c_theta`` for every cell in ``cells``;
    ``argmax[name]`` is the cell attaining each maximum (lowest id on ties).
    """

    mild_elnino: float
    strong_elnino: float
    mild_lanina: float
    strong_lanina: float
    argmax: dict[str, int]
    cells: np.ndarray
    cell_sizes: np.ndarray
    fractions: dict[float, np.ndarray] = field(repr=False, default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in PRECISION_FIELDS}

    def to_dict(self) -> dict:
        return {
            **self.as_dict(),
            "argmax": {k: int(v) for k, v in self.argmax.items()},
            "cells": self.cells.tolist(),
            "cell_sizes": self.cell_sizes.tolist(),
            "fractions": {repr(t): v.tolist() for t, v in self.fractions.items()},
        }


def exceedance_fraction(anomalies: np.ndarray, theta: float) -> float:
    if theta > 0:
        return float(np.mean(anomalies > theta))
    return float(np.mean(anomalies < theta))


def precision(t_labels, anomalies, thresholds=THRESHOLDS, n_cells: int | None = None) -> PrecisionReport:
    """Fraction of each cell's members beyond each threshold, maximized over cells.

    Positive thresholds count anomalies strictly above, negative ones strictly
    below.  Cells with no members (possible when ``n_cells`` is given) are
    skipped with a warning.
    """
    labels = np.asarray(t_labels, dtype=np.int64)
    anomalies = np.asarray(anomalies, dtype=np.float64)
    if labels.shape != anomalies.shape:
        raise DataError(f"{labels.size} labels for {anomalies.size} anomalies")
    if len(thresholds) != 4:
        raise DataError("expected (mild +, strong +, mild -, strong -) thresholds")
    n_cells = int(labels.max()) + 1 if n_cells is None else n_cells
    sizes_all = np.bincount(labels, minlength=n_cells)
    cells = np.flatnonzero(sizes_all > 0)
    if cells.size < n_cells:
        warnings.warn(f"empty cells excluded from precision: {np.flatnonzero(sizes_all == 0).tolist()}",
                      stacklevel=2)
    fractions = {}
    for theta in thresholds:
        hit = anomalies > theta if theta > 0 else anomalies < theta
        fractions[theta] = np.bincount(labels, weights=hit, minlength=n_cells)[cells] / sizes_all[cells]
    values, argmax = {}, {}
    for name, theta in zip(PRECISION_FIELDS, thresholds):
        j = int(np.argmax(fractions[theta]))
        values[name] = float(fractions[theta][j])
        argmax[name] = int(cells[j])
    return PrecisionReport(**values, argmax=argmax, cells=cells, cell_sizes=sizes_all[cells],
                           fractions=fractions)


@dataclass
class ManipulationMap:
    from_cell: int
    to_cell: int
    field: np.ndarray
    count: int


def nearest_indices(queries: np.ndarray, refs: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Row index in ``refs`` closest to every query row; ties go to the lowest index."""
    centre = refs.mean(axis=0)
    q = queries - centre
    r = refs - centre
    r_sq = np.einsum("ij,ij->i", r, r)
    out = np.empty(q.shape[0], dtype=np.int64)
    for s in range(0, q.shape[0], chunk):
        qc = q[s: s + chunk]
        d = np.einsum("ij,ij->i", qc, qc)[:, None] - 2.0 * qc @ r.T + r_sq[None, :]
        out[s: s + chunk] = np.argmin(d, axis=1)
    return out


def minimal_manipulation(sst_vectors, t_labels, from_cell: int, to_cell: int,
                         grid_shape: tuple[int, ...] | None = None) -> ManipulationMap:
    """Average change that carries members of ``from_cell`` to their nearest
    member of ``to_cell``.  The same-cell map is the zero field."""
    Y = np.asarray(sst_vectors, dtype=np.float64)
    labels = np.asarray(t_labels, dtype=np.int64)
    src = np.flatnonzero(labels == from_cell)
    dst = np.flatnonzero(labels == to_cell)
    if src.size == 0 or dst.size == 0:
        empty = from_cell if src.size == 0 else to_cell
        raise DataError(f"cell {empty} has no members")
    shape = grid_shape or (Y.shape[1],)
    if from_cell == to_cell:
        return ManipulationMap(from_cell, to_cell, np.zeros(shape), int(src.size))
    nn = dst[nearest_indices(Y[src], Y[dst])]
    diff = (Y[nn] - Y[src]).mean(axis=0)
    return ManipulationMap(from_cell, to_cell, diff.reshape(shape), int(src.size))


def state_mean_differences(vectors, labels, n_states: int, grid_shape=None) -> np.ndarray:
    """Per-state mean minus the overall mean, reshaped onto the grid."""
    V = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    overall = V.mean(axis=0)
    shape = grid_shape or (V.shape[1],)
    out = np.full((n_states, *shape), np.nan)
    for s in range(n_states):
        m = labels == s
        if m.any():
            out[s] = (V[m].mean(axis=0) - overall).reshape(shape)
    return out


@dataclass
class ReshuffleTrial:
    table: ConditionalTable
    max_row_tv: float
    n_effective_w: int
    n_w: int
    precision: PrecisionReport | None
    assignment: MacroAssignment = field(repr=False)


@dataclass
class ReshuffleResult:
    trials: list[ReshuffleTrial]

    @property
    def max_row_tv(self) -> float:
        return max(t.max_row_tv for t in self.trials)

    @property
    def mean_table(self) -> np.ndarray:
        return np.mean([t.table.probs for t in self.trials], axis=0)


def reshuffle_test(data, kw: int = 4, kt: int = 4, seed: int = 0, n_trials: int = 5, knn_k: int = 3,
                   reg_cfg: RegressorConfig | None = None, tol_tv: float = 0.05, anomalies=None,
                   n_restarts: int = 10, tol_expectation: float = EXPECTATION_TOL) -> ReshuffleResult:
    """Run the pipeline on data whose outputs were permuted against the inputs.

    Each trial draws its own permutation.  Anomalies travel with the SST maps.
    ``max_row_tv`` is taken over the raw input-state rows of ``P(T | W)``.
    """
    if len(data) < 100:
        raise DataError(f"reshuffle test needs at least 100 samples, got {len(data)}")
    trials = []
    for trial in range(n_trials):
        perm = np.random.default_rng(derive_seed(seed, _SEED_SHUFFLE, trial)).permutation(len(data))
        shuffled = data.permuted_outputs(perm)
        a = cfl_pipeline(shuffled, kw, kt, knn_k, reg_cfg, derive_seed(seed, _SEED_CFL, trial), tol_tv,
                         n_restarts, tol_expectation=tol_expectation)
        table = conditional_table(a, effective=False)
        prec = None
        if anomalies is not None:
            prec = precision(a.t_labels, np.asarray(anomalies)[perm], n_cells=a.n_t)
        trials.append(ReshuffleTrial(table, table.max_row_tv(), a.n_effective_w, a.n_w, prec, a))
    return ReshuffleResult(trials)


def standardize_columns(V: np.ndarray) -> np.ndarray:
    sd = V.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return (V - V.mean(axis=0)) / sd


def baseline_precision(data, k: int, anomalies, mode: str = "sst_only", seed: int = 0,
                       n_restarts: int = 10) -> tuple[PrecisionReport, np.ndarray]:
    """k-means on SST maps alone (``sst_only``) or on z-scored, concatenated
    wind and SST maps (``joint``), scored with :func:`precision`.

    Returns the report and the cluster labels.
    """
    if mode == "sst_only":
        points = data.Y
    elif mode == "joint":
        points = np.hstack([standardize_columns(data.X), standardize_columns(data.Y)])
    else:
        raise DataError(f"unknown baseline mode {mode!r}")
    res = kmeans(points, k, seed=seed, n_restarts=n_restarts)
    return precision(res.labels, anomalies, n_cells=k), res.labels


@dataclass(frozen=True)
class SweepSettings:
    knn_k: int = 3
    reg_cfg: RegressorConfig = field(default_factory=RegressorConfig)
    tol_tv: float = 0.05
    n_restarts: int = 10
    seed: int = 0
    tol_expectation: float = EXPECTATION_TOL
    methods: tuple[str, ...] = METHODS


@dataclass
class SweepReport:
    k_values: list[int]
    reports: dict[tuple[int, str], PrecisionReport] = field(default_factory=dict)
    t_labels: dict[tuple[int, str], np.ndarray] = field(default_factory=dict, repr=False)
    failures: list[tuple[int, str, str]] = field(default_factory=list)

    def rows(self):
        """Tidy ``(K, method, metric, value)`` rows in sweep order."""
        for k in self.k_values:
            for method in METHODS:
                rep = self.reports.get((k, method))
                if rep is None:
                    continue
                for metric, value in rep.as_dict().items():
                    yield k, method, metric, value


def run_cfl(data, k_w: int, k_t: int, settings: SweepSettings) -> MacroAssignment:
    """The pipeline run used by both single runs and sweeps (seed derived per ``(k_w, k_t)``)."""
    return cfl_pipeline(data, k_w, k_t, settings.knn_k, settings.reg_cfg,
                        derive_seed(settings.seed, _SEED_CFL, k_w, k_t), settings.tol_tv, settings.n_restarts,
                        tol_expectation=settings.tol_expectation)


def k_sweep(data, k_range, anomalies, settings: SweepSettings = SweepSettings()) -> SweepReport:
    """Precision of every method for each ``K`` (used for both ``W`` and ``T``).

    A failing ``(K, method)`` job is recorded in ``failures`` and the sweep goes on.
    """
    ks = sorted(int(k) for k in k_range)
    if not ks:
        raise DataError("empty K range")
    if len(set(ks)) != len(ks):
        raise DataError("K values must be distinct")
    anomalies = np.asarray(anomalies, dtype=np.float64)
    report = SweepReport(ks)
    for k in ks:
        for method in settings.methods:
            try:
                if method == "cfl":
                    a = run_cfl(data, k, k, settings)
                    labels, n_cells = a.t_labels, a.n_t
                    rep = precision(labels, anomalies, n_cells=n_cells)
                elif method == "sst_kmeans":
                    rep, labels = baseline_precision(data, k, anomalies, "sst_only",
                                                     derive_seed(settings.seed, _SEED_SST, k), settings.n_restarts)
                elif method == "joint_kmeans":
                    rep, labels = baseline_precision(data, k, anomalies, "joint",
                                                     derive_seed(settings.seed, _SEED_JOINT, k), settings.n_restarts)
                elif method == "cfl_reshuffled":
                    res = reshuffle_test(data, k, k, derive_seed(settings.seed, _SEED_SHUFFLE, k), 1,
                                         settings.knn_k, settings.reg_cfg, settings.tol_tv, anomalies,
                                         settings.n_restarts, settings.tol_expectation)
                    rep, labels = res.trials[0].precision, res.trials[0].assignment.t_labels
                else:
                    raise DataError(f"unknown method {method!r}")
            except CflError as exc:
                log.warning("sweep K=%d method=%s failed: %s", k, method, exc)
                report.failures.append((k, method, str(exc)))
                continue
            report.reports[(k, method)] = rep
            report.t_labels[(k, method)] = labels
    return report


@dataclass
class ChainLink:
    k_small: int
    k_large: int
    elnino_containment: float
    lanina_containment: float


def _best_cell(labels, anomalies, theta):
    rep = precision(labels, anomalies)
    name = "mild_elnino" if theta > 0 else "mild_lanina"
    return labels == rep.argmax[name]


def subset_chain(labelings, anomalies, k_values=None) -> list[ChainLink]:
    """Containment of each K+1 best-precision cell in the K best-precision cell.

    ``labelings`` are T labelings of the same samples for increasing K; the
    fraction reported is ``|best(K+1) & best(K)| / |best(K+1)|`` for the mild
    El Niño and the mild La Niña cells.
    """
    anomalies = np.asarray(anomalies, dtype=np.float64)
    labelings = [np.asarray(l, dtype=np.int64) for l in labelings]
    k_values = list(k_values) if k_values is not None else [int(l.max()) + 1 for l in labelings]
    if len(k_values) != len(labelings):
        raise DataError("one K value per labeling required")
    links = []
    for i in range(len(labelings) - 1):
        small, large = labelings[i], labelings[i + 1]
        frac = []
        for theta in (MILD, -MILD):
            a = _best_cell(small, anomalies, theta)
            b = _best_cell(large, anomalies, theta)
            frac.append(float((a & b).sum() / b.sum()))
        links.append(ChainLink(k_values[i], k_values[i + 1], *frac))
    return links


def conditional_rows_tv(table: ConditionalTable) -> float:
    return table.max_row_tv()


def with_seed(settings: SweepSettings, seed: int) -> SweepSettings:
    return replace(settings, seed=seed)
