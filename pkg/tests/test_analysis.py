import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cflenso.analysis import (
    SweepSettings,
    baseline_precision,
    k_sweep,
    minimal_manipulation,
    nearest_indices,
    precision,
    reshuffle_test,
    run_cfl,
    state_mean_differences,
    subset_chain,
)
from cflenso.cfl import conditional_table, table_from_labels
from cflenso.errors import DataError
from cflenso.grid import anomaly_series, climatology
from cflenso.synthetic import enso_like_generate
from helpers import FAST_REG, small_enso
from oracles import brute_manipulation, hand_precision

FAST = SweepSettings(reg_cfg=FAST_REG, n_restarts=3)


def test_precision_hand_count():
    rep = precision([0, 0, 1, 1], [0.6, 1.6, -0.2, 0.1])
    np.testing.assert_array_equal(rep.fractions[0.5], [1.0, 0.0])
    assert rep.mild_elnino == 1.0 and rep.strong_elnino == 0.5
    assert rep.argmax["mild_elnino"] == 0


def test_precision_zero_anomalies():
    assert precision([0, 1, 2, 0], np.zeros(4)).as_dict() == dict.fromkeys(
        ["mild_elnino", "strong_elnino", "mild_lanina", "strong_lanina"], 0.0)


def test_precision_strict_thresholds():
    rep = precision([0, 0], [0.5, -1.5])
    assert rep.mild_elnino == 0.0 and rep.strong_lanina == 0.0 and rep.mild_lanina == 0.5


@pytest.mark.parametrize("seed", range(20))
def test_precision_matches_hand_oracle(seed):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(5, 60)), int(rng.integers(1, 6))
    labels = rng.integers(0, k, size=n)
    anomalies = np.round(rng.normal(scale=1.2, size=n), 1)
    rep = precision(labels, anomalies)
    for name, theta in [("mild_elnino", 0.5), ("strong_elnino", 1.5), ("mild_lanina", -0.5),
                        ("strong_lanina", -1.5)]:
        assert getattr(rep, name) == pytest.approx(hand_precision(labels, anomalies, theta), abs=1e-15)


def test_precision_empty_cell_warns():
    with pytest.warns(UserWarning, match="empty"):
        rep = precision([0, 0, 2], [1.0, 0.0, 1.0], n_cells=3)
    assert rep.cells.tolist() == [0, 2]
    with pytest.raises(DataError):
        precision([0, 1], [1.0])


@pytest.mark.filterwarnings("ignore:empty cells")
@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.floats(-3, 3)), min_size=2, max_size=60), st.integers(0, 99))
def test_precision_label_permutation_and_refinement(items, seed):
    labels = np.array([i[0] for i in items])
    anomalies = np.array([i[1] for i in items])
    base = precision(labels, anomalies).as_dict()
    perm = np.random.default_rng(seed).permutation(4)
    assert precision(perm[labels], anomalies).as_dict() == base
    # splitting cell 0 by a coin flip cannot lower any maximum
    coin = np.random.default_rng(seed).integers(0, 2, size=labels.size)
    refined = np.where((labels == 0) & (coin == 1), 4, labels)
    finer = precision(refined, anomalies).as_dict()
    assert all(finer[k] >= base[k] for k in base)


def test_manipulation_conventions():
    Y = np.array([[0.0, 0.0], [1.0, 3.0], [5.0, 5.0]])
    labels = np.array([0, 1, 2])
    np.testing.assert_array_equal(minimal_manipulation(Y, labels, 1, 1).field, [0.0, 0.0])
    np.testing.assert_array_equal(minimal_manipulation(Y, labels, 0, 1).field, [1.0, 3.0])
    m = minimal_manipulation(Y, labels, 0, 2, grid_shape=(1, 2))
    assert m.field.shape == (1, 2) and m.count == 1
    with pytest.raises(DataError, match="cell 7"):
        minimal_manipulation(Y, labels, 0, 7)


def test_manipulation_three_vs_two():
    Y = np.array([[0.0], [1.0], [4.0], [2.0], [10.0]])
    labels = np.array([0, 0, 0, 1, 1])
    # nearest in {2, 10}: 0->2, 1->2, 4->2
    assert minimal_manipulation(Y, labels, 0, 1).field[0] == pytest.approx((2 + 1 - 2) / 3)


@pytest.mark.parametrize("seed", range(10))
def test_manipulation_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(30, 4))
    labels = rng.integers(0, 3, size=30)
    labels[:3] = [0, 1, 2]
    for a in range(3):
        for b in range(3):
            if a != b:
                np.testing.assert_allclose(minimal_manipulation(Y, labels, a, b).field,
                                           brute_manipulation(Y, labels, a, b), atol=1e-12)


def test_manipulation_shift_equivariance():
    rng = np.random.default_rng(1)
    Y = rng.normal(size=(40, 3))
    labels = np.repeat([0, 1], 20)
    c = np.array([0.3, -2.0, 5.0])
    shifted = Y.copy()
    shifted[labels == 1] += c
    # shift by a large constant changes nearest partners, so compare against the brute oracle
    a = minimal_manipulation(shifted, labels, 0, 1).field
    np.testing.assert_allclose(a, brute_manipulation(shifted, labels, 0, 1), atol=1e-12)
    # a shift of the source and target together leaves the map unchanged
    b = minimal_manipulation(Y + c, labels, 0, 1).field
    np.testing.assert_allclose(b, minimal_manipulation(Y, labels, 0, 1).field, atol=1e-12)


def test_manipulation_target_shift_adds_constant_when_partners_fixed():
    # well separated target points keep their partners under a small shift
    Y = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 0.5], [10.0, 0.5]])
    labels = np.array([0, 0, 1, 1])
    c = np.array([0.1, -0.05])
    shifted = Y.copy()
    shifted[labels == 1] += c
    base = minimal_manipulation(Y, labels, 0, 1).field
    np.testing.assert_allclose(minimal_manipulation(shifted, labels, 0, 1).field, base + c, atol=1e-12)


def test_nearest_ties_lowest_index():
    refs = np.array([[1.0], [-1.0], [1.0]])
    assert nearest_indices(np.array([[0.0]]), refs)[0] == 0


def test_state_mean_differences():
    V = np.array([[0.0, 2.0], [2.0, 2.0], [4.0, 8.0]])
    out = state_mean_differences(V, [0, 0, 1], 3)
    np.testing.assert_allclose(out[0], [-1.0, -2.0])
    np.testing.assert_allclose(out[1], [2.0, 4.0])
    assert np.isnan(out[2]).all()


def test_subset_chain_identity_and_nested():
    rng = np.random.default_rng(0)
    anomalies = rng.normal(size=400)
    labels = np.digitize(anomalies, [-1.0, 1.0])
    links = subset_chain([labels, labels], anomalies)
    assert links[0].elnino_containment == 1.0 and links[0].lanina_containment == 1.0
    # nested strengths: each finer partition splits the extreme cells further
    coarse = np.digitize(anomalies, [-0.3, 0.3])
    fine = np.digitize(anomalies, [-1.0, -0.3, 0.3, 1.0])
    links = subset_chain([coarse, fine], anomalies, [3, 5])
    assert links[0].elnino_containment >= 0.9 and links[0].lanina_containment >= 0.9


def test_subset_chain_random_labelings():
    rng = np.random.default_rng(1)
    n = 20_000
    anomalies = rng.normal(size=n)
    small, large = rng.integers(0, 4, n), rng.integers(0, 5, n)
    link = subset_chain([small, large], anomalies)[0]
    a = small == precision(small, anomalies).argmax["mild_elnino"]
    assert link.elnino_containment == pytest.approx(a.mean(), abs=0.03)


@pytest.fixture(scope="module")
def synthetic():
    syn = enso_like_generate(small_enso(seed=7))
    anomalies = anomaly_series(syn.sst, climatology(syn.sst))
    return syn, anomalies


def test_baseline_k1_is_global_rate(synthetic):
    syn, anomalies = synthetic
    rep, labels = baseline_precision(syn.data, 1, anomalies)
    assert rep.mild_elnino == pytest.approx(np.mean(anomalies > 0.5))
    assert rep.strong_lanina == pytest.approx(np.mean(anomalies < -1.5))
    assert set(labels) == {0}
    with pytest.raises(DataError):
        baseline_precision(syn.data, 2, anomalies, mode="pca")


def test_cfl_beats_sst_baseline(synthetic):
    syn, anomalies = synthetic
    a = run_cfl(syn.data, 4, 4, FAST)
    cfl = precision(a.t_labels, anomalies)
    base, _ = baseline_precision(syn.data, 4, anomalies, "sst_only", n_restarts=3)
    joint, _ = baseline_precision(syn.data, 4, anomalies, "joint", n_restarts=3)
    assert cfl.mild_elnino > base.mild_elnino
    assert cfl.mild_lanina > base.mild_lanina
    assert cfl.mild_elnino >= 0.9 and joint.mild_elnino <= 1.0


def test_reshuffle_negative_control():
    syn = enso_like_generate(small_enso(n_samples=10_000, seed=7))
    anomalies = anomaly_series(syn.sst, climatology(syn.sst))
    shuffled = reshuffle_test(syn.data, 4, 4, seed=0, n_trials=2, reg_cfg=FAST_REG, anomalies=anomalies,
                              n_restarts=3)
    assert shuffled.max_row_tv < 0.05
    assert all(t.n_effective_w == 1 for t in shuffled.trials)
    assert all(t.precision.mild_elnino < 0.4 for t in shuffled.trials)
    a = run_cfl(syn.data, 4, 4, FAST)
    assert conditional_table(a, effective=False).max_row_tv() > 0.5


def test_reshuffle_needs_data():
    syn = enso_like_generate(small_enso(n_samples=50))
    with pytest.raises(DataError, match="100"):
        reshuffle_test(syn.data)


def test_sweep_k4_matches_single_run(synthetic):
    syn, anomalies = synthetic
    sweep = k_sweep(syn.data, [4], anomalies, FAST)
    a = run_cfl(syn.data, 4, 4, FAST)
    assert sweep.reports[(4, "cfl")].as_dict() == precision(a.t_labels, anomalies, n_cells=4).as_dict()
    rows = list(sweep.rows())
    assert len(rows) == 4 * 4 and rows[0][:2] == (4, "cfl")
    assert all(r[3] < 0.4 for r in rows if r[1] == "cfl_reshuffled" and "mild" in r[2])


def test_sweep_records_failures(synthetic):
    syn, anomalies = synthetic
    sweep = k_sweep(syn.data, [2, 4000], anomalies,
                    SweepSettings(reg_cfg=FAST_REG, n_restarts=1, methods=("sst_kmeans",)))
    assert (2, "sst_kmeans") in sweep.reports
    assert sweep.failures and sweep.failures[0][:2] == (4000, "sst_kmeans")
    with pytest.raises(DataError):
        k_sweep(syn.data, [], anomalies)


def test_sweep_plateau_from_true_k(synthetic):
    syn, anomalies = synthetic
    sweep = k_sweep(syn.data, [2, 4, 8], anomalies, SweepSettings(reg_cfg=FAST_REG, n_restarts=3, methods=("cfl",)))
    mild = {k: sweep.reports[(k, "cfl")].mild_elnino for k in (2, 4, 8)}
    assert mild[4] >= 0.9 and abs(mild[8] - mild[4]) <= 0.05


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_row_tv_invariant_to_relabeling(seed):
    rng = np.random.default_rng(seed)
    w, t = rng.integers(0, 4, 200), rng.integers(0, 3, 200)
    pw, pt = rng.permutation(4), rng.permutation(3)
    a = table_from_labels(w, t, 4, 3).max_row_tv()
    b = table_from_labels(pw[w], pt[t], 4, 3).max_row_tv()
    assert a == pytest.approx(b, abs=1e-12)
