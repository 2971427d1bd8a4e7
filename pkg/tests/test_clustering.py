import numpy as np
import pytest

from cgmsfem import clustering as cl
from cgmsfem.grid import build_grids, neighborhood
from cgmsfem.localreduce import ReducedCoefficients
from tests.conftest import random_positive_ensemble


def test_features_flatten_reduced_coefficients():
    coeffs = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
    ft = cl.build_features(ReducedCoefficients(0, coeffs))
    assert ft.rows.shape == (2, 12)
    # hand-rolled double loop over (j, l) reproduces the row distance
    acc = 0.0
    for j in range(3):
        for l in range(4):
            acc += (coeffs[0, j, l] - coeffs[1, j, l]) ** 2
    d = np.linalg.norm(ft.rows[0] - ft.rows[1])
    assert abs(d - np.sqrt(acc)) < 1e-14


def test_distance_metric_axioms():
    rng = np.random.default_rng(0)
    ft = cl.FeatureTable(0, rng.standard_normal((12, 5)))
    D = cl.distance_matrix(ft)
    assert np.allclose(D.diagonal(), 0.0)
    assert np.allclose(D, D.T)
    for a in range(12):
        for b in range(12):
            for c in range(12):
                assert D[a, c] <= D[a, b] + D[b, c] + 1e-12


def test_kmeans_single_cluster():
    res = cl.kmeans(np.random.default_rng(1).normal(size=(7, 3)), 1)
    assert np.all(res.labels == 0)
    assert res.J == 1


def test_kmeans_two_well_separated_groups():
    rows = np.array([[0.0], [0.1], [10.0], [10.1]])
    res = cl.kmeans(rows, 2, seed=0)
    assert res.labels[0] == res.labels[1]
    assert res.labels[2] == res.labels[3]
    assert res.labels[0] != res.labels[2]
    # exhaustive check: this is the optimal 2-partition
    best = None
    for mask in range(1, 7):
        sel = np.array([(mask >> i) & 1 for i in range(4)], dtype=bool)
        if sel.all() or not sel.any():
            continue
        obj = 0.0
        for part in (rows[sel], rows[~sel]):
            obj += ((part - part.mean(axis=0)) ** 2).sum()
        best = obj if best is None else min(best, obj)
    assert abs(res.objective - best) < 1e-12


def test_kmeans_objective_trace_monotone():
    rng = np.random.default_rng(2)
    rows = rng.normal(size=(60, 4))
    res = cl.kmeans(rows, 5, seed=3)
    trace = np.array(res.objective_trace)
    assert np.all(np.diff(trace) <= 1e-10)


def test_kmeans_objective_matches_recomputation():
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(40, 3))
    res = cl.kmeans(rows, 4, seed=5)
    obj = 0.0
    for j in range(res.J):
        members = rows[res.labels == j]
        obj += ((members - members.mean(axis=0)) ** 2).sum()
    assert abs(obj - res.objective) < 1e-9


def test_kmeans_deterministic():
    rows = np.random.default_rng(4).normal(size=(30, 6))
    a = cl.kmeans(rows, 3, seed=7)
    b = cl.kmeans(rows, 3, seed=7)
    assert np.array_equal(a.labels, b.labels)
    assert a.objective == b.objective


def test_kmeans_reduces_J_on_duplicates():
    rows = np.array([[0.0], [0.0], [1.0]])
    with pytest.warns(UserWarning, match="distinct"):
        res = cl.kmeans(rows, 3)
    assert res.J == 2


def test_kmeans_never_leaves_empty_clusters():
    rng = np.random.default_rng(5)
    for trial in range(50):
        n = int(rng.integers(5, 40))
        d = int(rng.integers(1, 5))
        rows = rng.normal(size=(n, d)) * rng.uniform(0.1, 10)
        J = int(rng.integers(1, min(n, 8) + 1))
        res = cl.kmeans(rows, J, seed=trial)
        counts = np.bincount(res.labels, minlength=res.J)
        assert np.all(counts > 0)


def test_kmeans_singletons_at_J_equals_M():
    rows = np.random.default_rng(6).normal(size=(6, 3))
    res = cl.kmeans(rows, 6, seed=1)
    assert sorted(np.bincount(res.labels).tolist()) == [1] * 6


def test_kmeans_validates_J():
    rows = np.zeros((4, 2))
    with pytest.raises(ValueError):
        cl.kmeans(rows, 0)
    with pytest.raises(ValueError):
        cl.kmeans(rows, 5)


def test_cluster_mean_field_values():
    fine, cg = build_grids(8, 8, 2, 2)
    nb = neighborhood(cg, 0)
    vals = np.ones((2, fine.n_cells))
    vals[1] = 3.0
    from cgmsfem.fields import PermeabilityEnsemble

    ens = PermeabilityEnsemble.with_uniform_weights(fine, vals)
    means = cl.cluster_mean_field(ens, np.array([0, 0]), nb.region, 1)
    assert np.allclose(means[0], 2.0)
    # singleton cluster reproduces the member exactly
    means2 = cl.cluster_mean_field(ens, np.array([0, 1]), nb.region, 2)
    assert np.array_equal(means2[0], ens.restrict(0, nb.region))
    assert np.array_equal(means2[1], ens.restrict(1, nb.region))
    assert np.all(means > 0) and np.all(means2 > 0)


def test_partition_requires_nonempty_clusters():
    fine, cg = build_grids(8, 8, 2, 2)
    nb = neighborhood(cg, 0)
    ens = random_positive_ensemble(fine, 3, seed=7)
    with pytest.raises(ValueError):
        cl.partition_realizations(nb, ens, np.array([0, 0, 0]), 2)


def test_label_permutation_leaves_mean_set_invariant():
    fine, cg = build_grids(8, 8, 2, 2)
    nb = neighborhood(cg, 0)
    ens = random_positive_ensemble(fine, 6, seed=8)
    labels = np.array([0, 1, 2, 0, 1, 2])
    part_a = cl.partition_realizations(nb, ens, labels, 3)
    perm = np.array([2, 0, 1])  # relabel clusters
    part_b = cl.partition_realizations(nb, ens, perm[labels], 3)
    set_a = {part_a.mean_fields[j].tobytes() for j in range(3)}
    set_b = {part_b.mean_fields[j].tobytes() for j in range(3)}
    assert set_a == set_b
    assert np.allclose(sorted(part_a.weight_mass), sorted(part_b.weight_mass))
