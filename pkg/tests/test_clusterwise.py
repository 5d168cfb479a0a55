from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from toporfm.cluster import Clustering
from toporfm.clusterwise import (
    FeatureRecipe,
    assign_and_forecast,
    assign_labels,
    assignments_to_csv,
    clusterwise_fit,
    min_cluster_size,
    score_series_under_cluster,
    series_feature_matrix,
    train_label_classifier,
)
from toporfm.errors import DataError, DegenerateLabels, ShapeError
from toporfm.forecast import (
    TRMFHyper,
    theta_forecast_matrix,
    trmf_fit,
    trmf_fit_loadings,
    trmf_forecast,
)
from toporfm.series import SeriesMatrix
from toporfm.synth import two_regime

SMALL = TRMFHyper(d=1, p=1, lam_f=0.01, lam_z=0.01, lam_phi=0.01)


def balanced_random_labels(seed, n_per=20):
    return Clustering(np.random.default_rng(seed).permutation(np.repeat([0, 1], n_per)), 2)


@pytest.fixture(scope="module")
def regime_runs():
    runs = []
    for seed in range(10):
        data = two_regime(seed=seed, n_holdout_per_regime=10)
        model = clusterwise_fit(data.train, balanced_random_labels(seed), "trmf", SMALL, seed=seed)
        runs.append((data, model))
    return runs


# ---------------------------------------------------------------- fitting

def test_two_regime_recovery(regime_runs):
    scores = [adjusted_rand_score(d.train_truth, m.partition.labels) for d, m in regime_runs]
    assert np.median(scores) >= 0.9


def test_traces_non_increasing_and_bounded(regime_runs):
    for _, m in regime_runs:
        assert np.all(np.diff(m.objective_trace) <= 1e-9)
        assert len(m.moves_per_round) <= 10
        assert m.stop_reason in {"converged", "tol", "no_improvement", "max_rounds"}
        assert np.all(np.bincount(m.partition.labels, minlength=m.k) > 0)


def test_truth_init_moves_nothing():
    data = two_regime(seed=3)
    m = clusterwise_fit(data.train, Clustering(data.train_truth, 2), "trmf", SMALL, seed=3)
    assert m.moves_per_round[0] == 0
    np.testing.assert_array_equal(m.partition.labels, data.train_truth)


def test_single_cluster_is_global_fit():
    data = two_regime(seed=1)
    Y = data.train
    m = clusterwise_fit(Y, Clustering(np.zeros(Y.n, int), 1), "trmf", SMALL, seed=4)
    g = trmf_fit(Y, SMALL, seed=4)
    F = trmf_fit_loadings(g, Y.values, Y.observed)
    resid = np.where(Y.observed, Y.values - g.Z @ F, 0.0)
    assert m.objective_trace[-1] == pytest.approx((resid ** 2).sum(), rel=1e-9)


def test_per_series_error_is_own_cluster_score(regime_runs):
    data, m = regime_runs[0]
    for j in range(0, data.train.n, 5):
        own = score_series_under_cluster(m, int(m.partition.labels[j]), data.train.values[:, j])
        assert own == pytest.approx(m.per_series_error[j], abs=1e-9)


def test_veto_keeps_clusters_populated():
    data = two_regime(seed=0)
    # a cluster at the minimum size cannot give members away
    labels = np.zeros(data.train.n, int)
    labels[:2] = 1
    m = clusterwise_fit(data.train, Clustering(labels, 2), "trmf", SMALL, seed=0)
    assert np.all(np.bincount(m.partition.labels) >= min_cluster_size("trmf", SMALL))


def test_determinism():
    data = two_regime(seed=5)
    a = clusterwise_fit(data.train, balanced_random_labels(5), "trmf", SMALL, seed=5)
    b = clusterwise_fit(data.train, balanced_random_labels(5), "trmf", SMALL, seed=5)
    np.testing.assert_array_equal(a.partition.labels, b.partition.labels)
    assert a.objective_trace == b.objective_trace


def test_theta_relabeling_is_inert():
    data = two_regime(seed=2)
    init = balanced_random_labels(2)
    m = clusterwise_fit(data.train, init, "theta", seed=2)
    np.testing.assert_array_equal(m.partition.labels, init.labels)
    assert sum(m.moves_per_round) == 0


def test_min_cluster_size():
    assert min_cluster_size("trmf", TRMFHyper(d=8)) == 8
    assert min_cluster_size("trmf", TRMFHyper(d=1)) == 2


# ---------------------------------------------------------------- scoring

def tiny_ridge_model(seed=0):
    data = two_regime(seed=seed)
    hyper = TRMFHyper(d=2, p=1, lam_f=1e-9, lam_z=0.01, lam_phi=0.01)
    return data, clusterwise_fit(data.train, Clustering(data.train_truth, 2), "trmf", hyper, seed=seed)


def test_span_member_scores_zero():
    _, m = tiny_ridge_model()
    Z = m.per_cluster_models[1].Z
    assert score_series_under_cluster(m, 1, Z @ np.array([1.5, -0.5])) < 1e-6


def test_orthogonal_series_scores_its_norm():
    _, m = tiny_ridge_model()
    Z = m.per_cluster_models[0].Z
    y = np.random.default_rng(0).normal(size=Z.shape[0])
    y -= Z @ np.linalg.lstsq(Z, y, rcond=None)[0]
    expected = np.linalg.norm(y) / np.sqrt(len(y))
    assert score_series_under_cluster(m, 0, y) == pytest.approx(expected, rel=1e-9)


# ---------------------------------------------------------------- classifier

def test_separable_features_fit_exactly():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 3))
    y = (X[:, 0] > 0).astype(int)
    clf = train_label_classifier(X, Clustering(y, 2), rounds=50, seed=0)
    assert clf.training_accuracy == 1.0
    np.testing.assert_array_equal(clf.predict(X), y)


def test_constant_features_predict_majority():
    X = np.ones((20, 4))
    y = np.array([0] * 12 + [1] * 8)
    clf = train_label_classifier(X, Clustering(y, 2), rounds=20)
    assert set(clf.predict(np.random.default_rng(1).normal(size=(5, 4)))) == {0}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_training_accuracy_beats_majority(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = rng.integers(0, k, 30)
    y[:k] = np.arange(k)
    clf = train_label_classifier(X, Clustering(y, k), rounds=20, seed=seed)
    majority = np.bincount(y).max() / len(y)
    assert clf.training_accuracy >= majority - 1e-12
    assert set(clf.predict(X)) <= set(range(k))
    assert np.all(np.isfinite(clf.decision_function(X)))


def test_classifier_errors():
    with pytest.raises(DegenerateLabels):
        train_label_classifier(np.ones((12, 2)), Clustering(np.zeros(12, int), 1))
    with pytest.raises(DataError):
        train_label_classifier(np.ones((5, 2)), Clustering(np.array([0, 1, 0, 1, 0]), 2))


def test_feature_recipe_shape_and_stability():
    data = two_regime(seed=0)
    recipe = FeatureRecipe().fit(data.train)
    X = series_feature_matrix(data.train, recipe)
    assert X.shape == (data.train.n, len(recipe.names)) and np.all(np.isfinite(X))
    # a series' features do not depend on the rest of the batch
    np.testing.assert_allclose(recipe.transform(data.train.columns([3]))[0], X[3], rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- assignment

@pytest.fixture(scope="module")
def trained(regime_runs):
    out = []
    for seed, (data, m) in enumerate(regime_runs):
        recipe = FeatureRecipe().fit(data.train)
        clf = train_label_classifier(recipe.transform(data.train), m.partition, rounds=100,
                                     seed=seed, recipe=recipe)
        out.append((data, m, clf))
    return out


def test_holdout_assignment_accuracy(trained):
    accs = []
    for data, m, clf in trained:
        labels, _ = assign_labels(m, clf, data.holdout)
        # each generator regime maps to the cluster holding most of its training series
        to_cluster = [np.bincount(m.partition.labels[data.train_truth == g]).argmax() for g in (0, 1)]
        accs.append(np.mean(labels == np.array(to_cluster)[data.holdout_truth]))
    assert np.median(accs) >= 0.9


def test_duplicates_get_training_labels(trained):
    agree = []
    for data, m, clf in trained:
        labels, _ = assign_labels(m, clf, data.train)
        agree.append(np.mean(labels == m.partition.labels))
    assert np.mean(agree) >= 0.95


def test_zero_horizon(trained):
    data, m, clf = trained[0]
    labels, fc = assign_and_forecast(m, clf, data.holdout, 0)
    assert len(labels) == data.holdout.n and fc.shape == (0, data.holdout.n)


def test_single_cluster_forecasts_equal_global_backend():
    data = two_regime(seed=6, n_holdout_per_regime=5)
    Y, new = data.train, data.holdout
    ones = Clustering(np.zeros(Y.n, int), 1)
    m = clusterwise_fit(Y, ones, "trmf", SMALL, seed=2)
    labels, fc = assign_and_forecast(m, None, new, 7)
    assert not labels.any()
    g = trmf_fit(Y, SMALL, seed=2)
    np.testing.assert_allclose(fc, trmf_forecast(g, 7, trmf_fit_loadings(g, new.values, new.observed)),
                               atol=1e-9, rtol=0)
    th = clusterwise_fit(Y, ones, "theta")
    _, fc_theta = assign_and_forecast(th, None, new, 7)
    np.testing.assert_allclose(fc_theta, theta_forecast_matrix(new.values, 7), atol=1e-9, rtol=0)


def test_assignment_csv():
    text = assignments_to_csv(["a", "b"], np.array([1, 0]), np.array([0.9, 0.6]))
    assert text.splitlines() == ["user_id,predicted_label,score", "a,1,0.9", "b,0,0.6"]


def test_chain_is_deterministic():
    data = two_regime(seed=8, n_holdout_per_regime=4)
    outs = []
    for _ in range(2):
        m = clusterwise_fit(data.train, balanced_random_labels(8), "trmf", SMALL, seed=8)
        recipe = FeatureRecipe().fit(data.train)
        clf = train_label_classifier(recipe.transform(data.train), m.partition, rounds=30,
                                     seed=8, recipe=recipe)
        outs.append(assign_and_forecast(m, clf, data.holdout, 5))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    np.testing.assert_array_equal(outs[0][1], outs[1][1])


def test_series_matrix_shape_checks():
    with pytest.raises(ShapeError):
        SeriesMatrix(np.ones((3, 2)), np.ones((2, 2), bool))
