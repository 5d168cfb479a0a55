from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toporfm.cluster import (
    Clustering,
    elbow_select,
    inertia_curve,
    kmeans,
    labels_to_csv,
    standardize,
    within_ss,
)
from toporfm.cluster import _lloyd
from toporfm.errors import CardinalityError


def blobs(seed, n_blobs=3, per=30, spread=0.3):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0], [8, 0], [4, 7], [-6, 6], [10, 10]])[:n_blobs]
    return np.concatenate([c + spread * rng.normal(size=(per, 2)) for c in centers])


def exhaustive_two_means(data):
    best = np.inf
    n = len(data)
    for mask in itertools.product([0, 1], repeat=n):
        labels = np.array(mask)
        if 0 < labels.sum() < n:
            best = min(best, within_ss(data, labels))
    return best


def test_k1_is_total_variance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(25, 3))
    cl = kmeans(X, 1)
    assert not cl.labels.any()
    np.testing.assert_allclose(cl.centers[0], X.mean(axis=0))
    assert cl.inertia == pytest.approx(X.var(axis=0).sum() * len(X), rel=1e-12)


def test_separated_pairs():
    X = np.array([[0, 0], [0.1, 0], [10, 0], [10.1, 0]])
    lab = kmeans(X, 2).labels
    assert lab[0] == lab[1] != lab[2] == lab[3]


@pytest.mark.parametrize("seed", range(20))
def test_six_points_reach_exhaustive_optimum(seed):
    X = np.random.default_rng(seed).normal(size=(6, 2))
    assert kmeans(X, 2, seed=seed).inertia == pytest.approx(exhaustive_two_means(X), abs=1e-12)


def test_errors():
    with pytest.raises(CardinalityError):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(CardinalityError):
        kmeans(np.zeros((3, 2)), 0)
    with pytest.raises(ValueError):
        Clustering(np.array([0, 2]), 2)


def test_from_labels_compacts():
    cl = Clustering.from_labels(["b", "a", "b", "z"])
    assert cl.k == 3 and cl.labels.tolist() == [0, 1, 0, 2]


def test_duplicate_points_keep_k():
    X = np.vstack([np.zeros((5, 2)), np.ones((1, 2))])
    cl = kmeans(X, 3)
    assert len(np.unique(cl.labels)) == 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_inertia_matches_labels_and_determinism(seed, k):
    X = np.random.default_rng(seed).normal(size=(30, 3))
    a, b = kmeans(X, k, seed=seed), kmeans(X, k, seed=seed)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.inertia == pytest.approx(within_ss(X, a.labels), rel=1e-9, abs=1e-9)
    assert np.all(a.labels < k)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_label_permutation_keeps_inertia(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 2))
    lab = kmeans(X, 4, seed=seed).labels
    perm = rng.permutation(4)
    assert within_ss(X, perm[lab]) == pytest.approx(within_ss(X, lab), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lloyd_trace_non_increasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 2))
    _, trace = _lloyd(X, 4, rng, 100, 1e-12)
    assert np.all(np.diff(trace) <= 1e-9)


def test_inertia_curve_monotone():
    curve = inertia_curve(blobs(1), range(1, 7), seed=1)
    assert np.all(np.diff(curve) <= 1e-9)


def test_elbow_trivial_ranges():
    X = blobs(0)
    assert elbow_select(X, [3]) == 3
    assert elbow_select(X, [2, 5]) == 2


@pytest.mark.parametrize("seed", range(10))
def test_elbow_three_blobs(seed):
    assert elbow_select(blobs(seed), range(1, 7), seed=seed) == 3


@pytest.mark.parametrize("seed", range(5))
def test_elbow_single_blob_falls_back(seed):
    X = np.random.default_rng(seed).normal(size=(90, 2))
    assert elbow_select(X, range(1, 7), seed=seed) == 1
    assert elbow_select(X, range(2, 7), seed=seed) == 2


def test_standardize():
    X = np.column_stack([np.arange(5.0) * 100, np.full(5, 3.0)])
    Z = standardize(X)
    np.testing.assert_allclose(Z[:, 0].mean(), 0, atol=1e-12)
    np.testing.assert_allclose(Z[:, 0].std(), 1)
    assert not Z[:, 1].any()


def test_labels_csv():
    assert labels_to_csv(["a", "b"], [1, 0]) == "object_id,label\na,1\nb,0\n"
