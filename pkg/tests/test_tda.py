from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from toporfm.errors import DataError, WindowError
from toporfm.tda import (
    Barcode,
    PersistenceDiagram,
    PersistencePair,
    PointCloud,
    barcode,
    barcode_features,
    delay_embed,
    diagram_from_csv,
    diagram_to_csv,
    enclosing_radius,
    pairwise_distances,
    rips_persistence,
    series_features,
)
from toporfm.tda import _reduce_py, rips as rips_mod
from toporfm.tda.rips import rips_filtration

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def triples(dgm):
    return sorted((p.dim, p.birth, p.death) for p in dgm.pairs)


# ---------------------------------------------------------------- embedding

def test_delay_embed_examples():
    np.testing.assert_array_equal(delay_embed([1, 2, 3, 4], 2, 1).points, [[1, 2], [2, 3], [3, 4]])
    np.testing.assert_array_equal(delay_embed([10, 10, 10], 2, 1).points, [[10, 10], [10, 10]])
    assert len(delay_embed(np.arange(5), 3, 2)) == 2


def test_delay_embed_errors():
    with pytest.raises(WindowError):
        delay_embed([1, 2], 3)
    with pytest.raises(WindowError):
        delay_embed([1, 2, 3], 2, 0)
    with pytest.raises(DataError):
        PointCloud(np.array([[np.nan, 1.0]]))


@given(st.integers(1, 40), st.integers(1, 6), st.integers(1, 4))
def test_delay_embed_count(T, w, s):
    if w > T:
        return
    cloud = delay_embed(np.arange(T, dtype=float), w, s)
    assert len(cloud) == (T - w) // s + 1 and cloud.w == w


# ---------------------------------------------------------------- persistence

def test_single_point():
    assert triples(rips_persistence(PointCloud([[0.0, 0.0]]))) == [(0, 0.0, math.inf)]


def test_two_points():
    dgm = rips_persistence(PointCloud([[0.0], [1.0]]), max_scale=2)
    assert triples(dgm) == [(0, 0.0, 1.0), (0, 0.0, math.inf)]


def test_unit_square_single_loop():
    dgm = rips_persistence(PointCloud(SQUARE), max_scale=2)
    h1 = dgm.in_dim(1)
    assert h1.shape == (1, 2)
    assert abs(h1[0, 0] - 1) < 1e-9 and abs(h1[0, 1] - math.sqrt(2)) < 1e-9
    assert triples(dgm) == oracles.naive_rips_diagram(SQUARE.tolist(), 2)
    bars = barcode(dgm).in_dim(1)
    np.testing.assert_allclose(bars, [[1, math.sqrt(2)]], atol=1e-9)


def test_identical_points():
    dgm = rips_persistence(PointCloud(np.ones((5, 3))), max_scale=1.0)
    h0 = dgm.in_dim(0)
    assert len(h0) == 5 and np.isinf(h0[:, 1]).sum() == 1
    assert np.all(h0[np.isfinite(h0[:, 1]), 1] == 0)
    assert len(dgm.in_dim(1)) == 0


def test_dedup_matches_plain_reduction():
    pts = np.array([[0, 0], [0, 0], [1, 0], [1, 1], [0, 1], [1, 1]], float)
    a = rips_persistence(PointCloud(pts), max_scale=2, deduplicate=True)
    b = rips_persistence(PointCloud(pts), max_scale=2, deduplicate=False)
    assert triples(a) == triples(b)


def test_bad_arguments():
    with pytest.raises(ValueError):
        rips_persistence(PointCloud(SQUARE), max_scale=0)
    with pytest.raises(ValueError):
        rips_persistence(PointCloud(SQUARE), max_dim=2)


def random_cloud(seed):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(int(rng.integers(2, 16)), int(rng.integers(2, 5))))


@pytest.mark.parametrize("seed", range(20))
def test_oracles_agree(seed):
    pts = random_cloud(1000 + seed)
    dgm = rips_persistence(PointCloud(pts))
    h0 = [t for t in triples(dgm) if t[0] == 0]
    assert h0 == oracles.union_find_h0(pts.tolist())
    cap = enclosing_radius(pairwise_distances(pts))
    assert triples(dgm) == oracles.naive_rips_diagram(pts.tolist(), cap)


@pytest.mark.parametrize("seed", range(10))
def test_compiled_and_python_reduction_agree(seed):
    pts = random_cloud(seed)
    dist = pairwise_distances(pts)
    _, _, dims, indptr, indices = rips_filtration(dist, enclosing_radius(dist), 1)
    low_py = _reduce_py.reduce_boundary(indptr, indices, dims, 1)
    low = rips_mod.reduce_boundary(indptr, indices, dims, 1)
    np.testing.assert_array_equal(np.asarray(low), np.asarray(low_py))


clouds = st.integers(0, 10_000).map(random_cloud)


@settings(max_examples=40, deadline=None)
@given(clouds, st.randoms(use_true_random=False))
def test_permutation_invariance(pts, rnd):
    order = list(range(len(pts)))
    rnd.shuffle(order)
    assert triples(rips_persistence(PointCloud(pts))) == triples(rips_persistence(PointCloud(pts[order])))


def close_triples(a, b, tol):
    assert len(a) == len(b)
    for (d1, b1, e1), (d2, b2, e2) in zip(a, b):
        assert d1 == d2 and abs(b1 - b2) <= tol
        assert (math.isinf(e1) and math.isinf(e2)) or abs(e1 - e2) <= tol


@settings(max_examples=40, deadline=None)
@given(clouds, st.floats(0, 2 * math.pi), st.floats(-5, 5))
def test_isometry_invariance(pts, angle, shift):
    rot = np.eye(pts.shape[1])
    c, s = math.cos(angle), math.sin(angle)
    rot[:2, :2] = [[c, -s], [s, c]]
    moved = pts @ rot.T + shift
    cap = enclosing_radius(pairwise_distances(pts)) * 1.5
    close_triples(triples(rips_persistence(PointCloud(pts), cap)),
                  triples(rips_persistence(PointCloud(moved), cap)), 1e-9)


@settings(max_examples=40, deadline=None)
@given(clouds, st.floats(0.1, 10))
def test_scaling(pts, c):
    cap = enclosing_radius(pairwise_distances(pts)) * 1.5
    base = triples(rips_persistence(PointCloud(pts), cap))
    scaled = triples(rips_persistence(PointCloud(pts * c), cap * c))
    close_triples([(d, b * c, e * c) for d, b, e in base], scaled, 1e-9 * max(c, 1) * 10)


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_diagram_invariants(pts):
    dgm = rips_persistence(PointCloud(pts))
    h0 = dgm.in_dim(0)
    assert len(h0) == len(pts)
    assert np.isinf(h0[:, 1]).sum() == 1 and np.all(h0[:, 0] == 0)
    for b, d in dgm.in_dim(1):
        assert 0 < b < d


def test_csv_round_trip():
    dgm = rips_persistence(PointCloud(SQUARE), max_scale=2)
    text = diagram_to_csv(dgm)
    assert text.splitlines()[0] == "dim,birth,death" and "inf" in text
    assert triples(diagram_from_csv(text)) == triples(dgm)


# ---------------------------------------------------------------- barcode / features

def test_barcode_views():
    assert len(barcode(PersistenceDiagram(()))) == 0
    one = PersistenceDiagram((PersistencePair(1, 0.5, 1.0),))
    assert barcode(one).bars == one.pairs
    pairs = (PersistencePair(1, 0.2, 0.3), PersistencePair(0, 0.0, 1.0), PersistencePair(0, 0.0, 0.5))
    bars = barcode(PersistenceDiagram(pairs)).bars
    assert [(p.dim, p.birth, p.death) for p in bars] == [(0, 0, 0.5), (0, 0, 1.0), (1, 0.2, 0.3)]


def test_features_examples():
    assert not barcode_features(Barcode(()), 1.0).any()
    single = barcode_features(Barcode((PersistencePair(0, 0.0, math.inf),)), 2.0)
    np.testing.assert_allclose(single[:5], [1, 2, 2, 2, 0])
    two = barcode_features(Barcode((PersistencePair(1, 0, 1), PersistencePair(1, 2, 3))), 5.0)
    assert two[9] == pytest.approx(math.log(2))


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_feature_invariants(pts):
    cap = enclosing_radius(pairwise_distances(pts))
    feats = barcode_features(barcode(rips_persistence(PointCloud(pts), cap)), cap)
    assert feats.shape == (10,) and np.all(feats >= 0) and np.all(np.isfinite(feats))
    for d in (0, 1):
        count, entropy = feats[5 * d], feats[5 * d + 4]
        assert entropy <= math.log(count) + 1e-12 if count > 1 else entropy == 0


def test_series_features_constant_series():
    assert not series_features(np.full(12, 3.0)).any()
    assert series_features(np.sin(np.arange(30) / 2)).shape == (10,)
