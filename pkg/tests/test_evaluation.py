import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from rela.core_math import RngStream
from rela.evaluation import (
    DistanceConfig,
    ProbeConfig,
    distance_matrix,
    fit_affine,
    linear_probe,
    rep_distance,
    split_indices,
    tv_gaussian_1d,
    tv_gaussian_1d_quad,
    write_distance_matrix,
)


def test_split_is_disjoint_and_covering():
    tr, te = split_indices(100, RngStream(0))
    assert len(tr) == 80 and len(te) == 20
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(100))
    with pytest.raises(ValueError):
        split_indices(2, RngStream(0), 0.1)


# --- linear probe ---------------------------------------------------------------


@pytest.fixture(scope="module")
def blobs():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 4, 1000)
    F = rng.normal(size=(1000, 6)) + 3.0 * np.eye(6)[y]
    return F, y


def test_probe_one_hot_features():
    y = np.repeat(np.arange(3), 200)
    assert linear_probe(np.eye(3)[y], y, rng=RngStream(1)) >= 0.99


def test_probe_shuffled_labels_near_chance():
    rng = np.random.default_rng(1)
    F = rng.normal(size=(2000, 8))
    y = rng.integers(0, 4, 2000)
    acc = linear_probe(F, y, ProbeConfig(epochs=20), RngStream(2))
    se = math.sqrt(0.25 * 0.75 / 400)
    assert abs(acc - 0.25) <= 3 * se


def test_probe_duplicate_columns(blobs):
    F, y = blobs
    a = linear_probe(F, y, ProbeConfig(epochs=30), RngStream(3))
    b = linear_probe(np.hstack([F, F]), y, ProbeConfig(epochs=30), RngStream(3))
    assert abs(a - b) <= 0.01


def test_probe_affine_invariance(blobs):
    F, y = blobs
    a = linear_probe(F, y, ProbeConfig(epochs=30), RngStream(4))
    scale = np.array([0.1, 5.0, 1.0, 20.0, 0.5, 2.0])
    b = linear_probe(F * scale - 7.0, y, ProbeConfig(epochs=30), RngStream(4))
    assert abs(a - b) <= 0.01


def test_probe_rejects_bad_input():
    with pytest.raises(ValueError):
        linear_probe(np.ones((10, 2)), np.zeros(10))
    with pytest.raises(ValueError):
        linear_probe(np.ones((10, 2)), np.arange(9) % 2)
    with pytest.raises(ValueError):
        ProbeConfig(epochs=0)


def test_probe_deterministic(blobs):
    F, y = blobs
    cfg = ProbeConfig(epochs=5)
    assert linear_probe(F, y, cfg, RngStream(5)) == linear_probe(F, y, cfg, RngStream(5))


# --- representation distance ------------------------------------------------------


@pytest.fixture(scope="module")
def X():
    return np.random.default_rng(7).normal(size=(2000, 5))


def test_identity_distance_zero(X):
    d = rep_distance(lambda x: x, lambda x: x, X)
    assert d.value == 0.0 and d.full_rank and d.n_train == 1600 and d.n_test == 400


def test_affine_distance_zero(X):
    A = np.random.default_rng(8).normal(size=(5, 5))
    d = rep_distance(lambda x: x, lambda x: x @ A.T + 3.0, X)
    assert d.value <= 0.01


def test_square_distance_near_one(X):
    d = rep_distance(lambda x: x, lambda x: x**2, X)
    assert d.value >= 0.95


def test_categorical_mode(X):
    lab = (X[:, 0] > 0).astype(int)
    d = rep_distance(lambda x: x, lambda x: lab, X, DistanceConfig(categorical=True))
    assert d.value <= 0.01
    noise = np.random.default_rng(9).integers(0, 2, len(X))
    d = rep_distance(lambda x: x, lambda x: noise, X, DistanceConfig(categorical=True))
    assert 0.35 <= d.value <= 0.65


def test_rank_deficient_flagged(X):
    d = rep_distance(lambda x: np.hstack([x, x[:, :1]]), lambda x: x, X)
    assert not d.full_rank and d.rank == 6


def test_too_few_samples(X):
    with pytest.raises(ValueError):
        rep_distance(lambda x: x, lambda x: x, X[:40])


def test_triangle_inequality(X):
    encs = {
        "id": lambda x: x,
        "lin": lambda x: x @ np.diag([1.0, 2.0, 3.0, 4.0, 5.0]),
        "sq": lambda x: x**2,
        "tanh": lambda x: np.tanh(x),
    }
    D = distance_matrix(encs, X)
    assert np.all(np.diag(D) <= 0.01)
    k = len(encs)
    for i in range(k):
        for j in range(k):
            for m in range(k):
                assert D[i, m] <= D[i, j] + D[j, m] + 0.02


def test_fit_affine_recovers_map():
    rng = np.random.default_rng(10)
    F = rng.normal(size=(500, 3))
    W0, b0 = rng.normal(size=(2, 3)), rng.normal(size=2)
    W, b, lam, rank = fit_affine(F, F @ W0.T + b0)
    assert np.allclose(W, W0, atol=1e-5) and np.allclose(b, b0, atol=1e-5)
    assert rank == 4 and lam > 0


def test_distance_csv(tmp_path):
    M = np.array([[0.0, 0.25], [1.0 / 3.0, 0.0]])
    write_distance_matrix(tmp_path / "d.csv", ["a", "b"], M)
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    assert rows[0] == ["model", "a", "b"]
    assert [float(v) for v in rows[2][1:]] == [1.0 / 3.0, 0.0]
    assert not (tmp_path / "d.csv.tmp").exists()


# --- total variation ------------------------------------------------------------


def test_tv_reference_values():
    assert tv_gaussian_1d(0, 1, 0, 1) == 0.0
    assert tv_gaussian_1d(0, 1, 2, 1) == pytest.approx(0.6826894921370859, abs=1e-12)
    assert tv_gaussian_1d(0, 1, 20, 1) == pytest.approx(1.0, abs=1e-6)


def test_tv_unequal_variances_against_cdf_form():
    # with one crossing pair at x1 < x2, TV = |P1(x1<X<x2) - P2(x1<X<x2)|
    for m1, s1, m2, s2 in [(0, 1, 0, 2), (0, 1, 1, 0.5), (-1, 0.3, 2, 3)]:
        n1, n2 = stats.norm(m1, s1), stats.norm(m2, s2)
        a = 1 / s2**2 - 1 / s1**2
        b = 2 * (m1 / s1**2 - m2 / s2**2)
        c = m2**2 / s2**2 - m1**2 / s1**2 + 2 * math.log(s2 / s1)
        r = math.sqrt(b * b - 4 * a * c)
        x1, x2 = sorted([(-b - r) / (2 * a), (-b + r) / (2 * a)])
        ref = abs((n1.cdf(x2) - n1.cdf(x1)) - (n2.cdf(x2) - n2.cdf(x1)))
        assert tv_gaussian_1d(m1, s1, m2, s2) == pytest.approx(ref, abs=1e-9)


@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(-5, 5))
def test_tv_closed_form_matches_quadrature(m1, s, m2):
    assert abs(tv_gaussian_1d(m1, s, m2, s) - tv_gaussian_1d_quad(m1, s, m2, s)) <= 1e-6


@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(-5, 5), st.floats(0.1, 5))
def test_tv_bounds_and_symmetry(m1, s1, m2, s2):
    v = tv_gaussian_1d(m1, s1, m2, s2)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(tv_gaussian_1d(m2, s2, m1, s1), abs=1e-9)


def test_tv_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        tv_gaussian_1d(0, 0, 1, 1)
