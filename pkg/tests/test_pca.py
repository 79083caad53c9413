import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rela.pca import PcaModel, align_signs, batch_covariance, batch_pca, covariance, full_pca, reduce_targets


def test_axis_aligned_example():
    Y = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0], [-2.0, 0.0]])
    model, red = full_pca(Y, 1)
    assert np.allclose(np.abs(model.components[:, 0]), [1.0, 0.0])
    assert np.allclose(np.abs(red[:, 0]), np.abs(Y[:, 0]))


def test_full_rank_reconstruction(nprng):
    Y = nprng.normal(size=(40, 6)) * [1, 2, 3, 4, 5, 6]
    model, red = full_pca(Y, 6)
    assert np.max(np.abs(model.inverse_transform(red) - Y)) <= 1e-8


def test_captured_variance_matches_reduced_columns(nprng):
    Y = nprng.normal(size=(64, 16)) @ nprng.normal(size=(16, 16))
    model, red = full_pca(Y, 4)
    assert np.sum(model.eigenvalues) == pytest.approx(np.sum(red.var(axis=0, ddof=1)), abs=1e-8)


@pytest.mark.parametrize("bs", [1, 7, 64])
def test_batch_matches_full(nprng, bs):
    Y = nprng.normal(size=(200, 32)) * np.linspace(0.5, 4.0, 32)
    _, ref = full_pca(Y, 8)
    _, red = batch_pca(Y, 8, bs)
    assert np.max(np.abs(align_signs(ref, red) - ref)) <= 1e-8


def test_batch_size_at_least_n_is_full_path(nprng):
    Y = nprng.normal(size=(30, 5))
    a = full_pca(Y, 3)[1]
    b = batch_pca(Y, 3, 30)[1]
    c = batch_pca(Y, 3, 1000)[1]
    assert np.array_equal(a, b) and np.array_equal(a, c)


def test_batch_covariance_equals_single_pass(nprng):
    Y = nprng.normal(size=(123, 9))
    Yc = Y - Y.mean(axis=0)
    assert np.max(np.abs(batch_covariance(Yc, 10) - covariance(Yc))) <= 1e-10


@given(st.integers(2, 60), st.integers(1, 12), st.integers(1, 80), st.integers(0, 10**6))
def test_batch_full_equivalence_property(n, d, bs, seed):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0, d)
    k = max(1, d // 2)
    _, ref = full_pca(Y, k)
    _, red = batch_pca(Y, k, bs)
    assert np.max(np.abs(align_signs(ref, red) - ref)) <= 1e-8


@given(st.integers(3, 50), st.integers(1, 10), st.integers(0, 10**6))
def test_component_invariants(n, d, seed):
    Y = np.random.default_rng(seed).normal(size=(n, d))
    model, _ = full_pca(Y, d)
    V = model.components
    assert np.max(np.abs(V.T @ V - np.eye(d))) <= 1e-8
    assert np.all(np.diff(model.eigenvalues) <= 0)
    assert np.all(model.eigenvalues >= -1e-10)
    C = covariance(Y - Y.mean(axis=0))
    assert abs(model.eigenvalues.sum() - np.trace(C)) <= 1e-8


@pytest.mark.parametrize("bad", [0, 4])
def test_k_out_of_range(bad):
    with pytest.raises(ValueError):
        full_pca(np.ones((5, 3)), bad)


def test_single_row_rejected():
    with pytest.raises(ValueError):
        full_pca(np.ones((1, 3)), 1)


# --- target reduction -------------------------------------------------------------------


def test_standardized_input_same_either_way(nprng):
    R = nprng.normal(size=(80, 5))
    R = (R - R.mean(axis=0)) / R.std(axis=0, ddof=1)
    a = reduce_targets(R, 3, standardize=False)[1]
    b = reduce_targets(R, 3, standardize=True)[1]
    assert np.max(np.abs(a - b)) <= 1e-10


def test_full_components_preserve_row_norms(nprng):
    R = nprng.normal(size=(50, 7))
    _, red = reduce_targets(R, 7)
    Rc = R - R.mean(axis=0)
    assert np.allclose(np.linalg.norm(red, axis=1), np.linalg.norm(Rc, axis=1), atol=1e-10)


def test_reconstruction_error_is_eigenvalue_tail(nprng):
    R = nprng.normal(size=(100, 10)) * np.arange(1, 11)
    full, _ = full_pca(R, 10)
    model, red = reduce_targets(R, 3)
    err = np.sum((model.inverse_transform(red) - R) ** 2)
    assert err == pytest.approx(np.sum(full.eigenvalues[3:]) * 99, abs=1e-8)


def test_reduction_is_idempotent(nprng):
    R = nprng.normal(size=(60, 8)) * np.arange(1, 9)
    m1, r1 = reduce_targets(R, 4)
    m2, r2 = reduce_targets(r1, 4)
    assert np.allclose(m1.eigenvalues, m2.eigenvalues, atol=1e-8, rtol=0)


def test_zero_variance_column_dropped_with_warning(nprng):
    R = nprng.normal(size=(30, 4))
    R[:, 2] = 5.0
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        model, red = reduce_targets(R, 4, standardize=True)
    assert red.shape == (30, 3)
    assert list(model.columns) == [0, 1, 3]
    assert np.allclose(model.transform(R), red)


def test_empty_target_rejected():
    with pytest.raises(ValueError):
        reduce_targets(np.zeros((0, 3)), 1)


def test_model_dict_roundtrip(nprng):
    model, _ = reduce_targets(nprng.normal(size=(20, 5)), 2, standardize=True)
    back = PcaModel.from_dict(model.to_dict())
    for f in ("mean", "components", "eigenvalues", "col_std"):
        assert np.array_equal(getattr(back, f), getattr(model, f))


def test_no_warning_on_clean_input(nprng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        reduce_targets(nprng.normal(size=(20, 4)), 2, standardize=True)
