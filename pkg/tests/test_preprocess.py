import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlcurv.preprocess import N_PHI, PreprocessStats, apply, fit_stats, h_normalize

seeds = st.integers(0, 2 ** 32 - 1)


def correlated(n, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(n, 20))
    mix = rng.normal(size=(20, 110))
    return base @ mix + 0.01 * rng.normal(size=(n, 110)) + rng.normal(size=110)


def test_axis_aligned_data():
    rng = np.random.default_rng(0)
    n = 4000
    Q, _ = np.linalg.qr(rng.normal(size=(n, 110)))
    Q -= Q.mean(axis=0)
    Q, _ = np.linalg.qr(Q)
    # exactly zero-mean, decorrelated columns with unit variance
    X = Q * np.sqrt(n)
    s = fit_stats(X, 110)
    np.testing.assert_allclose(s.explained_variance, X.var(axis=0) * n / (n - 1), rtol=1e-8)
    # the eigenspace is degenerate: the components are an orthonormal basis of the standard axes
    np.testing.assert_allclose(s.components @ s.components.T, np.eye(110), atol=1e-10)


def test_axis_aligned_distinct_variances_give_identity_rows():
    # without standardization to equal variances the directions are the axes themselves
    X = np.zeros((220, 110))
    for j in range(110):
        X[2 * j, j], X[2 * j + 1, j] = 1.0, -1.0
    s = fit_stats(X, 110)
    P = np.abs(s.components)
    assert np.allclose(np.sort(P, axis=1)[:, -1], 1.0) and np.allclose(P.sum(axis=0), 1.0)


def test_duplicated_column_gives_null_direction():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(500, 110))
    X[:, 7] = X[:, 3]
    s = fit_stats(X, 109)
    Z = (X - s.mean) / s.std
    var = np.linalg.svd(Z, compute_uv=False) ** 2 / 499
    assert var[-1] < 1e-20 and var[-2] > 0.1
    with pytest.raises(ValueError):
        fit_stats(X, 110)


def test_output_dimension():
    s = fit_stats(correlated(300), 72)
    r, hk = apply(s, correlated(5, 1), 1.0)
    assert r.shape == (5, 72) and hk.shape == (5,)


def test_mean_row_maps_to_zero():
    X = correlated(300)
    s = fit_stats(X, 20)
    r, _ = apply(s, s.mean[None], 1.0)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_whitened_training_moments():
    X = correlated(2000)
    s = fit_stats(X, 20)
    r, _ = apply(s, X, 1.0)
    assert np.abs(r.mean(axis=0)).max() < 1e-8
    C = np.cov(r, rowvar=False)
    np.testing.assert_allclose(np.diag(C), 1.0, atol=1e-6)
    assert np.abs(C - np.diag(np.diag(C))).max() < 1e-6


def test_h_normalization_invariance():
    rng = np.random.default_rng(2)
    f = rng.normal(size=(10, 110))
    g = f.copy()
    g[:, :N_PHI] *= 2.0
    np.testing.assert_array_equal(h_normalize(f, 0.5)[:, :N_PHI], h_normalize(g, 1.0)[:, :N_PHI])
    s = fit_stats(h_normalize(correlated(300), 0.5), 10)
    np.testing.assert_allclose(apply(s, f, 0.5)[0], apply(s, g, 1.0)[0], rtol=1e-12, atol=1e-12)


@given(seeds, st.floats(0, 1))
def test_apply_is_affine(seed, alpha):
    s = fit_stats(correlated(300), 15)
    rng = np.random.default_rng(seed)
    f1, f2 = rng.normal(size=110), rng.normal(size=110)
    lhs = apply(s, alpha * f1 + (1 - alpha) * f2, 0.25)[0]
    rhs = alpha * apply(s, f1, 0.25)[0] + (1 - alpha) * apply(s, f2, 0.25)[0]
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_stats_roundtrip_bit_identical(tmp_path):
    X = correlated(300)
    s = fit_stats(X, 30, 0.015625, "ns")
    s.save(tmp_path / "s.json")
    t = PreprocessStats.load(tmp_path / "s.json")
    f = correlated(50, 3).astype(np.float32)
    a, b = apply(s, f, 0.015625), apply(t, f, 0.015625)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert s.fingerprint() == t.fingerprint()
    assert t.cls == "ns" and t.m_iota == 30


def test_constant_feature_is_flagged():
    X = correlated(300)
    X[:, 50] = 1.0
    s = fit_stats(X, 10)
    assert s.constant[50] and s.constant.sum() == 1
    r, _ = apply(s, X, 1.0)
    assert np.all(np.isfinite(r))


def test_nonfinite_input_raises():
    s = fit_stats(correlated(300), 10)
    f = correlated(1, 1)
    f[0, 3] = np.nan
    with pytest.raises(FloatingPointError):
        apply(s, f, 1.0)
