import numpy as np
import pytest

from drsmd import DataError
from drsmd.kernel import DENSE_LIMIT, GROUPED_LIMIT, KernelSpec, kappa, kernel_matrix
from oracles import kappa_loop, kappa_quadrature

RAW = KernelSpec(1.0, standardize_instruments=False)


def test_kappa_at_zero_and_one():
    assert kappa(0.0, RAW) == 1.0
    assert kappa(1.0, RAW) == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert abs(kappa(1.0, RAW) - 0.6065) < 1e-4


@pytest.mark.parametrize("u,sigma", [(0.0, 1.0), (1.0, 1.0), (2.5, 1.0), (0.7, 0.5), ((1.0, -0.3), (1.0, 2.0))])
def test_kappa_matches_fourier_quadrature(u, sigma):
    spec = KernelSpec(sigma, standardize_instruments=False)
    assert abs(kappa(u, spec) - kappa_quadrature(u, sigma)) < 1e-6


def test_sigma_length_mismatch():
    with pytest.raises(ValueError):
        kappa((1.0, 2.0), KernelSpec((1.0, 2.0, 3.0)))


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_sigma_must_be_positive(bad):
    with pytest.raises(ValueError):
        KernelSpec(bad)


def test_matrix_matches_loop_continuous(rng):
    Z = rng.normal(size=(25, 2))
    K = kernel_matrix(Z, RAW)
    assert not K.is_grouped or K.n <= GROUPED_LIMIT
    np.testing.assert_allclose(K.values, kappa_loop(Z), atol=1e-14)


def test_matrix_grouped_binary_matches_loop(rng):
    Z = rng.integers(0, 2, size=40).astype(float)
    K = kernel_matrix(Z, RAW)
    assert K.is_grouped
    np.testing.assert_allclose(K.values, kappa_loop(Z), atol=1e-15)
    V = rng.normal(size=(40, 3))
    np.testing.assert_allclose(K.dot(V), kappa_loop(Z) @ V, atol=1e-12)


def test_offdiag_products(rng):
    Z = rng.normal(size=30)
    K = kernel_matrix(Z, RAW)
    D = kappa_loop(Z)
    np.fill_diagonal(D, 0.0)
    v = rng.normal(size=30)
    np.testing.assert_allclose(K.offdiag_dot(v), D @ v, atol=1e-12)
    np.testing.assert_allclose(K.offdiag_rowsum(), D.sum(axis=1), atol=1e-12)


def test_psd_symmetric_unit_diagonal(rng):
    Z = rng.normal(size=(60, 3))
    K = kernel_matrix(Z, RAW).values
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)
    assert np.all((K > 0) & (K <= 1))
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_shift_invariance_exact_for_dyadic_shift(rng):
    Z = rng.integers(-3, 4, size=(50, 2)).astype(float)
    K1 = kernel_matrix(Z, RAW).values
    K2 = kernel_matrix(Z + 8.0, RAW).values
    assert np.array_equal(K1, K2)


def test_shift_invariance_general(rng):
    Z = rng.normal(size=(50, 2))
    K1 = kernel_matrix(Z, RAW).values
    K2 = kernel_matrix(Z + np.array([0.37, -1.9]), RAW).values
    np.testing.assert_allclose(K1, K2, atol=1e-12)


def test_standardization_scale_invariant(rng):
    Z = rng.normal(size=(40, 2))
    A = kernel_matrix(Z).values
    B = kernel_matrix(Z * np.array([3.0, 0.1]) + 5.0).values
    np.testing.assert_allclose(A, B, atol=1e-12)


def test_standardizing_constant_instrument_raises():
    with pytest.raises(DataError):
        kernel_matrix(np.ones(10))


def test_nonfinite_instrument_raises():
    Z = np.array([0.0, 1.0, np.nan])
    with pytest.raises(DataError):
        kernel_matrix(Z, RAW)


def test_squared_kernel_is_entrywise_square(rng):
    Z = rng.normal(size=(20, 2))
    K = kernel_matrix(Z, RAW)
    np.testing.assert_allclose(K.squared().values, K.values ** 2, atol=1e-15)


def test_large_grouped_kernel_never_dense(rng):
    n = DENSE_LIMIT + 5
    Z = rng.integers(0, 3, size=n).astype(float)
    K = kernel_matrix(Z, RAW)
    v = rng.normal(size=n)
    out = K.offdiag_dot(v)
    # compare a few rows against direct sums
    for j in (0, 17, n - 1):
        w = np.exp(-0.5 * (Z[j] - Z) ** 2)
        w[j] = 0.0
        assert out[j] == pytest.approx(w @ v, rel=1e-10, abs=1e-8)
    with pytest.raises(MemoryError):
        K.values


def test_blocked_mode_matches_dense(rng, monkeypatch):
    import drsmd.kernel as kmod

    Z = rng.normal(size=(700, 2))
    V = rng.normal(size=(700, 2))
    dense = kernel_matrix(Z, RAW).dot(V)
    monkeypatch.setattr(kmod, "DENSE_LIMIT", 100)
    K = kernel_matrix(Z, RAW)
    assert "blocked" in repr(K)
    np.testing.assert_allclose(K.dot(V), dense, atol=1e-11)
