"""Randomised invariants of the kernel, the estimating equations and the design builder."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drsmd.estimators import drsmd_estimate, rsmd_estimate, smd_system, smd_variance
from drsmd.kernel import KernelSpec, kernel_matrix
from drsmd.model import Dataset, ModelSpec, build_design
from drsmd.nuisance import NuisanceFits, OrthogonalCorrection, correction_targets

RAW = KernelSpec(1.0, standardize_instruments=False)
SETTINGS = settings(max_examples=40, deadline=None)

coords = st.floats(-5.0, 5.0, allow_nan=False, allow_infinity=False)
instrument_arrays = st.integers(1, 3).flatmap(
    lambda q: st.integers(2, 30).flatmap(lambda n: arrays(float, (n, q), elements=coords)))
seeds = st.integers(0, 2 ** 32 - 1)


def _instance(seed, n, p):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, 1)) + rng.integers(0, 3, size=(n, 1))
    Pt = rng.normal(size=(n, p)) + Z
    yt = Pt @ rng.normal(size=p) + rng.normal(size=n)
    ratio = 0.3 * rng.normal(size=(n, p))
    return Z, Pt, yt, ratio


def _fits(Pt, yt):
    return NuisanceFits.from_fitted(yt, Pt, np.zeros(len(yt)), np.zeros_like(Pt))


def _corr(ratio):
    return OrthogonalCorrection(ratio, np.ones(len(ratio)), ratio)


@SETTINGS
@given(instrument_arrays)
def test_kernel_is_psd_correlation_like(Z):
    K = kernel_matrix(Z, RAW).values
    np.testing.assert_array_equal(K, K.T)
    np.testing.assert_array_equal(np.diag(K), 1.0)
    assert np.all((K > 0) & (K <= 1))
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * len(K)


@SETTINGS
@given(instrument_arrays, arrays(float, 3, elements=coords))
def test_kernel_shift_invariant(Z, c):
    a = kernel_matrix(Z, RAW).values
    b = kernel_matrix(Z + c[: Z.shape[1]], RAW).values
    np.testing.assert_allclose(a, b, atol=1e-12)


@SETTINGS
@given(seeds, st.integers(10, 60), st.integers(1, 3))
def test_zero_correction_reduces_to_robinson(seed, n, p):
    Z, Pt, yt, _ = _instance(seed, n, p)
    K = kernel_matrix(Z, RAW)
    zero = np.zeros_like(Pt)
    a = drsmd_estimate(_fits(Pt, yt), _corr(zero), K)
    b = rsmd_estimate(_fits(Pt, yt), K)
    np.testing.assert_allclose(a.theta, b.theta, rtol=1e-12, atol=1e-12)


@SETTINGS
@given(seeds, st.integers(10, 60), st.integers(1, 3), st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
def test_affine_equivariance(seed, n, p, scale, shift):
    Z, Pt, yt, ratio = _instance(seed, n, p)
    K = kernel_matrix(Z, RAW)
    c = np.full(p, shift)
    base = drsmd_estimate(_fits(Pt, yt), _corr(ratio), K).theta
    moved = drsmd_estimate(_fits(Pt, scale * yt + Pt @ c), _corr(ratio), K).theta
    np.testing.assert_allclose(moved, scale * base + c, rtol=1e-8, atol=1e-8 * (1 + abs(shift)))


@SETTINGS
@given(seeds, st.integers(10, 60), st.integers(1, 3))
def test_variance_psd(seed, n, p):
    Z, Pt, yt, ratio = _instance(seed, n, p)
    K = kernel_matrix(Z, RAW)
    M, b = smd_system(Pt, yt, K, ratio)
    theta = np.linalg.lstsq(M, b, rcond=None)[0]
    V = smd_variance(Pt, yt, K, theta, ratio)
    np.testing.assert_allclose(V, V.T, rtol=1e-10, atol=1e-14)
    assert np.linalg.eigvalsh((V + V.T) / 2).min() >= -1e-10 * np.abs(V).max()


@SETTINGS
@given(seeds, st.integers(10, 60), st.integers(1, 3))
def test_permutation_invariance(seed, n, p):
    Z, Pt, yt, ratio = _instance(seed, n, p)
    perm = np.random.default_rng(seed + 1).permutation(n)
    a = drsmd_estimate(_fits(Pt, yt), _corr(ratio), kernel_matrix(Z, RAW))
    b = drsmd_estimate(_fits(Pt[perm], yt[perm]), _corr(ratio[perm]), kernel_matrix(Z[perm], RAW))
    np.testing.assert_allclose(a.theta, b.theta, rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(a.se, b.se, rtol=1e-9, atol=1e-12)


@SETTINGS
@given(instrument_arrays)
def test_leave_one_out_kernel_average_in_unit_interval(Z):
    _, S = correction_targets(np.ones((len(Z), 1)), kernel_matrix(Z, RAW))
    assert np.all((S > 0) & (S <= 1 + 1e-15))


@SETTINGS
@given(seeds, st.integers(8, 40))
def test_build_design_row_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    cols = {"y": rng.normal(size=n), "W": rng.integers(0, 2, n).astype(float), "Z1": rng.normal(size=n),
            "x1": rng.normal(size=n), "x2": rng.normal(size=n)}
    spec = ModelSpec("y", "W", ("Z1",), ("x1", "x2"), ("x1",))
    perm = rng.permutation(n)
    a = build_design(Dataset(cols), spec)
    b = build_design(Dataset({k: v[perm] for k, v in cols.items()}), spec)
    for name in ("y", "P", "X", "Z"):
        np.testing.assert_array_equal(getattr(a, name)[perm], getattr(b, name))
    assert a.param_names == b.param_names == ["W", "W*x1"]
