import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from drsmd.kernel import KernelSpec, kernel_matrix
from drsmd.model import DesignMatrices
from drsmd.nuisance import (
    LearnerConfig,
    LearnerKind,
    NuisanceFits,
    correction_targets,
    fit_learner,
    fit_orthogonal_correction,
    lambda_grid,
    lasso_cv,
    lasso_fit,
    nw_fit,
    poly_features,
    robinson_residualize,
    rule_of_thumb_bandwidth,
)
from oracles import correction_targets_loop, nw_loop, soft_threshold

RAW = KernelSpec(1.0, standardize_instruments=False)


# --------------------------------------------------------------------------
# polynomial features


def test_poly_powers_of_two():
    np.testing.assert_array_equal(poly_features(np.array([[2.0]]), 3), [[2.0, 4.0, 8.0]])


def test_poly_degree_one_is_identity(rng):
    X = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(poly_features(X, 1), X)


def test_poly_two_rows():
    np.testing.assert_array_equal(poly_features(np.array([[-1.0], [0.5]]), 2), [[-1.0, 1.0], [0.5, 0.25]])


def test_poly_covariate_major_layout():
    X = np.array([[2.0, 3.0]])
    np.testing.assert_array_equal(poly_features(X, 2), [[2.0, 4.0, 3.0, 9.0]])


def test_poly_overflow_raises():
    with pytest.raises(OverflowError):
        poly_features(np.array([[1e200]]), 3)


def test_poly_bad_degree():
    with pytest.raises(ValueError):
        poly_features(np.ones((2, 1)), 0)


# --------------------------------------------------------------------------
# lasso


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.3, 0.8, 5.0])
def test_soft_threshold_univariate(rng, lam):
    n = 200
    f = rng.normal(size=n)
    y = 0.6 * f + rng.normal(size=n)
    fit = lasso_fit(f[:, None], y, lam)
    fs = (f - f.mean()) / f.std()
    yc = y - y.mean()
    c = fs @ yc / n
    expected_std = soft_threshold(c, lam)
    assert fit.coef[0] * f.std() == pytest.approx(expected_std, abs=1e-8)

    def objective(b):
        return 0.5 * np.mean((yc - fs * b) ** 2) + lam * abs(b)

    search = minimize_scalar(objective, bounds=(-5, 5), method="bounded", options={"xatol": 1e-12})
    assert abs(search.x - expected_std) < 1e-8 or abs(objective(search.x) - objective(expected_std)) < 1e-14


def test_lasso_small_penalty_is_least_squares(rng):
    n, m = 200, 10
    F = rng.normal(size=(n, m))
    y = F @ rng.normal(size=m) + 0.5 * rng.normal(size=n)
    grid = lambda_grid(F, y, size=100, ratio=1e-9)
    fit = lasso_fit(F, y, grid[-1])
    A = np.column_stack([np.ones(n), F])
    ols = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(fit.coef, ols[1:], atol=1e-5)
    assert fit.intercept == pytest.approx(ols[0], abs=1e-5)


def test_lasso_zero_target(rng):
    F = rng.normal(size=(50, 4))
    fit = lasso_cv(F, np.zeros(50), rng=rng)
    assert np.all(fit.coef == 0) and fit.intercept == 0.0


def test_lasso_cv_selects_minimum(rng):
    F = rng.normal(size=(150, 8))
    y = F[:, 0] - 0.5 * F[:, 3] + rng.normal(size=150)
    fit = lasso_cv(F, y, rng=rng)
    k = int(np.flatnonzero(fit.lambdas == fit.lam)[0])
    assert np.all(fit.cv_error[k] <= fit.cv_error)
    # ties would resolve toward the larger penalty: no earlier index attains the minimum
    assert np.all(fit.cv_error[:k] > fit.cv_error[k])


def test_lasso_grid_is_geometric(rng):
    F = rng.normal(size=(40, 3))
    y = rng.normal(size=40)
    g = lambda_grid(F, y, 100, 1e-4)
    assert g.size == 100
    assert g[-1] == pytest.approx(g[0] * 1e-4)
    np.testing.assert_allclose(np.diff(np.log(g)), np.log(1e-4) / 99)


def test_lasso_cv_fold_seed_reproducible(rng):
    F = rng.normal(size=(100, 5))
    y = F[:, 1] + rng.normal(size=100)
    a = lasso_cv(F, y, rng=np.random.default_rng(3))
    b = lasso_cv(F, y, rng=np.random.default_rng(3))
    assert a.lam == b.lam and np.array_equal(a.coef, b.coef)


def test_lasso_constant_features_warn():
    with pytest.warns(RuntimeWarning):
        fit = lasso_cv(np.ones((20, 2)), np.arange(20.0), rng=0)
    assert fit.intercept == pytest.approx(9.5)


# --------------------------------------------------------------------------
# Nadaraya-Watson


def test_rule_of_thumb_bandwidth_n3000(rng):
    X = rng.normal(size=(3000, 2)) * np.array([1.0, 4.0])
    h = rule_of_thumb_bandwidth(X)
    np.testing.assert_allclose(h / X.std(axis=0, ddof=1), 0.2017, atol=1e-3)


def test_nw_constant_target(rng):
    X = rng.normal(size=(30, 2))
    fit = nw_fit(X, np.full(30, 4.2))
    np.testing.assert_allclose(fit.predict(X), 4.2, rtol=1e-14)
    np.testing.assert_allclose(fit.predict(X, leave_one_out=True), 4.2, rtol=1e-14)


def test_nw_hand_dataset_matches_loop():
    X = np.array([0.0, 0.3, 1.1, 1.5, 2.4])
    y = np.array([1.0, -2.0, 0.5, 3.0, 2.0])
    h = np.array([0.7])
    fit = nw_fit(X, y, 0.7)
    np.testing.assert_allclose(fit.predict(X), nw_loop(X, y, h), rtol=1e-13)
    np.testing.assert_allclose(fit.predict(X, leave_one_out=True), nw_loop(X, y, h, True), rtol=1e-13)


def test_nw_many_covariates_warns(rng):
    with pytest.warns(RuntimeWarning):
        nw_fit(rng.normal(size=(20, 4)), rng.normal(size=20))


def test_nw_isolated_point_falls_back_to_mean():
    X = np.array([0.0, 0.01, 500.0])
    fit = nw_fit(X, np.array([1.0, 2.0, 3.0]), 0.1)
    with pytest.warns(RuntimeWarning):
        out = fit.predict(X, leave_one_out=True)
    assert out[2] == pytest.approx(2.0)


# --------------------------------------------------------------------------
# Robinson residualization


def _design(y, P, X, Z=None):
    n = len(y)
    P = np.asarray(P, float).reshape(n, -1)
    Z = np.zeros((n, 1)) if Z is None else Z
    return DesignMatrices(np.asarray(y, float), P, np.asarray(X, float).reshape(n, -1), Z.reshape(n, -1),
                          [f"p{k}" for k in range(P.shape[1])])


def test_linear_target_residual_near_zero(rng):
    X = rng.normal(size=(400, 3))
    y = X @ np.array([1.0, -2.0, 0.5])
    fits = robinson_residualize(_design(y, rng.integers(0, 2, 400), X), LearnerConfig(lambda_ratio=1e-7), rng)
    assert np.max(np.abs(fits.residual_y)) < 1e-3


def test_treatment_independent_of_controls(rng):
    n = 2000
    X = rng.normal(size=(n, 2))
    W = rng.integers(0, 2, n).astype(float)
    fits = robinson_residualize(_design(rng.normal(size=n), W, X), rng=rng)
    sd = W.std()
    assert np.all(np.abs(fits.g_P[:, 0] - W.mean()) < 3 * sd / np.sqrt(n))


def test_residual_plus_fit_recovers_original(rng):
    X = rng.normal(size=(100, 2))
    y = np.sin(X[:, 0]) + rng.normal(size=100)
    P = rng.normal(size=(100, 2))
    fits = robinson_residualize(_design(y, P, X), rng=rng)
    np.testing.assert_allclose(fits.residual_y + fits.g_y, y, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(fits.residual_P + fits.g_P, P, rtol=1e-12, atol=1e-12)


def test_no_controls_gives_demeaning(rng):
    y = rng.normal(size=30)
    fits = robinson_residualize(_design(y, rng.normal(size=30), np.empty((30, 0))), rng=rng)
    np.testing.assert_allclose(fits.residual_y, y - y.mean())


def test_nw_learner_path(rng):
    X = rng.normal(size=(300, 1))
    y = X[:, 0] ** 2 + 0.1 * rng.normal(size=300)
    cfg = LearnerConfig(kind=LearnerKind.NADARAYA_WATSON)
    learner, fitted = fit_learner(X, y, cfg)
    assert np.corrcoef(fitted, X[:, 0] ** 2)[0, 1] > 0.95
    assert learner.meta["bandwidth"][0] == pytest.approx(X.std(ddof=1) * 300 ** -0.2)


def test_cross_fit_uses_out_of_fold_predictions(rng):
    X = rng.normal(size=(200, 2))
    y = X[:, 0] + rng.normal(size=200)
    fits = robinson_residualize(_design(y, rng.normal(size=200), X), LearnerConfig(cross_fit=True), rng)
    assert set(fits.learner_meta["y"]) == {"fold0", "fold1"}


def test_learner_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(max_degree=0)
    with pytest.raises(ValueError):
        LearnerConfig(folds=1)
    with pytest.raises(ValueError):
        LearnerConfig(nw_bandwidth=-1.0)


# --------------------------------------------------------------------------
# correction nuisances


def test_targets_match_loop_n30(rng):
    Z = rng.normal(size=30)
    Pt = rng.normal(size=(30, 2))
    K = kernel_matrix(Z, RAW)
    T, S = correction_targets(Pt, K)
    T0, S0 = correction_targets_loop(Pt, K.values)
    np.testing.assert_allclose(T, T0, atol=1e-14)
    np.testing.assert_allclose(S, S0, atol=1e-14)


def test_targets_bounds(rng):
    Z = rng.integers(0, 3, 50).astype(float)
    Pt = rng.normal(size=(50, 2))
    T, S = correction_targets(Pt, kernel_matrix(Z, RAW))
    assert np.all((S > 0) & (S <= 1))
    assert np.all(np.abs(T) <= np.abs(Pt).max(axis=0) + 1e-15)


def test_targets_exclude_own_row(rng):
    Z = rng.normal(size=10)
    Pt = np.zeros((10, 1))
    Pt[3] = 100.0
    T, _ = correction_targets(Pt, kernel_matrix(Z, RAW))
    assert T[3, 0] == 0.0


def test_zero_residuals_give_zero_ratio(rng):
    n = 200
    X = rng.normal(size=(n, 2))
    fits = NuisanceFits.from_fitted(np.zeros(n), np.zeros((n, 1)), np.zeros(n), np.zeros((n, 1)))
    corr = fit_orthogonal_correction(fits, kernel_matrix(rng.integers(0, 2, n).astype(float), RAW), X, rng=rng)
    assert np.max(np.abs(corr.g_ptilde)) < 1e-12
    assert np.max(np.abs(corr.ratio)) < 1e-12


def test_irrelevant_controls_give_flat_fit(rng):
    n = 1500
    X = rng.normal(size=(n, 2))
    Z = rng.integers(0, 2, n).astype(float)
    Pt = (Z - Z.mean())[:, None] + rng.normal(size=(n, 1))
    fits = NuisanceFits.from_fitted(np.zeros(n), Pt, np.zeros(n), np.zeros((n, 1)))
    corr = fit_orthogonal_correction(fits, kernel_matrix(Z, RAW), X, rng=rng)
    T = corr.targets_T[:, 0]
    dev = corr.g_ptilde[:, 0] - T.mean()
    assert np.sqrt(np.mean(dev ** 2)) < 4 * T.std() / np.sqrt(n)


def test_kappa_floor_warning(rng):
    n = 100
    X = rng.normal(size=(n, 1))
    fits = NuisanceFits.from_fitted(np.zeros(n), rng.normal(size=(n, 1)), np.zeros(n), np.zeros((n, 1)))
    # widely separated instruments: every off-diagonal weight underflows to the floor
    Z = np.arange(n, dtype=float) * 100.0
    with pytest.warns(RuntimeWarning, match="floored"):
        corr = fit_orthogonal_correction(fits, kernel_matrix(Z, RAW), X, rng=rng)
    assert corr.floor_hits > 5


def test_kernel_size_mismatch(rng):
    fits = NuisanceFits.raw(np.zeros(10), np.zeros(10))
    with pytest.raises(ValueError):
        fit_orthogonal_correction(fits, kernel_matrix(np.arange(5.0), RAW), np.zeros((10, 1)))
