"""Lasso by covariance-form coordinate descent, with K-fold cross-validation.

Minimises ``(1/2n) ||y - b0 - F b||^2 + lam ||b||_1`` on internally
standardised features with an unpenalised intercept. The solver works on the
Gram matrix ``F'F/n`` so each sweep costs ``O(m^2)`` regardless of ``n``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

CD_TOL = 1e-7
CD_MAX_SWEEPS = 100_000
_CONST_TOL = 1e-12


@njit(cache=True)
def _cd_path(G, c, lambdas, beta0, tol, max_sweeps):
    """Warm-started coordinate descent along a decreasing lambda path.

    Returns the ``len(lambdas) x m`` coefficient path and the sweep count of
    the last solve.
    """
    m = G.shape[0]
    L = lambdas.shape[0]
    path = np.zeros((L, m))
    beta = beta0.copy()
    q = G @ beta
    sweeps = 0
    for i in range(L):
        lam = lambdas[i]
        sweeps = 0
        while True:
            max_delta = 0.0
            for k in range(m):
                gkk = G[k, k]
                if gkk <= 0.0:
                    continue
                rho = c[k] - q[k] + gkk * beta[k]
                if rho > lam:
                    new = (rho - lam) / gkk
                elif rho < -lam:
                    new = (rho + lam) / gkk
                else:
                    new = 0.0
                delta = new - beta[k]
                if delta != 0.0:
                    for j in range(m):
                        q[j] += G[j, k] * delta
                    beta[k] = new
                    if abs(delta) > max_delta:
                        max_delta = abs(delta)
            sweeps += 1
            if max_delta < tol or sweeps >= max_sweeps:
                break
        path[i] = beta
    return path, sweeps


@dataclass
class _Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray  # boolean mask of non-constant columns

    @classmethod
    def fit(cls, F):
        mean = F.mean(axis=0)
        sd = F.std(axis=0)
        ref = np.maximum(np.abs(mean), 1.0)
        keep = sd > _CONST_TOL * ref
        scale = np.where(keep, sd, 1.0)
        return cls(mean, scale, keep)

    def transform(self, F):
        return ((F - self.mean) / self.scale)[:, self.keep]


def lasso_path(F, y, lambdas, tol=CD_TOL):
    """Coefficient path on the standardised scale.

    Returns ``(path, standardizer)``; ``path`` has one row per lambda over the
    kept (non-constant) columns.
    """
    st = _Standardizer.fit(F)
    Fs = st.transform(F)
    n = Fs.shape[0]
    yc = y - y.mean()
    G = Fs.T @ Fs / n
    c = Fs.T @ yc / n
    lambdas = np.asarray(lambdas, dtype=float)
    path, _ = _cd_path(G, c, lambdas, np.zeros(Fs.shape[1]), tol, CD_MAX_SWEEPS)
    return path, st


def lambda_max(F, y) -> float:
    """Smallest penalty at which every coefficient is zero."""
    st = _Standardizer.fit(F)
    Fs = st.transform(F)
    if Fs.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(Fs.T @ (y - y.mean()))) / Fs.shape[0])


def lambda_grid(F, y, size=100, ratio=1e-4) -> np.ndarray:
    lmax = lambda_max(F, y)
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * ratio, size)


@dataclass
class LassoFit:
    """Fitted lasso mapped back to the original feature scale."""

    intercept: float
    coef: np.ndarray
    lam: float
    lambdas: np.ndarray = field(default_factory=lambda: np.empty(0))
    cv_error: np.ndarray = field(default_factory=lambda: np.empty(0))
    support_size: int = 0

    def predict(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        return self.intercept + F @ self.coef


def _unstandardize(beta_s, st: _Standardizer, ybar):
    coef = np.zeros(st.mean.shape[0])
    coef[st.keep] = beta_s / st.scale[st.keep]
    intercept = ybar - float(st.mean @ coef)
    return intercept, coef


def lasso_fit(F, y, lam, tol=CD_TOL) -> LassoFit:
    """Fit at one fixed penalty (solved along a short warm-start path)."""
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    lmax = lambda_max(F, y)
    if lam < lmax:
        lams = np.concatenate([np.geomspace(lmax, max(lam, lmax * 1e-6), 20), [lam]])
    else:
        lams = np.array([lam])
    path, st = lasso_path(F, y, lams, tol)
    beta_s = path[-1] if path.shape[1] else np.zeros(0)
    intercept, coef = _unstandardize(beta_s, st, y.mean())
    return LassoFit(intercept, coef, float(lam), support_size=int(np.sum(coef != 0)))


def cv_folds(n, folds, rng) -> np.ndarray:
    """Fold label per row: a random permutation of balanced labels."""
    labels = np.arange(n) % folds
    return rng.permutation(labels)


def lasso_cv(F, y, folds=5, n_lambdas=100, ratio=1e-4, rng=None, tol=CD_TOL) -> LassoFit:
    """Lasso with penalty chosen by K-fold cross-validated mean squared error.

    The lambda grid is computed once from the full sample and shared by all
    folds. Ties in CV error resolve toward the larger penalty.
    """
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if not np.all(np.isfinite(y)):
        raise ValueError("lasso target contains non-finite values")
    if n < folds:
        raise ValueError(f"need at least {folds} observations for {folds}-fold CV, got {n}")
    st_full = _Standardizer.fit(F)
    if not np.any(st_full.keep):
        warnings.warn("all lasso features are constant; fitting intercept only", RuntimeWarning, stacklevel=2)
        return LassoFit(float(y.mean()), np.zeros(F.shape[1]), 0.0, support_size=0)
    lambdas = lambda_grid(F, y, n_lambdas, ratio)
    if lambdas[0] == 0.0:
        return LassoFit(float(y.mean()), np.zeros(F.shape[1]), 0.0, lambdas, np.zeros(1), 0)
    rng = np.random.default_rng(0) if rng is None else rng
    labels = cv_folds(n, folds, rng)
    sse = np.zeros(lambdas.shape[0])
    for k in range(folds):
        tr = labels != k
        te = ~tr
        path, st = lasso_path(F[tr], y[tr], lambdas, tol)
        ybar = y[tr].mean()
        Fte = st.transform(F[te])
        pred = ybar + Fte @ path.T
        sse += np.sum((y[te, None] - pred) ** 2, axis=0)
    cv_error = sse / n
    best = int(np.argmin(cv_error))  # first minimum = largest lambda among ties
    path, st = lasso_path(F, y, lambdas[: best + 1], tol)
    intercept, coef = _unstandardize(path[-1], st, y.mean())
    return LassoFit(intercept, coef, float(lambdas[best]), lambdas, cv_error, int(np.sum(coef != 0)))
