"""Conditional-mean nuisance functions.

Two groups of nuisances are estimated, all as regressions on the controls:

* the partialling-out step: ``E[y|X]`` and ``E[P|X]``, whose residuals are the
  inputs of every SMD-type estimator;
* the orthogonal correction: ``E[Ptilde_m kappa_ml | X_l]`` and
  ``E[kappa_ml | X_l]``, regressed from leave-one-out pair averages.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..kernel import KernelMatrix
from .lasso import lasso_cv
from .nw import nw_fit

KAPPA_FLOOR = 1e-6
FLOOR_WARN_SHARE = 0.05


class LearnerKind(str, Enum):
    LASSO_CV = "lasso_cv"
    NADARAYA_WATSON = "nadaraya_watson"


@dataclass(frozen=True)
class LearnerConfig:
    """Nuisance learner settings.

    ``nw_bandwidth=None`` selects the rule-of-thumb bandwidth; otherwise the
    value (scalar or per covariate) is used as a fixed bandwidth.
    """

    kind: LearnerKind = LearnerKind.LASSO_CV
    max_degree: int = 5
    folds: int = 5
    lambda_grid_size: int = 100
    lambda_ratio: float = 1e-4
    nw_bandwidth: float | tuple[float, ...] | None = None
    cross_fit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", LearnerKind(self.kind))
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.lambda_grid_size < 1:
            raise ValueError("lambda_grid_size must be >= 1")
        if not 0.0 < self.lambda_ratio < 1.0:
            raise ValueError("lambda_ratio must lie in (0, 1)")
        if self.nw_bandwidth is not None and np.any(np.asarray(self.nw_bandwidth, float) <= 0):
            raise ValueError("fixed bandwidths must be strictly positive")


def poly_features(X, max_degree: int) -> np.ndarray:
    """Per-covariate powers ``x, x^2, ..., x^max_degree`` (covariate-major, no cross terms)."""
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, q = X.shape
    out = np.empty((n, q * max_degree))
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(q):
            col = X[:, s]
            acc = np.ones(n)
            for d in range(max_degree):
                acc = acc * col
                out[:, s * max_degree + d] = acc
            block = out[:, s * max_degree:(s + 1) * max_degree]
            if not np.all(np.isfinite(block)):
                raise OverflowError(f"polynomial expansion of covariate column {s} overflowed")
    return out


@dataclass
class FittedLearner:
    """A fitted regression of one target on the controls."""

    kind: LearnerKind
    model: object
    max_degree: int
    meta: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        if self.kind is LearnerKind.LASSO_CV:
            return self.model.predict(poly_features(X, self.max_degree))
        return self.model.predict(X)


def lasso_cv_fit(features, target, cfg: LearnerConfig, rng=None):
    """Cross-validated lasso on an already expanded feature matrix."""
    return lasso_cv(features, target, folds=cfg.folds, n_lambdas=cfg.lambda_grid_size, ratio=cfg.lambda_ratio, rng=rng)


def fit_learner(X, target, cfg: LearnerConfig, rng=None) -> tuple[FittedLearner, np.ndarray]:
    """Fit ``target ~ X`` and return the learner plus in-sample fitted values.

    Nadaraya-Watson fitted values are leave-one-out.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    target = np.asarray(target, dtype=float)
    if X.shape[1] == 0:
        const = float(target.mean())
        fl = FittedLearner(cfg.kind, _Constant(const), cfg.max_degree, {"support": 0})
        return fl, np.full(target.shape[0], const)
    if cfg.kind is LearnerKind.LASSO_CV:
        F = poly_features(X, cfg.max_degree)
        fit = lasso_cv_fit(F, target, cfg, rng)
        fl = FittedLearner(cfg.kind, fit, cfg.max_degree, {"lambda": fit.lam, "support": fit.support_size})
        return fl, fit.predict(F)
    fit = nw_fit(X, target, cfg.nw_bandwidth)
    fitted = fit.predict(X, leave_one_out=True)
    fl = FittedLearner(cfg.kind, fit, cfg.max_degree, {"bandwidth": fit.bandwidth.tolist()})
    return fl, fitted


@dataclass
class _Constant:
    value: float

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value)


@dataclass
class NuisanceFits:
    """Partialling-out fits ``g_y = E[y|X]``, ``g_P = E[P|X]`` and their residuals."""

    g_y: np.ndarray
    g_P: np.ndarray
    residual_y: np.ndarray
    residual_P: np.ndarray
    learner_meta: dict = field(default_factory=dict)

    @classmethod
    def from_fitted(cls, y, P, g_y, g_P, meta=None) -> "NuisanceFits":
        y = np.asarray(y, float)
        P = np.asarray(P, float)
        if P.ndim == 1:
            P = P[:, None]
        g_y = np.asarray(g_y, float)
        g_P = np.asarray(g_P, float).reshape(P.shape)
        if not (np.all(np.isfinite(g_y)) and np.all(np.isfinite(g_P))):
            raise ValueError("nuisance fitted values are not finite")
        return cls(g_y, g_P, y - g_y, P - g_P, meta or {})

    @classmethod
    def raw(cls, y, P) -> "NuisanceFits":
        """No partialling out: residuals are the raw variables (plain SMD)."""
        P = np.asarray(P, float)
        if P.ndim == 1:
            P = P[:, None]
        return cls.from_fitted(y, P, np.zeros(len(y)), np.zeros_like(P))

    @property
    def n(self) -> int:
        return self.residual_y.shape[0]

    @property
    def p(self) -> int:
        return self.residual_P.shape[1]


def _fit_targets(X, targets, cfg: LearnerConfig, rng):
    """Fit each column of ``targets`` on ``X``; cross-fitting optional."""
    n, k = targets.shape
    fitted = np.empty_like(targets)
    meta = []
    if cfg.cross_fit:
        half = rng.permutation(np.arange(n) % 2)
        for j in range(k):
            m = {}
            for fold in (0, 1):
                tr, te = half != fold, half == fold
                learner, _ = fit_learner(X[tr], targets[tr, j], cfg, rng)
                fitted[te, j] = learner.predict(X[te])
                m[f"fold{fold}"] = learner.meta
            meta.append(m)
    else:
        for j in range(k):
            learner, fitted[:, j] = fit_learner(X, targets[:, j], cfg, rng)
            meta.append(learner.meta)
    return fitted, meta


def robinson_residualize(design, learner: LearnerConfig | None = None, rng=None) -> NuisanceFits:
    """Partial the controls out of ``y`` and of every column of ``P``.

    ``design`` is a :class:`~drsmd.model.DesignMatrices`; ``rng`` (a numpy
    Generator or seed) fixes the CV fold assignment.
    """
    cfg = learner or LearnerConfig()
    rng = np.random.default_rng(rng)
    targets = np.column_stack([design.y, design.P])
    fitted, meta = _fit_targets(design.X, targets, cfg, rng)
    return NuisanceFits.from_fitted(
        design.y, design.P, fitted[:, 0], fitted[:, 1:],
        {"y": meta[0], "P": meta[1:]},
    )


@dataclass
class OrthogonalCorrection:
    """Fitted ``E[Ptilde_m kappa_ml | X_l]``, ``E[kappa_ml | X_l]`` and their ratio.

    ``targets_T`` and ``targets_S`` are the leave-one-out pair averages the
    two regressions were fitted to.
    """

    g_ptilde: np.ndarray
    g_kappa: np.ndarray
    ratio: np.ndarray
    floor_hits: int = 0
    targets_T: np.ndarray | None = None
    targets_S: np.ndarray | None = None
    learner_meta: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, n, p) -> "OrthogonalCorrection":
        z = np.zeros((n, p))
        return cls(z, np.ones(n), z.copy())

    @classmethod
    def from_fitted(cls, g_ptilde, g_kappa, floor=KAPPA_FLOOR, **kw) -> "OrthogonalCorrection":
        g_ptilde = np.asarray(g_ptilde, float)
        if g_ptilde.ndim == 1:
            g_ptilde = g_ptilde[:, None]
        g_kappa = np.asarray(g_kappa, float)
        hits = int(np.sum(g_kappa < floor))
        g_kappa = np.maximum(g_kappa, floor)
        return cls(g_ptilde, g_kappa, g_ptilde / g_kappa[:, None], hits, **kw)


def correction_targets(residual_P, K: KernelMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out pair averages ``T_l`` and ``S_l``.

    ``T_l = sum_{m != l} Ptilde_m kappa_ml / (n-1)`` and
    ``S_l = sum_{m != l} kappa_ml / (n-1)``.
    """
    Pt = np.asarray(residual_P, float)
    if Pt.ndim == 1:
        Pt = Pt[:, None]
    n = Pt.shape[0]
    T = K.offdiag_dot(Pt) / (n - 1)
    S = K.offdiag_rowsum() / (n - 1)
    return T, S


def fit_orthogonal_correction(fits: NuisanceFits, K: KernelMatrix, X, learner: LearnerConfig | None = None,
                              rng=None) -> OrthogonalCorrection:
    """Estimate the two correction nuisances by regressing ``T`` and ``S`` on ``X``."""
    cfg = learner or LearnerConfig()
    if K.n != fits.n:
        raise ValueError(f"kernel has {K.n} rows but nuisance fits have {fits.n}")
    rng = np.random.default_rng(rng)
    T, S = correction_targets(fits.residual_P, K)
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    targets = np.column_stack([T, S])
    fitted, meta = _fit_targets(X, targets, cfg, rng)
    corr = OrthogonalCorrection.from_fitted(
        fitted[:, :-1], fitted[:, -1], targets_T=T, targets_S=S,
        learner_meta={"ptilde": meta[:-1], "kappa": meta[-1]},
    )
    if corr.floor_hits > FLOOR_WARN_SHARE * fits.n:
        warnings.warn(
            f"E[kappa|X] floored on {corr.floor_hits} of {fits.n} rows; instrument support looks degenerate",
            RuntimeWarning,
            stacklevel=2,
        )
    return corr
