"""Point estimators and inference.

SMD-type estimators (D-RSMD, R-SMD, plain SMD) solve the sample analogue of

    sum_j sum_{l != j} kappa_jl (Ptilde_j - r_l) (ytilde_l - Ptilde_l' theta) = 0

in closed form, where ``r_l`` is the orthogonal correction
``E[Ptilde_m kappa_ml | X_l] / E[kappa_ml | X_l]`` (zero for R-SMD). Their
covariance is the heteroskedasticity-robust plug-in

    M^-1 [ sum_j u_j u_j' e_j^2 ] M'^-1,
    u_j = sum_l kappa_jl (Ptilde_l - r_j).

Note the correction is indexed by the residual observation ``l`` in the
estimating equation but by ``j`` in ``u_j``; the two index choices are kept distinct.

GMM-type comparators (IV, two-step GMM, R-GMM, oracle GMM) share one
implementation with an HC0 sandwich covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import linalg, stats

from .exceptions import IdentificationError, InsufficientDataError
from .kernel import KernelMatrix
from .nuisance import NuisanceFits, OrthogonalCorrection

MAX_CONDITION = 1e10
Z_CRIT_5 = stats.norm.ppf(0.975)


class EstimatorTag(str, Enum):
    DRSMD = "D-RSMD"
    RSMD = "RSMD"
    SMD = "SMD"
    IV = "IV"
    GMM = "GMM"
    RGMM = "RGMM"
    GMM_ORACLE = "GMM (Oracle)"
    TSLS = "TSLS"


@dataclass
class EstimateResult:
    """Estimates with robust covariance and diagnostics.

    ``A_matrix`` is the identifying matrix: ``C_n = M / (n(n-1))`` for the
    SMD family, ``G'WG`` for GMM.
    """

    theta: np.ndarray
    vcov: np.ndarray
    estimator_tag: EstimatorTag
    n_used: int
    A_matrix: np.ndarray
    singular_values: np.ndarray
    param_names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, float)
        self.vcov = 0.5 * (np.asarray(self.vcov, float) + np.asarray(self.vcov, float).T)
        if not self.param_names:
            self.param_names = [f"theta{k}" for k in range(self.theta.size)]

    @property
    def p(self) -> int:
        return self.theta.size

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def condition_number(self) -> float:
        s = self.singular_values
        return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")

    @property
    def parameters(self):
        from .model import ParameterVector

        return ParameterVector.from_array(self.theta)

    def t_stats(self, hypothesized=None) -> np.ndarray:
        null = np.zeros(self.p) if hypothesized is None else np.asarray(hypothesized, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.theta - null) / self.se

    def p_values(self, hypothesized=None) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.t_stats(hypothesized)))

    def table(self) -> list[dict]:
        t = self.t_stats()
        pv = self.p_values()
        return [
            {"parameter": nm, "estimate": float(self.theta[k]), "se": float(self.se[k]),
             "t": float(t[k]), "p": float(pv[k]), "stars": significance_stars(pv[k])}
            for k, nm in enumerate(self.param_names)
        ]


def significance_stars(p: float) -> str:
    """``***`` 1%, ``**`` 5%, ``*`` 10%, ``.`` 15%."""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    if p < 0.15:
        return "."
    return ""


def _solve(M, b, max_condition):
    """Column-pivoted QR solve; singular values guard identification."""
    s = linalg.svdvals(M)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if not np.all(np.isfinite(M)) or s[0] == 0 or s[-1] <= s[0] * np.finfo(float).eps * M.shape[0]:
        raise IdentificationError("identifying matrix is singular", cond, s)
    if cond > max_condition:
        raise IdentificationError(
            f"identifying matrix condition number {cond:.3g} exceeds {max_condition:.1g}: "
            "its singular values are not bounded away from zero",
            cond, s,
        )
    Q, R, piv = linalg.qr(M, pivoting=True)
    sol = linalg.solve_triangular(R, Q.T @ b)
    x = np.empty_like(sol)
    x[piv] = sol
    return x, s


def _as2d(a):
    a = np.asarray(a, float)
    return a[:, None] if a.ndim == 1 else a


def smd_system(residual_P, residual_y, K: KernelMatrix, ratio=None):
    """Pair-summed system ``M theta = b`` of the SMD estimating equation.

    ``M = sum_j sum_{l != j} kappa_jl (Ptilde_j - r_l) Ptilde_l'`` and
    ``b`` the same with ``ytilde_l``. Returns ``(M, b)``.
    """
    Pt = _as2d(residual_P)
    yt = np.asarray(residual_y, float)
    KP = K.offdiag_dot(Pt)
    Ky = K.offdiag_dot(yt)
    M = Pt.T @ KP
    b = Pt.T @ Ky
    if ratio is not None:
        R = _as2d(ratio)
        cR = R * K.offdiag_rowsum()[:, None]
        M = M - cR.T @ Pt
        b = b - cR.T @ yt
    return M, b


def smd_moment(residual_P, residual_y, K: KernelMatrix, theta, ratio=None) -> np.ndarray:
    """Sample estimating equation at ``theta``, normalised by ``n(n-1)``.

    ``(1/(n(n-1))) sum_j sum_{l != j} kappa_jl (Ptilde_j - r_l)(ytilde_l - Ptilde_l' theta)``;
    ``ratio=None`` gives the uncorrected (non-orthogonal) version.
    """
    M, b = smd_system(residual_P, residual_y, K, ratio)
    n = K.n
    return (b - M @ np.asarray(theta, float)) / (n * (n - 1.0))


def smd_variance(residual_P, residual_y, K: KernelMatrix, theta, ratio=None, M=None):
    """Robust covariance ``M^-1 (sum_j u_j u_j' e_j^2) M'^-1`` of the SMD-type estimate.

    ``u_j = sum_{l=1}^n kappa_jl (Ptilde_l - r_j)``, the sum including ``l = j``.
    """
    Pt = _as2d(residual_P)
    yt = np.asarray(residual_y, float)
    if M is None:
        M, _ = smd_system(Pt, yt, K, ratio)
    eps = yt - Pt @ np.asarray(theta, float)
    U = K.dot(Pt)
    if ratio is not None:
        U = U - _as2d(ratio) * K.dot(np.ones(K.n))[:, None]
    meat = (U * (eps ** 2)[:, None]).T @ U
    Minv = linalg.inv(M)
    return Minv @ meat @ Minv.T


def _smd_result(Pt, yt, K, ratio, tag, max_condition, param_names):
    n, p = Pt.shape
    if K.n != n:
        raise ValueError(f"kernel has {K.n} rows but data have {n}")
    if p > n - 1:
        raise InsufficientDataError(f"p={p} parameters need n > p observations")
    M, b = smd_system(Pt, yt, K, ratio)
    theta, s = _solve(M, b, max_condition)
    V = smd_variance(Pt, yt, K, theta, ratio, M)
    nn = n * (n - 1.0)
    return EstimateResult(theta, V, tag, n, M / nn, s / nn, list(param_names or []))


def drsmd_estimate(fits: NuisanceFits, corr: OrthogonalCorrection, K: KernelMatrix,
                   max_condition=MAX_CONDITION, param_names=None) -> EstimateResult:
    """Debiased Robinson-SMD estimate with its robust covariance."""
    return _smd_result(fits.residual_P, fits.residual_y, K, corr.ratio, EstimatorTag.DRSMD,
                       max_condition, param_names)


def rsmd_estimate(fits: NuisanceFits, K: KernelMatrix, max_condition=MAX_CONDITION,
                  param_names=None) -> EstimateResult:
    """Robinson-SMD: the estimating equation without the orthogonal correction."""
    return _smd_result(fits.residual_P, fits.residual_y, K, None, EstimatorTag.RSMD,
                       max_condition, param_names)


def smd_estimate(y, P, K: KernelMatrix, max_condition=MAX_CONDITION, param_names=None) -> EstimateResult:
    """Plain SMD on untransformed ``y`` and ``P`` (no controls)."""
    return _smd_result(_as2d(P), np.asarray(y, float), K, None, EstimatorTag.SMD,
                       max_condition, param_names)


def drsmd_variance(fits: NuisanceFits, corr: OrthogonalCorrection | None, K: KernelMatrix, theta_hat):
    """Robust covariance of a D-RSMD (or, with ``corr=None``, R-SMD) estimate."""
    ratio = None if corr is None else corr.ratio
    return smd_variance(fits.residual_P, fits.residual_y, K, theta_hat, ratio)


def iv_gmm_estimate(y, regressors, instruments, exog_controls=None, add_constant=True,
                    max_condition=MAX_CONDITION, param_names=None, tag=None) -> EstimateResult:
    """Linear IV / two-step efficient GMM with HC0 sandwich covariance.

    Exogenous controls (and the constant) enter as both regressors and their
    own instruments. Just-identified problems give the IV solution; over-
    identified ones use first-step weight ``(Z'Z)^-1`` and second-step weight
    the inverse of the HC0 moment covariance. Only the coefficients on
    ``regressors`` are returned.
    """
    y = np.asarray(y, float)
    D = _as2d(regressors)
    Zi = _as2d(instruments)
    n, p = D.shape
    extra = [] if exog_controls is None else [_as2d(exog_controls)]
    if add_constant:
        extra.append(np.ones((n, 1)))
    Xf = np.column_stack([D, *extra]) if extra else D
    Zf = np.column_stack([Zi, *extra]) if extra else Zi
    k, r = Xf.shape[1], Zf.shape[1]
    if r < k:
        raise IdentificationError(f"under-identified: {r} instruments for {k} regressors")
    if n <= k:
        raise InsufficientDataError(f"n={n} too small for {k} regressors")
    G = Zf.T @ Xf / n
    gy = Zf.T @ y / n
    rankG = np.linalg.matrix_rank(G)
    if rankG < k:
        raise IdentificationError(f"Z'X has rank {rankG} < {k}: under-identified")

    def step(W):
        A = G.T @ W @ G
        beta, s = _solve(A, G.T @ W @ gy, max_condition)
        return beta, A, s

    W1 = linalg.pinvh(Zf.T @ Zf / n)
    beta, A, s = step(W1)
    W = W1
    if r > k:
        e = y - Xf @ beta
        S = (Zf * (e ** 2)[:, None]).T @ Zf / n
        W = linalg.pinvh(S)
        beta, A, s = step(W)
    e = y - Xf @ beta
    S = (Zf * (e ** 2)[:, None]).T @ Zf / n
    Ainv = linalg.inv(A)
    V = Ainv @ (G.T @ W @ S @ W @ G) @ Ainv / n
    if tag is None:
        tag = EstimatorTag.IV if r == k else EstimatorTag.GMM
    return EstimateResult(beta[:p], V[:p, :p], EstimatorTag(tag), n, A, s,
                          list(param_names or []), {"overidentified": r > k, "n_instruments": r})


def rgmm_estimate(fits: NuisanceFits, instruments, max_condition=MAX_CONDITION, param_names=None) -> EstimateResult:
    """GMM on partialled-out ``(ytilde, Ptilde)`` with demeaned instruments."""
    Zi = _as2d(instruments)
    Zi = Zi - Zi.mean(axis=0)
    return iv_gmm_estimate(fits.residual_y, fits.residual_P, Zi, None, add_constant=False,
                           max_condition=max_condition, param_names=param_names, tag=EstimatorTag.RGMM)


def gmm_oracle_estimate(y, P, instruments, true_f_features, max_condition=MAX_CONDITION,
                        param_names=None) -> EstimateResult:
    """GMM controlling for the true nonlinear control function through its features."""
    return iv_gmm_estimate(y, P, instruments, true_f_features, add_constant=True,
                           max_condition=max_condition, param_names=param_names, tag=EstimatorTag.GMM_ORACLE)


def t_test(result: EstimateResult, null_values=None, level=0.05) -> np.ndarray:
    """Two-sided normal t-test per coefficient; returns reject flags."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    se = result.se
    if np.any(se <= 0) or not np.all(np.isfinite(se)):
        raise ValueError("t-test undefined: a standard error is zero or non-finite")
    null = np.zeros(result.p) if null_values is None else np.asarray(null_values, float)
    crit = stats.norm.ppf(1.0 - level / 2.0)
    return np.abs(result.theta - null) / se > crit


@dataclass
class LinearCombination:
    estimate: float
    se: float

    @property
    def t(self) -> float:
        return self.estimate / self.se


def late(result: EstimateResult, x1_mean) -> LinearCombination:
    """``theta_w + theta_wx' E[X1]`` with a delta-method standard error."""
    g = np.concatenate([[1.0], np.atleast_1d(np.asarray(x1_mean, float))])
    if g.size != result.p:
        raise ValueError(f"x1_mean has {g.size - 1} entries, expected {result.p - 1}")
    return LinearCombination(float(g @ result.theta), float(np.sqrt(g @ result.vcov @ g)))


@dataclass
class PipelineResult:
    """Everything produced by one pass of the D-RSMD pipeline."""

    drsmd: EstimateResult
    rsmd: EstimateResult | None
    fits: NuisanceFits
    correction: OrthogonalCorrection
    kernel: KernelMatrix


def fit_drsmd(design, learner=None, kernel_spec=None, rng=None, with_rsmd=False,
              max_condition=MAX_CONDITION) -> PipelineResult:
    """Residualize, build the kernel, fit the correction, and estimate.

    ``design`` is a :class:`~drsmd.model.DesignMatrices`. One generator drives
    all fold assignments so a fixed ``rng`` seed reproduces the run exactly.
    """
    from .kernel import kernel_matrix
    from .nuisance import fit_orthogonal_correction, robinson_residualize

    rng = np.random.default_rng(rng)
    fits = robinson_residualize(design, learner, rng)
    K = kernel_matrix(design.Z, kernel_spec)
    corr = fit_orthogonal_correction(fits, K, design.X, learner, rng)
    names = design.param_names
    dr = drsmd_estimate(fits, corr, K, max_condition, names)
    rs = rsmd_estimate(fits, K, max_condition, names) if with_rsmd else None
    return PipelineResult(dr, rs, fits, corr, K)
