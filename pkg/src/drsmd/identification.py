"""Identification diagnostics for SMD-type estimators.

The SMD, R-SMD and D-RSMD estimates exist only when their identifying
matrix ``C_n`` has singular values bounded away from zero. ``identification_report``
inspects ``C_n`` through its SVD. Besides the condition number it computes a
noise-calibrated statistic for the smallest singular value: ``s_min`` divided
by its U-statistic standard error. A sample matrix whose
population counterpart is rank deficient keeps a small but nonzero ``s_min``
from sampling noise, which a pure condition-number rule cannot distinguish
from a weakly identified parameter.

The second half of the module is a catalog of small linear models whose
identification status is known analytically, runnable as Monte Carlo
experiments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from threadpoolctl import threadpool_limits

from .estimators import (
    EstimatorTag,
    drsmd_estimate,
    iv_gmm_estimate,
    rsmd_estimate,
    smd_estimate,
    smd_system,
)
from .exceptions import DRSMDError
from .kernel import KernelMatrix, kernel_matrix
from .model import DesignMatrices
from .nuisance import LearnerConfig, NuisanceFits, OrthogonalCorrection, fit_orthogonal_correction, robinson_residualize
from .simulation import SIMULATION_KERNEL, aggregate, run_replications

NEAR_SINGULAR_CONDITION = 1e8
RANK_T_CRITICAL = 3.0
_SINGULAR_RTOL = 1e-12


class Verdict(str, Enum):
    IDENTIFIED = "Identified"
    NEAR_SINGULAR = "NearSingular"
    SINGULAR = "Singular"


@dataclass
class IdentificationReport:
    """SVD summary of an identifying matrix and the resulting verdict.

    ``rank_statistic`` is ``s_min / se(s_min)``; values below
    ``rank_critical`` mean the smallest singular value is indistinguishable
    from sampling noise.
    """

    estimator_tag: EstimatorTag
    matrix: np.ndarray
    singular_values: np.ndarray
    condition_number: float
    verdict: Verdict
    rank_statistic: float = float("nan")
    rank_critical: float = RANK_T_CRITICAL
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator_tag.value,
            "singular_values": [float(s) for s in self.singular_values],
            "condition_number": float(self.condition_number),
            "rank_statistic": float(self.rank_statistic),
            "verdict": self.verdict.value,
            "notes": list(self.notes),
        }

    def summary(self) -> str:
        sv = ", ".join(f"{s:.4g}" for s in self.singular_values)
        lines = [
            f"{self.estimator_tag.value}: {self.verdict.value}",
            f"  singular values: {sv}",
            f"  condition number: {self.condition_number:.4g}",
            f"  s_min / se(s_min): {self.rank_statistic:.3f} (critical {self.rank_critical:g})",
        ]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def smallest_singular_tstat(residual_P, K: KernelMatrix, ratio=None, M=None) -> float:
    """``s_min / se(s_min)`` for the pair-averaged identifying matrix.

    With ``(u, v)`` the singular pair of ``s_min``, ``s_min = u' C_n v`` is a
    U-statistic with kernel ``h(j, l) = kappa_jl u'(Ptilde_j - r_l) Ptilde_l' v``.
    Its variance is estimated by the exact second-order expansion

        4 (n-2) / (n(n-1)) zeta_1 + 2 / (n(n-1)) zeta_2,

    ``zeta_1`` from the leave-one-out projection and ``zeta_2`` from the pair
    second moment. The second term matters when the population matrix is
    rank deficient: the projection then vanishes along the null direction.
    """
    Pt = np.asarray(residual_P, float)
    Pt = Pt[:, None] if Pt.ndim == 1 else Pt
    n = Pt.shape[0]
    if M is None:
        M, _ = smd_system(Pt, np.zeros(n), K, ratio)
    C = M / (n * (n - 1.0))
    U, s, Vt = np.linalg.svd(C)
    u, v = U[:, -1], Vt[-1]
    alpha = Pt @ u
    beta = Pt @ v
    rho = np.zeros(n) if ratio is None else np.asarray(ratio, float).reshape(n, -1) @ u
    c = K.offdiag_rowsum()
    row = alpha * K.offdiag_dot(beta) - K.offdiag_dot(rho * beta)  # sum over l of h(j, l)
    col = beta * K.offdiag_dot(alpha) - rho * beta * c             # sum over j of h(j, l)
    h1 = (row + col) / (2.0 * (n - 1.0))
    zeta1 = np.var(h1, ddof=1)
    K2 = K.squared()
    a, b, b2 = alpha * beta, rho * beta, beta * beta
    sq = (alpha ** 2) @ K2.offdiag_dot(b2) - 2.0 * alpha @ K2.offdiag_dot(rho * b2) + rho ** 2 @ K2.offdiag_dot(b2)
    cross = a @ K2.offdiag_dot(a) - 2.0 * (alpha * b) @ K2.offdiag_dot(beta) + b @ K2.offdiag_dot(b)
    zeta2 = max(0.5 * (sq + cross) / (n * (n - 1.0)) - s[-1] ** 2, 0.0)
    var = 4.0 * (n - 2.0) / (n * (n - 1.0)) * zeta1 + 2.0 / (n * (n - 1.0)) * zeta2
    if var <= 0:
        return float("inf") if s[-1] > 0 else 0.0
    return float(s[-1] / np.sqrt(var))


def identification_report(fits: NuisanceFits, corr: OrthogonalCorrection | None, K: KernelMatrix,
                          tag: EstimatorTag | None = None, threshold: float = NEAR_SINGULAR_CONDITION,
                          rank_critical: float = RANK_T_CRITICAL) -> IdentificationReport:
    """Diagnose the identifying matrix of D-RSMD (``corr`` given), R-SMD, or SMD.

    Pass ``NuisanceFits.raw(y, P)`` and ``tag=EstimatorTag.SMD`` for plain SMD.
    Never raises for a degenerate matrix; the verdict reports it.
    """
    if tag is None:
        tag = EstimatorTag.DRSMD if corr is not None else EstimatorTag.RSMD
    ratio = None if corr is None else corr.ratio
    Pt = fits.residual_P
    n = Pt.shape[0]
    M, _ = smd_system(Pt, fits.residual_y, K, ratio)
    C = M / (n * (n - 1.0))
    notes = []
    if not np.all(np.isfinite(C)):
        s = np.full(C.shape[0], np.nan)
        return IdentificationReport(EstimatorTag(tag), C, s, float("inf"), Verdict.SINGULAR,
                                    notes=["identifying matrix has non-finite entries"])
    s = np.linalg.svd(C, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    tstat = smallest_singular_tstat(Pt, K, ratio, M)
    if s[0] == 0 or s[-1] <= _SINGULAR_RTOL * s[0]:
        verdict = Verdict.SINGULAR
        notes.append("smallest singular value is zero to machine precision")
    elif cond > threshold:
        verdict = Verdict.NEAR_SINGULAR
        notes.append(f"condition number exceeds {threshold:.1g}")
    elif tstat < rank_critical:
        verdict = Verdict.NEAR_SINGULAR
        notes.append("smallest singular value is within sampling noise of zero")
    else:
        verdict = Verdict.IDENTIFIED
    if verdict is not Verdict.IDENTIFIED:
        notes.append("standard errors of the affected combination will be very large")
    return IdentificationReport(EstimatorTag(tag), C, s, cond, verdict, tstat, rank_critical, notes)


# --------------------------------------------------------------------------
# catalog of analytic examples


class CatalogModel(str, Enum):
    M1 = "M1"  # y = b1 W1 + b2 W2, both first stages in one scalar Z
    M2 = "M2"  # same outcome, two instruments
    M3 = "M3"  # y = b1 W + b2 W X, X independent of Z
    M4 = "M4"  # y = b1 W + b2 W X + X, partialling out X


@dataclass(frozen=True)
class CatalogVariant:
    """One parameterisation of a catalog model.

    ``z_kind`` is ``"normal"`` (unit variance, mean ``z_mean``) or
    ``"binary"`` (Bernoulli(0.5)). ``x_mean`` is the mean of the unit-variance
    normal covariate in M3/M4. Errors are unit normals with
    ``corr(u, v_k) = error_corr``.
    """

    model: CatalogModel
    name: str
    z_kind: str = "normal"
    z_mean: float = 0.0
    x_mean: float = 0.0
    beta: tuple[float, ...] = (2.0, 3.0)
    first_stage: tuple[tuple[float, ...], ...] = ((4.0,), (1.0,))
    error_corr: float = 0.5
    estimators: tuple[tuple[EstimatorTag, tuple[str, ...]], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "model", CatalogModel(self.model))
        if self.z_kind not in ("normal", "binary"):
            raise ValueError("z_kind must be 'normal' or 'binary'")
        if not -1 < self.error_corr < 1:
            raise ValueError("error_corr must lie in (-1, 1)")


_SMD, _RSMD, _DRSMD, _TSLS = EstimatorTag.SMD, EstimatorTag.RSMD, EstimatorTag.DRSMD, EstimatorTag.TSLS

CATALOG: dict[str, CatalogVariant] = {
    v.name: v
    for v in [
        CatalogVariant(CatalogModel.M1, "single", estimators=((_SMD, ("Z1",)),)),
        CatalogVariant(CatalogModel.M2, "ident1", first_stage=((4.0, 1.0), (1.0, 3.0)),
                       estimators=((_SMD, ("Z1", "Z2")), (_SMD, ("Z1",)), (_SMD, ("Z2",)), (_TSLS, ("Z1", "Z2")))),
        CatalogVariant(CatalogModel.M2, "ident2", z_kind="binary", first_stage=((4.0, 1.0), (1.0, 3.0)),
                       estimators=((_SMD, ("Z1", "Z2")), (_SMD, ("Z1",)), (_SMD, ("Z2",)), (_TSLS, ("Z1", "Z2")))),
        CatalogVariant(CatalogModel.M3, "identint1", z_kind="binary", x_mean=0.0, first_stage=((2.0,),),
                       estimators=((_SMD, ("Z1",)),)),
        CatalogVariant(CatalogModel.M3, "identint2", z_kind="binary", x_mean=1.0, first_stage=((2.0,),),
                       estimators=((_SMD, ("Z1",)),)),
        CatalogVariant(CatalogModel.M4, "identint3", z_mean=0.0, x_mean=0.0, beta=(1.0, 1.0),
                       first_stage=((2.0,),), estimators=((_RSMD, ("Z1",)), (_DRSMD, ("Z1",)))),
        CatalogVariant(CatalogModel.M4, "identint4", z_mean=1.0, x_mean=1.0, beta=(1.0, 1.0),
                       first_stage=((2.0,),), estimators=((_RSMD, ("Z1",)), (_DRSMD, ("Z1",)))),
    ]
}
IDENTIFIED_VARIANTS = ("ident2",)


def catalog_variant(model_id, variant: str, **overrides) -> CatalogVariant:
    """Look up a named variant of ``model_id``; keyword overrides replace fields."""
    model_id = CatalogModel(model_id)
    v = CATALOG.get(variant)
    if v is None or v.model is not model_id:
        known = sorted(k for k, c in CATALOG.items() if c.model is model_id)
        raise ValueError(f"unknown variant {variant!r} for {model_id.value}; known: {known}")
    return replace(v, **overrides) if overrides else v


@dataclass
class CatalogDraw:
    y: np.ndarray
    P: np.ndarray
    X: np.ndarray  # n x 0 when there are no controls
    Z: dict[str, np.ndarray]
    theta0: np.ndarray
    param_names: list[str]

    def design(self, instruments) -> DesignMatrices:
        Z = np.column_stack([self.Z[name] for name in instruments])
        return DesignMatrices(self.y, self.P, self.X, Z, self.param_names)


def draw_catalog(v: CatalogVariant, n: int, rng) -> CatalogDraw:
    """Simulate one sample of a catalog variant."""
    rng = np.random.default_rng(rng)
    n_z = 2 if v.model is CatalogModel.M2 else 1

    def instrument():
        if v.z_kind == "binary":
            return (rng.random(n) < 0.5).astype(float)
        return v.z_mean + rng.standard_normal(n)

    Z = {f"Z{k + 1}": instrument() for k in range(n_z)}
    Zm = np.column_stack(list(Z.values()))
    beta = np.asarray(v.beta, float)
    r = v.error_corr
    if v.model in (CatalogModel.M1, CatalogModel.M2):
        V = rng.standard_normal((n, 2))
        u = r * V[:, 0] + r * V[:, 1] + np.sqrt(max(1.0 - 2 * r * r, 0.0)) * rng.standard_normal(n)
        pi = np.array(v.first_stage, float)  # row k: coefficients of W_k on the instruments
        if v.model is CatalogModel.M1:
            W = Zm[:, :1] * pi[:, 0][None, :] + V
        else:
            W = Zm @ pi.T + V
        y = W @ beta + u
        return CatalogDraw(y, W, np.empty((n, 0)), Z, beta, ["W1", "W2"])
    x = v.x_mean + rng.standard_normal(n)
    vv = rng.standard_normal(n)
    u = r * vv + np.sqrt(1.0 - r * r) * rng.standard_normal(n)
    w = v.first_stage[0][0] * Zm[:, 0] + vv
    P = np.column_stack([w, w * x])
    y = P @ beta + u
    if v.model is CatalogModel.M4:
        y = y + x
        return CatalogDraw(y, P, x[:, None], Z, beta, ["W", "W*X"])
    return CatalogDraw(y, P, np.empty((n, 0)), Z, beta, ["W", "W*X"])


def _fit_catalog(draw: CatalogDraw, tag: EstimatorTag, instruments, learner, rng, diagnose=False):
    des = draw.design(instruments)
    if tag is EstimatorTag.TSLS:
        return iv_gmm_estimate(des.y, des.P, des.Z, None, add_constant=True, param_names=des.param_names, tag=tag)
    K = kernel_matrix(des.Z, SIMULATION_KERNEL)
    if tag is EstimatorTag.SMD:
        fits, corr = NuisanceFits.raw(des.y, des.P), None
    else:
        fits = robinson_residualize(des, learner, rng)
        corr = None
        if tag is EstimatorTag.DRSMD:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                corr = fit_orthogonal_correction(fits, K, des.X, learner, rng)
    if diagnose:
        return identification_report(fits, corr, K, tag)
    if tag is EstimatorTag.SMD:
        return smd_estimate(des.y, des.P, K, param_names=des.param_names)
    if tag is EstimatorTag.RSMD:
        return rsmd_estimate(fits, K, param_names=des.param_names)
    return drsmd_estimate(fits, corr, K, param_names=des.param_names)


def catalog_identification(model_id, variant: str, n: int = 2000, seed: int = 0,
                           learner: LearnerConfig | None = None) -> list[IdentificationReport]:
    """Identification reports for every SMD-type estimator of a variant on one draw."""
    v = catalog_variant(model_id, variant)
    ss = np.random.SeedSequence([seed, 0])
    data_ss, fit_ss = ss.spawn(2)
    draw = draw_catalog(v, n, np.random.default_rng(data_ss))
    rng = np.random.default_rng(fit_ss)
    learner = learner or LearnerConfig()
    return [_fit_catalog(draw, tag, inst, learner, rng, diagnose=True)
            for tag, inst in v.estimators if tag is not EstimatorTag.TSLS]


@dataclass(frozen=True)
class _CatalogSpec:
    """Adapter exposing the attributes ``aggregate`` reads."""

    tag: EstimatorTag
    instruments: tuple[str, ...]

    @property
    def instrument_label(self) -> str:
        inner = ", ".join(self.instruments)
        return f"({inner})" if len(self.instruments) > 1 else inner

    @property
    def dataset_label(self) -> str:
        return "full"


def _catalog_replication(args):
    v, n, learner, seed, rep = args
    ss = np.random.SeedSequence([seed, rep])
    data_ss, fit_ss = ss.spawn(2)
    out = []
    with threadpool_limits(1):
        draw = draw_catalog(v, n, np.random.default_rng(data_ss))
        rng = np.random.default_rng(fit_ss)
        for tag, inst in v.estimators:
            try:
                res = _fit_catalog(draw, tag, inst, learner, rng)
                out.append((res.theta.copy(), res.se.copy()))
            except (DRSMDError, np.linalg.LinAlgError, ValueError) as exc:
                out.append(str(exc))
    return rep, out


def catalog_monte_carlo(model_id, variant: str, n: int = 2000, reps: int = 200, seed: int = 0,
                         workers: int = 1, learner: LearnerConfig | None = None, **overrides):
    """Monte Carlo metrics for every estimator listed in a catalog variant.

    Rows carry Med.Bias, MAD, Med.SE, RR, the mean bias, the mean of the
    per-replication asymptotic SEs (``mean_se``) and the Monte Carlo standard
    deviation of the estimates (``sd_estimate``).
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    v = catalog_variant(model_id, variant, **overrides)
    learner = learner or LearnerConfig()
    jobs = [(v, n, learner, int(seed), r) for r in range(reps)]
    results = run_replications(_catalog_replication, jobs, workers)
    specs = [_CatalogSpec(tag, inst) for tag, inst in v.estimators]
    theta0 = draw_catalog(v, 10, np.random.default_rng(0)).theta0
    names = ["W1", "W2"] if v.model in (CatalogModel.M1, CatalogModel.M2) else ["W", "W*X"]
    return aggregate(results, specs, [theta0] * len(specs), [names] * len(specs))
