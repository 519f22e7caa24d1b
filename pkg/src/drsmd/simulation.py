"""Monte Carlo experiments on the binary-treatment benchmark design.

The benchmark draws

    y = theta_w W + theta_wx W X1 + sum_{q<=S} (beta_1 X_q + beta_2 X_q^2) + eps
    W = 1{theta_z0 Z + theta_z3 Z^3 + sum_{q<=S} (alpha_1 X_q + alpha_3 X_q^3) > -v}

with ``X = X* + 0.4 Z`` and ``(eps, v)`` correlated normals. ``Z`` is either the
binary ``Z1`` or the three-valued ``Z2 = Z1 + B``.

Replications run on independent random streams derived from
``SeedSequence([seed, rep])`` and are aggregated after sorting by replication
index, so results do not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from itertools import product

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .estimators import (
    EstimatorTag,
    Z_CRIT_5,
    drsmd_estimate,
    gmm_oracle_estimate,
    iv_gmm_estimate,
    rgmm_estimate,
    rsmd_estimate,
    smd_estimate,
)
from .exceptions import DRSMDError
from .kernel import KernelSpec, kernel_matrix
from .model import Dataset, DesignMatrices
from .nuisance import LearnerConfig, LearnerKind, fit_orthogonal_correction, robinson_residualize

FAILURE_WARN_SHARE = 0.10
SIMULATION_KERNEL = KernelSpec(sigma_t=1.0, standardize_instruments=False)


class X1Kind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


@dataclass(frozen=True)
class DGPConfig:
    """Benchmark design parameters.

    ``S`` is the number of active controls; only ``min(S, q_X)`` of them exist
    when ``q_X < S``. ``x1_kind='binary'`` replaces the first control by an
    independent Bernoulli(``x1_prob``) draw. ``p_b`` is the success
    probability of the Bernoulli added to ``Z1`` to form ``Z2``.
    """

    n: int = 3000
    q_X: int = 3
    S: int = 5
    theta_w0: float = 2.0
    theta_wx0: float = 3.0
    theta_z0: float = 3.0
    theta_z3: float = 4.0
    alpha_1: float = 1.0
    alpha_3: float = 2.0
    beta_1: float = 1.0
    beta_2: float = -3.0
    instrument_in_dgp: str = "Z1"
    x1_kind: X1Kind = X1Kind.CONTINUOUS
    x1_prob: float = 0.2
    error_cov: float = 4.0 / 9.0
    z_coupling: float = 0.4
    z1_prob: float = 0.318
    p_b: float = 0.35

    def __post_init__(self):
        object.__setattr__(self, "x1_kind", X1Kind(self.x1_kind))
        if self.n < 100:
            raise ValueError("n must be at least 100")
        if self.q_X < 1 or self.S < 1:
            raise ValueError("q_X and S must be at least 1")
        if self.instrument_in_dgp not in ("Z1", "Z2"):
            raise ValueError("instrument_in_dgp must be 'Z1' or 'Z2'")
        if not -1.0 < self.error_cov < 1.0:
            raise ValueError("error_cov must lie in (-1, 1)")
        for name in ("z1_prob", "p_b", "x1_prob"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        vals = [getattr(self, f) for f in self.__dataclass_fields__ if isinstance(getattr(self, f), float)]
        if not np.all(np.isfinite(vals)):
            raise ValueError("DGP parameters must be finite")

    @property
    def s_eff(self) -> int:
        return min(self.S, self.q_X)

    @property
    def theta0(self) -> np.ndarray:
        return np.array([self.theta_w0, self.theta_wx0])

    @property
    def control_names(self) -> list[str]:
        return [f"x{q + 1}" for q in range(self.q_X)]

    def instrument_support(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points and probabilities of the instrument driving ``W``."""
        p1, pb = self.z1_prob, self.p_b
        if self.instrument_in_dgp == "Z1":
            return np.array([0.0, 1.0]), np.array([1 - p1, p1])
        return np.array([0.0, 1.0, 2.0]), np.array([(1 - p1) * (1 - pb), p1 * (1 - pb) + (1 - p1) * pb, p1 * pb])


def _treatment_index(cfg: DGPConfig, z, X):
    s = cfg.s_eff
    Xa = X[..., :s]
    return cfg.theta_z0 * z + cfg.theta_z3 * z ** 3 + np.sum(cfg.alpha_1 * Xa + cfg.alpha_3 * Xa ** 3, axis=-1)


def control_function(cfg: DGPConfig, X) -> np.ndarray:
    """The nonparametric part ``sum_{q<=S} (beta_1 X_q + beta_2 X_q^2)``."""
    Xa = np.asarray(X, float)[..., : cfg.s_eff]
    return np.sum(cfg.beta_1 * Xa + cfg.beta_2 * Xa ** 2, axis=-1)


def draw_errors(cfg: DGPConfig, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Outcome and selection errors: unit normals with covariance ``cfg.error_cov``."""
    c = cfg.error_cov
    e1 = rng.standard_normal(n)
    e2 = rng.standard_normal(n)
    return e1, c * e1 + np.sqrt(1.0 - c * c) * e2


def generate_benchmark(cfg: DGPConfig, rng) -> Dataset:
    """Draw one sample: columns ``y, W, Z1, Z2, x1..x{q_X}``."""
    rng = np.random.default_rng(rng)
    n = cfg.n
    z1 = (rng.random(n) < cfg.z1_prob).astype(float)
    z2 = z1 + (rng.random(n) < cfg.p_b).astype(float)
    zd = z1 if cfg.instrument_in_dgp == "Z1" else z2
    X = rng.standard_normal((n, cfg.q_X)) + cfg.z_coupling * zd[:, None]
    if cfg.x1_kind is X1Kind.BINARY:
        X[:, 0] = (rng.random(n) < cfg.x1_prob).astype(float)
    eps, v = draw_errors(cfg, n, rng)
    W = (_treatment_index(cfg, zd, X) > -v).astype(float)
    y = cfg.theta_w0 * W + cfg.theta_wx0 * W * X[:, 0] + control_function(cfg, X) + eps
    cols = {"y": y, "W": W, "Z1": z1, "Z2": z2}
    cols.update({name: X[:, q] for q, name in enumerate(cfg.control_names)})
    return Dataset(cols)


def oracle_features(cfg: DGPConfig, X) -> np.ndarray:
    """Columns ``X_q, X_q^2`` (``q <= S``) spanning the true control function.

    Constant columns and exact duplicates (``X1^2 = X1`` for binary ``X1``) are
    dropped so the oracle design keeps full rank.
    """
    X = np.asarray(X, float)
    cols = []
    for q in range(cfg.s_eff):
        for col in (X[:, q], X[:, q] ** 2):
            if np.ptp(col) == 0 or any(np.array_equal(col, c) for c in cols):
                continue
            cols.append(col)
    return np.column_stack(cols) if cols else np.empty((X.shape[0], 0))


# --------------------------------------------------------------------------
# estimator specifications


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator to run in each replication.

    ``instruments`` are column names or products written ``"Z1*x1"``.
    ``subset=("x1", 1.0)`` restricts the sample to rows where ``x1 == 1`` and
    estimates the single coefficient on ``W`` there.
    """

    tag: EstimatorTag
    instruments: tuple[str, ...] = ("Z1",)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    subset: tuple[str, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tag", EstimatorTag(self.tag))
        object.__setattr__(self, "instruments", tuple(self.instruments))

    @property
    def instrument_label(self) -> str:
        inner = ", ".join(self.instruments)
        return f"({inner})" if len(self.instruments) > 1 else inner

    @property
    def dataset_label(self) -> str:
        return "full" if self.subset is None else f"{self.subset[0]}=={self.subset[1]:g}"


def instrument_matrix(data: Dataset, exprs) -> np.ndarray:
    cols = []
    for expr in exprs:
        col = np.ones(data.n)
        for name in expr.split("*"):
            col = col * data[name.strip()]
        cols.append(col)
    return np.column_stack(cols)


def _design(data: Dataset, cfg: DGPConfig, spec: EstimatorSpec):
    if spec.subset is not None:
        name, value = spec.subset
        data = data.take(np.flatnonzero(data[name] == value))
        P = data["W"][:, None]
        names = ["W"]
    else:
        P = np.column_stack([data["W"], data["W"] * data["x1"]])
        names = ["W", "W*x1"]
    X = data.matrix(cfg.control_names)
    des = DesignMatrices(data["y"], P, X, instrument_matrix(data, spec.instruments), names)
    return data, des


def spec_truth(cfg: DGPConfig, spec: EstimatorSpec) -> np.ndarray:
    if spec.subset is None:
        return cfg.theta0
    name, value = spec.subset
    if name != "x1":
        raise ValueError("subsets are only defined on x1")
    return np.array([cfg.theta_w0 + cfg.theta_wx0 * value])


def run_spec(data: Dataset, cfg: DGPConfig, spec: EstimatorSpec, rng, cache=None):
    """Fit one estimator spec on one sample; returns an EstimateResult."""
    sub, des = _design(data, cfg, spec)
    cache = {} if cache is None else cache
    tag = spec.tag

    def fits():
        key = (spec.learner, spec.subset)
        if key not in cache:
            cache[key] = robinson_residualize(des, spec.learner, rng)
        return cache[key]

    if tag in (EstimatorTag.DRSMD, EstimatorTag.RSMD, EstimatorTag.SMD):
        K = kernel_matrix(des.Z, SIMULATION_KERNEL)
        if tag is EstimatorTag.SMD:
            return smd_estimate(des.y, des.P, K, param_names=des.param_names)
        nf = fits()
        if tag is EstimatorTag.RSMD:
            return rsmd_estimate(nf, K, param_names=des.param_names)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            corr = fit_orthogonal_correction(nf, K, des.X, spec.learner, rng)
        return drsmd_estimate(nf, corr, K, param_names=des.param_names)
    if tag is EstimatorTag.RGMM:
        return rgmm_estimate(fits(), des.Z, param_names=des.param_names)
    if tag in (EstimatorTag.GMM, EstimatorTag.IV, EstimatorTag.TSLS):
        return iv_gmm_estimate(des.y, des.P, des.Z, des.X, param_names=des.param_names, tag=tag)
    if tag is EstimatorTag.GMM_ORACLE:
        return gmm_oracle_estimate(des.y, des.P, des.Z, oracle_features(cfg, des.X), param_names=des.param_names)
    raise ValueError(f"estimator {tag.value!r} is not available in the benchmark runner")


def _replication(args):
    cfg, specs, seed, rep = args
    ss = np.random.SeedSequence([seed, rep])
    data_ss, fit_ss = ss.spawn(2)
    out = []
    with threadpool_limits(1):
        data = generate_benchmark(cfg, np.random.default_rng(data_ss))
        rng = np.random.default_rng(fit_ss)
        cache = {}
        for spec in specs:
            try:
                res = run_spec(data, cfg, spec, rng, cache)
                out.append((res.theta.copy(), res.se.copy()))
            except (DRSMDError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
                out.append(str(exc))
    return rep, out


def run_replications(worker, jobs, workers=1):
    """Evaluate ``worker(job)`` for every job, in order, optionally in processes."""
    if workers <= 1:
        return [worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# --------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRow:
    """Summary of one parameter of one estimator over replications.

    ``med_se`` and ``mean_se`` summarise the per-replication asymptotic
    standard errors; ``sd_estimate`` is the Monte Carlo standard deviation of
    the estimates.
    """

    estimator_tag: str
    instrument_set: str
    parameter: str
    med_bias: float
    mad: float
    med_se: float
    rr: float
    reps: int
    failures: int = 0
    mean_bias: float = float("nan")
    mean_se: float = float("nan")
    sd_estimate: float = float("nan")
    dataset: str = "full"

    def __post_init__(self):
        if self.reps > 0 and not (self.mad >= 0 and 0.0 <= self.rr <= 1.0):
            raise ValueError("MetricsRow invariant violated: mad >= 0 and rr in [0, 1]")


def summarize(estimates, ses, truth, tag, instruments, param_names, failures=0, dataset="full") -> list[MetricsRow]:
    """Med.Bias, MAD, Med.SE and 5% rejection rate per parameter."""
    est = np.asarray(estimates, float).reshape(-1, len(param_names))
    se = np.asarray(ses, float).reshape(-1, len(param_names))
    rows = []
    for k, name in enumerate(param_names):
        if est.shape[0] == 0:
            rows.append(MetricsRow(str(tag), instruments, name, *([float("nan")] * 4), 0, failures, dataset=dataset))
            continue
        err = est[:, k] - truth[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            reject = np.abs(err) / se[:, k] > Z_CRIT_5
        rows.append(MetricsRow(
            estimator_tag=str(tag),
            instrument_set=instruments,
            parameter=name,
            med_bias=float(np.median(err)),
            mad=float(np.median(np.abs(err))),
            med_se=float(np.median(se[:, k])),
            rr=float(np.mean(reject)),
            reps=int(est.shape[0]),
            failures=int(failures),
            mean_bias=float(np.mean(err)),
            mean_se=float(np.mean(se[:, k])),
            sd_estimate=float(np.std(est[:, k], ddof=1)) if est.shape[0] > 1 else 0.0,
            dataset=dataset,
        ))
    return rows


def aggregate(results, specs, truths, param_names) -> list[MetricsRow]:
    """Turn ``[(rep, [per-spec outcome])]`` into metrics rows."""
    results = sorted(results, key=lambda r: r[0])
    rows = []
    for i, spec in enumerate(specs):
        ok = [r[1][i] for r in results if not isinstance(r[1][i], str)]
        failures = len(results) - len(ok)
        if results and failures > FAILURE_WARN_SHARE * len(results):
            warnings.warn(
                f"{spec.tag.value} {spec.instrument_label}: {failures} of {len(results)} replications failed",
                RuntimeWarning,
                stacklevel=2,
            )
        p = len(param_names[i])
        est = np.array([o[0] for o in ok]).reshape(-1, p)
        se = np.array([o[1] for o in ok]).reshape(-1, p)
        rows += summarize(est, se, truths[i], spec.tag.value, spec.instrument_label, param_names[i],
                          failures, spec.dataset_label)
    return rows


def run_experiment(cfg: DGPConfig, estimator_specs, reps: int, seed: int, workers: int = 1) -> list[MetricsRow]:
    """Monte Carlo evaluation of each estimator spec on the benchmark design.

    Replications whose estimator raises (e.g. an ill-conditioned identifying
    matrix) are excluded from that estimator's statistics and counted in
    ``failures``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    specs = list(estimator_specs)
    jobs = [(cfg, specs, int(seed), r) for r in range(reps)]
    results = run_replications(_replication, jobs, workers)
    truths = [spec_truth(cfg, s) for s in specs]
    names = [["W"] if s.subset is not None else ["W", "W*x1"] for s in specs]
    return aggregate(results, specs, truths, names)


# --------------------------------------------------------------------------
# scenarios


def benchmark_specs(q_X: int) -> list[EstimatorSpec]:
    """The estimator line-up compared on the benchmark design."""
    z, zx, zz = ("Z1",), ("Z1", "Z1*x1"), ("Z1", "Z2")
    specs = [
        EstimatorSpec(EstimatorTag.DRSMD, z),
        EstimatorSpec(EstimatorTag.DRSMD, ("Z2",)),
        EstimatorSpec(EstimatorTag.DRSMD, zx),
        EstimatorSpec(EstimatorTag.RSMD, z),
        EstimatorSpec(EstimatorTag.GMM_ORACLE, zx),
    ]
    if q_X > 3:
        specs += [EstimatorSpec(EstimatorTag.GMM, zx), EstimatorSpec(EstimatorTag.GMM, zz),
                  EstimatorSpec(EstimatorTag.RGMM, zx)]
    return specs


def split_sample_scenario(cfg: DGPConfig | None = None, reps=200, seed=0, workers=1) -> list[MetricsRow]:
    """Full-sample D-RSMD against estimators fitted separately on ``x1 = 1`` and ``x1 = 0``.

    ``x1`` is binary; subset estimators have the single coefficient on ``W``,
    whose true value in subset ``x1 = v`` is ``theta_w0 + theta_wx0 v``.
    """
    cfg = cfg or DGPConfig(q_X=30, x1_kind=X1Kind.BINARY, x1_prob=0.2)
    if cfg.x1_kind is not X1Kind.BINARY:
        cfg = replace(cfg, x1_kind=X1Kind.BINARY)
    specs = [EstimatorSpec(EstimatorTag.DRSMD, ("Z1",))]
    for v in (1.0, 0.0):
        specs.append(EstimatorSpec(EstimatorTag.RGMM, ("Z1",), subset=("x1", v)))
    specs.append(EstimatorSpec(EstimatorTag.RGMM, ("Z1", "Z1*x1")))
    for v in (1.0, 0.0):
        specs.append(EstimatorSpec(EstimatorTag.GMM_ORACLE, ("Z1",), subset=("x1", v)))
    specs.append(EstimatorSpec(EstimatorTag.GMM_ORACLE, ("Z1", "Z1*x1")))
    return run_experiment(cfg, specs, reps, seed, workers)


def categorical_scenario(n=3000, q_X=1, reps=200, seed=0, workers=1) -> list[MetricsRow]:
    """Three-valued instrument ``Z2`` drives the treatment.

    With a single control the partialling-out for R-SMD and R-GMM uses
    Nadaraya-Watson with the rule-of-thumb bandwidth; D-RSMD keeps the lasso.
    Only the first five controls carry nonzero coefficients.
    """
    cfg = DGPConfig(n=n, q_X=q_X, instrument_in_dgp="Z2")
    nw = LearnerConfig(kind=LearnerKind.NADARAYA_WATSON) if q_X <= 3 else LearnerConfig()
    specs = []
    for inst in (("Z1",), ("Z2",), ("Z1", "Z1*x1"), ("Z2", "Z2*x1")):
        specs.append(EstimatorSpec(EstimatorTag.DRSMD, inst))
    for inst in (("Z1",), ("Z2",), ("Z1", "Z1*x1"), ("Z2", "Z2*x1")):
        specs.append(EstimatorSpec(EstimatorTag.RSMD, inst, nw))
    for inst in (("Z1", "Z1*x1"), ("Z2", "Z2*x1")):
        specs.append(EstimatorSpec(EstimatorTag.RGMM, inst, nw))
        specs.append(EstimatorSpec(EstimatorTag.GMM, inst))
        specs.append(EstimatorSpec(EstimatorTag.GMM_ORACLE, inst))
    return run_experiment(cfg, specs, reps, seed, workers)


# --------------------------------------------------------------------------
# output

METRIC_COLUMNS = ["dataset", "estimator_tag", "instrument_set", "parameter", "med_bias", "mad", "med_se", "rr",
                  "reps", "failures", "mean_bias", "mean_se", "sd_estimate"]


def metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in METRIC_COLUMNS])
    return buf.getvalue()


def metrics_to_records(rows) -> list[dict]:
    return [{c: asdict(r)[c] for c in METRIC_COLUMNS} for r in rows]


def metrics_to_text(rows) -> str:
    """Aligned table with the Med.Bias / MAD / Med.SE / RR layout."""
    head = ["Dataset", "Estimator", "Instrument", "Param", "Med.Bias", "MAD", "Med.SE", "RR",
            "Reps", "Fail", "SD(est)", "Mean.SE"]
    body = [[r.dataset, r.estimator_tag, r.instrument_set, r.parameter, f"{r.med_bias:.3f}", f"{r.mad:.3f}",
             f"{r.med_se:.3f}", f"{r.rr:.3f}", str(r.reps), str(r.failures), f"{r.sd_estimate:.3f}",
             f"{r.mean_se:.3f}"] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) if i > 3 else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    lines = [fmt(head), "-" * (sum(widths) + 2 * (len(widths) - 1))]
    lines += [fmt(b) for b in body]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# population nuisances of the benchmark (for orthogonality checks)


class BenchmarkTruth:
    """Exact conditional means of the benchmark design.

    Valid when the kernel is built from the instrument that drives ``W``
    (unstandardised, unit scale) and ``x1`` is continuous. The conditional
    expectations given ``X`` mix over the instrument's posterior; the
    ``E[Ptilde | Z = z]`` terms are integrated by tensor Gauss-Hermite
    quadrature, so ``q_X`` is limited to 3.
    """

    def __init__(self, cfg: DGPConfig, nodes: int = 60):
        if cfg.x1_kind is not X1Kind.CONTINUOUS:
            raise ValueError("exact nuisances are implemented for continuous x1 only")
        if cfg.q_X > 3:
            raise ValueError("quadrature over the controls supports q_X <= 3")
        self.cfg = cfg
        self.support, self.prob = cfg.instrument_support()
        d = self.support[:, None] - self.support[None, :]
        self.kappa_zz = np.exp(-0.5 * d ** 2)
        self.kbar = self.kappa_zz @ self.prob  # E[kappa(Z_m - z)] per support point z
        self._e_ptilde = self._conditional_ptilde(nodes)
        self.h = self.kappa_zz @ (self.prob[:, None] * self._e_ptilde)

    def posterior(self, X) -> np.ndarray:
        """``P(Z = z_k | X)`` for each support point, ``n x K``."""
        X = np.atleast_2d(X)
        c = self.cfg.z_coupling
        logp = np.log(self.prob)[None, :] + np.stack(
            [np.sum(c * z * X - 0.5 * (c * z) ** 2, axis=1) for z in self.support], axis=1)
        logp -= logp.max(axis=1, keepdims=True)
        w = np.exp(logp)
        return w / w.sum(axis=1, keepdims=True)

    def treatment_prob(self, X) -> np.ndarray:
        """``E[W | X]``."""
        X = np.atleast_2d(X)
        pi = self.posterior(X)
        cond = np.stack([stats.norm.cdf(_treatment_index(self.cfg, z, X)) for z in self.support], axis=1)
        return np.sum(pi * cond, axis=1)

    def g_P(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        m = self.treatment_prob(X)
        return np.column_stack([m, m * X[:, 0]])

    def g_y(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.g_P(X) @ self.cfg.theta0 + control_function(self.cfg, X)

    def g_kappa(self, X) -> np.ndarray:
        """``E[kappa_ml | X_l]``."""
        return self.posterior(X) @ self.kbar

    def g_ptilde(self, X) -> np.ndarray:
        """``E[Ptilde_m kappa_ml | X_l]``, ``n x 2``."""
        return self.posterior(X) @ self.h

    def ratio(self, X) -> np.ndarray:
        return self.g_ptilde(X) / self.g_kappa(X)[:, None]

    def _conditional_ptilde(self, nodes):
        q = self.cfg.q_X
        x, w = np.polynomial.hermite_e.hermegauss(nodes)
        w = w / w.sum()
        grid = np.array(list(product(x, repeat=q)))
        wt = np.prod(np.array(list(product(w, repeat=q))), axis=1)
        out = np.empty((self.support.size, 2))
        for k, z in enumerate(self.support):
            X = grid + self.cfg.z_coupling * z
            gap = stats.norm.cdf(_treatment_index(self.cfg, z, X)) - self.treatment_prob(X)
            out[k] = [wt @ gap, wt @ (gap * X[:, 0])]
        return out


@dataclass
class OrthogonalityCheck:
    """Central finite-difference derivatives of the sample moment.

    Keys are ``(nuisance, direction)``; values are the largest absolute
    entry of ``d/dr psi_bar(g + r * delta)`` at ``r = 0``. ``plain`` holds
    the same derivatives for the uncorrected moment (``g_y`` and ``g_P``
    only, the moment has no other nuisances).
    """

    orthogonal: dict
    plain: dict
    n: int
    step: float

    def worst(self) -> float:
        return max(self.orthogonal.values())


def orthogonality_check(cfg: DGPConfig, seed: int = 0, step: float = 1e-3) -> OrthogonalityCheck:
    """Perturb each exact nuisance along ``delta in {1, x1, x2}`` and differentiate.

    The moment is evaluated at the true parameter with the exact nuisances of
    :class:`BenchmarkTruth`, on one draw of ``cfg.n`` observations.
    """
    from .estimators import smd_moment

    truth = BenchmarkTruth(cfg)
    data = generate_benchmark(cfg, np.random.default_rng(seed))
    X = data.matrix(cfg.control_names)
    y = data["y"]
    P = np.column_stack([data["W"], data["W"] * data["x1"]])
    K = kernel_matrix(data[cfg.instrument_in_dgp], SIMULATION_KERNEL)
    base = {"g_y": truth.g_y(X), "g_P": truth.g_P(X), "g_ptilde": truth.g_ptilde(X), "g_kappa": truth.g_kappa(X)}
    theta = cfg.theta0

    def moment(g, corrected):
        ratio = g["g_ptilde"] / g["g_kappa"][:, None] if corrected else None
        return smd_moment(P - g["g_P"], y - g["g_y"], K, theta, ratio)

    directions = {"1": np.ones(cfg.n), "x1": X[:, 0]}
    if cfg.q_X > 1:
        directions["x2"] = X[:, 1]
    out = {True: {}, False: {}}
    for corrected in (True, False):
        names = ("g_y", "g_P", "g_ptilde", "g_kappa") if corrected else ("g_y", "g_P")
        for name in names:
            for dname, delta in directions.items():
                cols = [None] if base[name].ndim == 1 else range(base[name].shape[1])
                worst = 0.0
                for col in cols:
                    bump = delta if col is None else np.outer(delta, np.eye(base[name].shape[1])[col])
                    up, dn = dict(base), dict(base)
                    up[name] = base[name] + step * bump
                    dn[name] = base[name] - step * bump
                    deriv = (moment(up, corrected) - moment(dn, corrected)) / (2 * step)
                    worst = max(worst, float(np.max(np.abs(deriv))))
                out[corrected][(name, dname)] = worst
    return OrthogonalityCheck(out[True], out[False], cfg.n, step)
