"""Command-line front end: ``drsmd estimate|simulate|identify``.

Settings come from an optional INI file (``--config``) and are overridden by
command-line flags. The file uses dotted section names for repeated blocks::

    [run]
    seed = 7
    format = text            ; csv | json | text
    threads = 1

    [model]
    outcome = y
    treatment = W
    instruments = Z1
    controls = x1, x2, x3
    interaction_covariates = x1

    [learner]
    kind = lasso_cv          ; or nadaraya_watson
    max_degree = 5

    [kernel]
    sigma_t = 1.0
    standardize_instruments = false

    [estimator.main]
    tag = D-RSMD
    instruments = Z1

    [estimator.gmm]
    tag = GMM
    instruments = Z1, Z1*x1

    [simulate]
    n = 3000
    q_X = 3
    reps = 200

    [identify]
    model = M1
    variant = single
    n = 2000

Exit codes: 0 success, 2 configuration error, 3 data error, 4 identification
failure (condition number above the threshold).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .estimators import (
    MAX_CONDITION,
    EstimateResult,
    EstimatorTag,
    drsmd_estimate,
    iv_gmm_estimate,
    rgmm_estimate,
    rsmd_estimate,
    smd_estimate,
)
from .exceptions import DataError, DRSMDError, IdentificationError, SpecificationError
from .identification import catalog_identification, identification_report
from .kernel import KernelSpec, kernel_matrix
from .model import Dataset, DesignMatrices, ModelSpec, build_design, validate
from .nuisance import LearnerConfig, fit_orthogonal_correction, robinson_residualize
from .simulation import (
    DGPConfig,
    EstimatorSpec,
    benchmark_specs,
    instrument_matrix,
    metrics_to_csv,
    metrics_to_records,
    metrics_to_text,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IDENTIFICATION = 4
THREADS_ENV = "DRSMD_THREADS"
FORMATS = ("csv", "json", "text")


class ConfigError(Exception):
    """Invalid or inconsistent run configuration (exit code 2)."""


_TAG_ALIASES = {
    "drsmd": EstimatorTag.DRSMD,
    "rsmd": EstimatorTag.RSMD,
    "smd": EstimatorTag.SMD,
    "iv": EstimatorTag.IV,
    "2sls": EstimatorTag.TSLS,
    "tsls": EstimatorTag.TSLS,
    "gmm": EstimatorTag.GMM,
    "rgmm": EstimatorTag.RGMM,
    "gmmoracle": EstimatorTag.GMM_ORACLE,
    "gmm(oracle)": EstimatorTag.GMM_ORACLE,
}


def parse_tag(text: str) -> EstimatorTag:
    key = text.strip().lower().replace("-", "").replace("_", "").replace(" ", "")
    if key not in _TAG_ALIASES:
        raise ConfigError(f"unknown estimator tag {text!r}; expected one of {sorted({t.value for t in _TAG_ALIASES.values()})}")
    return _TAG_ALIASES[key]


@dataclass
class EstimatorRequest:
    tag: EstimatorTag
    instruments: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        return ", ".join(self.instruments)


@dataclass
class RunConfig:
    """Resolved settings for one CLI invocation."""

    command: str
    input_path: Path | None = None
    output_path: Path | None = None
    output_format: str = "text"
    seed: int = 0
    threads: int = 1
    reps: int | None = None
    model: dict = field(default_factory=dict)
    estimators: list[EstimatorRequest] = field(default_factory=list)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    simulate: dict = field(default_factory=dict)
    identify: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# configuration


def _split(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.replace(";", ",").split(",") if v.strip())


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _coerce(value: str, like):
    """Convert an INI string to the type of ``like``."""
    try:
        if isinstance(like, bool):
            return _bool(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r}: {exc}") from None
    return value.strip()


def _learner_from(section) -> LearnerConfig:
    kw = {}
    for key, value in section.items():
        if key in ("kind",):
            kw[key] = value.strip()
        elif key in ("max_degree", "folds", "lambda_grid_size"):
            kw[key] = _coerce(value, 0)
        elif key == "lambda_ratio":
            kw[key] = _coerce(value, 0.0)
        elif key == "cross_fit":
            kw[key] = _bool(value)
        elif key == "nw_bandwidth":
            vals = tuple(float(v) for v in _split(value))
            kw[key] = vals[0] if len(vals) == 1 else vals
        else:
            raise ConfigError(f"unknown [learner] key {key!r}")
    try:
        return LearnerConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"[learner]: {exc}") from None


def _kernel_from(section) -> KernelSpec:
    kw = {}
    for key, value in section.items():
        if key == "sigma_t":
            vals = tuple(float(v) for v in _split(value))
            kw[key] = vals[0] if len(vals) == 1 else vals
        elif key == "standardize_instruments":
            kw[key] = _bool(value)
        elif key == "measure":
            kw[key] = value.strip()
        else:
            raise ConfigError(f"unknown [kernel] key {key!r}")
    try:
        return KernelSpec(**kw)
    except ValueError as exc:
        raise ConfigError(f"[kernel]: {exc}") from None


_MODEL_KEYS = ("outcome", "treatment", "instruments", "controls", "interaction_covariates")


def load_config(path, command: str) -> RunConfig:
    """Read an INI file into a :class:`RunConfig` (flags are applied later)."""
    cfg = RunConfig(command=command)
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    for name in parser.sections():
        sec = parser[name]
        if name == "run":
            for key, value in sec.items():
                if key == "input":
                    cfg.input_path = (path.parent / value.strip())
                elif key == "output":
                    cfg.output_path = (path.parent / value.strip())
                elif key == "format":
                    cfg.output_format = value.strip().lower()
                elif key in ("seed", "threads", "reps"):
                    setattr(cfg, key, _coerce(value, 0))
                else:
                    raise ConfigError(f"unknown [run] key {key!r}")
        elif name == "model":
            for key, value in sec.items():
                if key not in _MODEL_KEYS:
                    raise ConfigError(f"unknown [model] key {key!r}")
                cfg.model[key] = value.strip() if key in ("outcome", "treatment") else _split(value)
        elif name == "learner":
            cfg.learner = _learner_from(sec)
        elif name == "kernel":
            cfg.kernel = _kernel_from(sec)
        elif name.startswith("estimator."):
            if "tag" not in sec:
                raise ConfigError(f"[{name}] needs a 'tag'")
            extra = set(sec) - {"tag", "instruments"}
            if extra:
                raise ConfigError(f"unknown [{name}] keys {sorted(extra)}")
            cfg.estimators.append(EstimatorRequest(parse_tag(sec["tag"]), _split(sec.get("instruments", ""))))
        elif name == "simulate":
            cfg.simulate = dict(sec.items())
        elif name == "identify":
            cfg.identify = dict(sec.items())
        else:
            raise ConfigError(f"unknown section [{name}]")
    return cfg


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    """Environment first, then flags; flags win."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cfg.threads = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if getattr(args, "input", None):
        cfg.input_path = Path(args.input)
    if args.output:
        cfg.output_path = Path(args.output)
    if args.format:
        cfg.output_format = args.format
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.reps is not None:
        cfg.reps = args.reps
    if cfg.output_format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {cfg.output_format!r}")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    if cfg.reps is not None and cfg.reps < 1:
        raise ConfigError("reps must be at least 1")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must be a non-negative 64-bit integer")
    return cfg


# --------------------------------------------------------------------------
# data


def read_csv(path) -> Dataset:
    """Comma-separated, header row, UTF-8, '.' decimals; every cell numeric."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    if not rows:
        raise DataError(f"{path} has a header but no data rows")
    cols = {h: [] for h in header}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        for h, cell in zip(header, row):
            try:
                cols[h].append(float(cell))
            except ValueError:
                raise DataError(f"{path}:{lineno}: column {h!r} value {cell!r} is not numeric") from None
    return Dataset(list(cols.items()))


def write_csv(data: Dataset, path) -> None:
    """Write a dataset so that :func:`read_csv` restores it bit for bit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.names)
        cols = [data[c] for c in data.names]
        for i in range(data.n):
            w.writerow([repr(float(c[i])) for c in cols])


def _model_spec(cfg: RunConfig) -> ModelSpec:
    m = cfg.model
    for key in ("outcome", "treatment", "instruments"):
        if not m.get(key):
            raise ConfigError(f"[model] needs {key!r}")
    try:
        return ModelSpec(m["outcome"], m["treatment"], tuple(m["instruments"]),
                         tuple(m.get("controls", ())), tuple(m.get("interaction_covariates", ())))
    except SpecificationError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# estimate


_SMD_FAMILY = (EstimatorTag.DRSMD, EstimatorTag.RSMD, EstimatorTag.SMD)


def estimate_all(data: Dataset, spec: ModelSpec, requests, learner: LearnerConfig, kernel: KernelSpec,
                 seed: int, max_condition: float = MAX_CONDITION):
    """Fit every requested estimator on one dataset.

    Returns ``(results, reports)`` where ``reports`` holds one identification
    report per SMD-family request. One residualization is shared by all
    estimators that need it.
    """
    design = build_design(data, spec)
    if not design.X.shape[1] and any(r.tag in (EstimatorTag.DRSMD, EstimatorTag.RSMD, EstimatorTag.RGMM)
                                     for r in requests):
        raise ConfigError("residualized estimators need at least one control column")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    fits = None
    results, reports = [], []
    for req in requests:
        inst = req.instruments or spec.instruments
        missing = [c for e in inst for c in e.split("*") if c.strip() not in data]
        if missing:
            raise ConfigError(f"{req.tag.value}: instrument columns missing from data: {missing}")
        Z = instrument_matrix(data, inst)
        des = DesignMatrices(design.y, design.P, design.X, Z, design.param_names)
        if req.tag in (EstimatorTag.DRSMD, EstimatorTag.RSMD, EstimatorTag.RGMM) and fits is None:
            fits = robinson_residualize(des, learner, rng)
        if req.tag in _SMD_FAMILY:
            K = kernel_matrix(Z, kernel)
            if req.tag is EstimatorTag.SMD:
                from .nuisance import NuisanceFits

                reports.append(identification_report(NuisanceFits.raw(des.y, des.P), None, K, EstimatorTag.SMD))
                res = smd_estimate(des.y, des.P, K, max_condition, des.param_names)
            elif req.tag is EstimatorTag.RSMD:
                reports.append(identification_report(fits, None, K, EstimatorTag.RSMD))
                res = rsmd_estimate(fits, K, max_condition, des.param_names)
            else:
                corr = fit_orthogonal_correction(fits, K, des.X, learner, rng)
                reports.append(identification_report(fits, corr, K, EstimatorTag.DRSMD))
                res = drsmd_estimate(fits, corr, K, max_condition, des.param_names)
        elif req.tag is EstimatorTag.RGMM:
            res = rgmm_estimate(fits, Z, max_condition, des.param_names)
        elif req.tag in (EstimatorTag.IV, EstimatorTag.TSLS, EstimatorTag.GMM):
            res = iv_gmm_estimate(des.y, des.P, Z, des.X if des.X.shape[1] else None,
                                  max_condition=max_condition, param_names=des.param_names, tag=req.tag)
        else:
            raise ConfigError(f"{req.tag.value} needs the true control function and is only available in simulations")
        res.meta["instruments"] = ", ".join(inst)
        results.append(res)
    return results, reports


def coefficient_records(results: list[EstimateResult]) -> list[dict]:
    out = []
    for res in results:
        for row in res.table():
            out.append({"estimator": res.estimator_tag.value, "instruments": res.meta.get("instruments", ""), **row})
    return out


def _fmt(x: float) -> str:
    return f"{x:.4f}" if np.isfinite(x) else str(x)


def coefficient_text(results: list[EstimateResult]) -> str:
    head = ["Estimator", "Instruments", "Parameter", "Estimate", "SE", "t", "p", ""]
    body = [[r["estimator"], r["instruments"], r["parameter"], _fmt(r["estimate"]), _fmt(r["se"]), _fmt(r["t"]),
             _fmt(r["p"]), r["stars"]] for r in coefficient_records(results)]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) if 2 < i < 7 else c.ljust(w)
                                  for i, (c, w) in enumerate(zip(cells, widths))).rstrip()
    lines = [fmt(head), "-" * (sum(widths) + 2 * (len(widths) - 1))] + [fmt(b) for b in body]
    lines.append("Significance: *** 1%, ** 5%, * 10%, . 15%")
    return "\n".join(lines) + "\n"


def _csv_text(records: list[dict], columns) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def render_estimate(results, reports, fmt: str) -> str:
    if fmt == "json":
        doc = {"coefficients": coefficient_records(results),
               "identification": [r.to_dict() for r in reports]}
        return json.dumps(doc, indent=2, allow_nan=True) + "\n"
    if fmt == "csv":
        return _csv_text(coefficient_records(results),
                         ["estimator", "instruments", "parameter", "estimate", "se", "t", "p", "stars"])
    parts = [coefficient_text(results)]
    if reports:
        parts.append("Identification\n" + "\n".join(r.summary() for r in reports) + "\n")
    return "\n".join(parts)


def cmd_estimate(cfg: RunConfig) -> tuple[int, str]:
    if cfg.input_path is None:
        raise ConfigError("estimate needs --input or [run] input")
    spec = _model_spec(cfg)
    data = read_csv(cfg.input_path)
    report = validate(data, spec)
    if not report.ok:
        raise DataError("; ".join(report.errors))
    for msg in report.warnings:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    requests = cfg.estimators or [EstimatorRequest(EstimatorTag.DRSMD, spec.instruments)]
    with threadpool_limits(cfg.threads):
        results, reports = estimate_all(data, spec, requests, cfg.learner, cfg.kernel, cfg.seed)
    return EXIT_OK, render_estimate(results, reports, cfg.output_format)


# --------------------------------------------------------------------------
# simulate


def _dgp_from(section: dict) -> tuple[DGPConfig, dict]:
    kw, rest = {}, {}
    defaults = {f.name: f.default for f in fields(DGPConfig)}
    for key, value in section.items():
        if key in defaults:
            kw[key] = _coerce(value, defaults[key])
        else:
            rest[key] = value
    try:
        return DGPConfig(**kw), rest
    except ValueError as exc:
        raise ConfigError(f"[simulate]: {exc}") from None


def cmd_simulate(cfg: RunConfig) -> tuple[int, str]:
    dgp, rest = _dgp_from(cfg.simulate)
    file_reps = rest.pop("reps", None)
    reps = cfg.reps if cfg.reps is not None else (None if file_reps is None else _coerce(file_reps, 0))
    if rest:
        raise ConfigError(f"unknown [simulate] keys {sorted(rest)}")
    reps = 200 if reps is None else reps
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    if cfg.estimators:
        specs = [EstimatorSpec(r.tag, r.instruments or ("Z1",), cfg.learner) for r in cfg.estimators]
    else:
        specs = [EstimatorSpec(s.tag, s.instruments, cfg.learner, s.subset) for s in benchmark_specs(dgp.q_X)]
    rows = run_experiment(dgp, specs, reps, cfg.seed, workers=cfg.threads)
    if cfg.output_format == "csv":
        return EXIT_OK, metrics_to_csv(rows)
    if cfg.output_format == "json":
        return EXIT_OK, json.dumps(metrics_to_records(rows), indent=2) + "\n"
    return EXIT_OK, metrics_to_text(rows)


# --------------------------------------------------------------------------
# identify


def cmd_identify(cfg: RunConfig) -> tuple[int, str]:
    if cfg.input_path is not None:
        spec = _model_spec(cfg)
        data = read_csv(cfg.input_path)
        report = validate(data, spec)
        if not report.ok:
            raise DataError("; ".join(report.errors))
        requests = [r for r in cfg.estimators if r.tag in _SMD_FAMILY] or [
            EstimatorRequest(EstimatorTag.DRSMD, spec.instruments)]
        with threadpool_limits(cfg.threads):
            reports = _identify_data(data, spec, requests, cfg)
    else:
        sec = dict(cfg.identify)
        model = sec.pop("model", "M1")
        variant = sec.pop("variant", None)
        n = _coerce(sec.pop("n", "2000"), 0)
        if sec:
            raise ConfigError(f"unknown [identify] keys {sorted(sec)}")
        if variant is None:
            from .identification import CATALOG

            choices = [k for k, v in CATALOG.items() if v.model.value == model.upper()]
            if not choices:
                raise ConfigError(f"unknown catalog model {model!r}")
            variant = choices[0]
        try:
            with threadpool_limits(cfg.threads):
                reports = catalog_identification(model.upper(), variant, n=n, seed=cfg.seed, learner=cfg.learner)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.output_format == "json":
        return EXIT_OK, json.dumps([r.to_dict() for r in reports], indent=2) + "\n"
    if cfg.output_format == "csv":
        recs = []
        for r in reports:
            d = r.to_dict()
            recs.append({"estimator": d["estimator"], "verdict": d["verdict"],
                         "condition_number": d["condition_number"], "rank_statistic": d["rank_statistic"],
                         "singular_values": " ".join(repr(s) for s in d["singular_values"])})
        return EXIT_OK, _csv_text(recs, ["estimator", "verdict", "condition_number", "rank_statistic",
                                         "singular_values"])
    return EXIT_OK, "\n".join(r.summary() for r in reports) + "\n"


def _identify_data(data, spec, requests, cfg):
    from .nuisance import NuisanceFits

    design = build_design(data, spec)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    fits = None
    out = []
    for req in requests:
        Z = instrument_matrix(data, req.instruments or spec.instruments)
        K = kernel_matrix(Z, cfg.kernel)
        if req.tag is EstimatorTag.SMD:
            out.append(identification_report(NuisanceFits.raw(design.y, design.P), None, K, EstimatorTag.SMD))
            continue
        if fits is None:
            fits = robinson_residualize(design, cfg.learner, rng)
        corr = fit_orthogonal_correction(fits, K, design.X, cfg.learner, rng) if req.tag is EstimatorTag.DRSMD else None
        out.append(identification_report(fits, corr, K, req.tag))
    return out


# --------------------------------------------------------------------------
# entry point


_COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "identify": cmd_identify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drsmd", description="Debiased kernel-weighted estimation of treatment effects.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("estimate", "estimate coefficients on a CSV file"),
                            ("simulate", "run a Monte Carlo experiment on the benchmark design"),
                            ("identify", "diagnose identification on a CSV file or a catalog model")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--input", help="input CSV (estimate, identify)")
        p.add_argument("--output", help="write the report here instead of stdout")
        p.add_argument("--format", choices=FORMATS, help="report format")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--threads", type=int, help=f"worker threads/processes (overrides ${THREADS_ENV})")
        p.add_argument("--reps", type=int, help="Monte Carlo replications (simulate)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.config, args.command), args)
        code, text = _COMMANDS[args.command](cfg)
    except (ConfigError, SpecificationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentificationError as exc:
        print(f"identification failure: {exc}", file=sys.stderr)
        return EXIT_IDENTIFICATION
    except (DataError, DRSMDError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if cfg.output_path is not None:
        Path(cfg.output_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
