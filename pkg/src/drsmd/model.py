"""Datasets, model specifications and design-matrix assembly.

The estimators in this package work on the partially linear model

    y = theta_w * W + (W * X1)' theta_wx + f(X) + eps,    E[eps | X, Z] = 0

so a model is fully described by which columns play the outcome ``y``, the
treatment ``W``, the interaction covariates ``X1``, the controls ``X`` and the
instruments ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import DataError, InsufficientDataError, SpecificationError


class Dataset:
    """Immutable column-oriented table of finite float64 observations.

    Parameters
    ----------
    columns : mapping or sequence of (name, values) pairs
        Every column must have the same length ``n >= 2`` and contain only
        finite values. Duplicate names raise ``DataError``.
    """

    __slots__ = ("_columns", "_n")

    def __init__(self, columns: Mapping[str, Iterable[float]] | Sequence[tuple[str, Iterable[float]]]):
        items = list(columns.items()) if isinstance(columns, Mapping) else list(columns)
        names = [name for name, _ in items]
        if len(set(names)) != len(names):
            dupes = sorted({nm for nm in names if names.count(nm) > 1})
            raise DataError(f"duplicate column names: {dupes}")
        if not items:
            raise DataError("dataset has no columns")
        cols = {}
        n = None
        for name, values in items:
            arr = np.array(values, dtype=np.float64)
            if arr.ndim != 1:
                raise DataError(f"column {name!r} is not one-dimensional")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise DataError(f"column {name!r} has length {arr.shape[0]}, expected {n}")
            if not np.all(np.isfinite(arr)):
                bad = int(np.sum(~np.isfinite(arr)))
                raise DataError(f"column {name!r} has {bad} non-finite entries")
            arr.setflags(write=False)
            cols[str(name)] = arr
        if n < 2:
            raise DataError(f"dataset needs at least 2 rows, got {n}")
        self._columns = cols
        self._n = n

    @classmethod
    def from_arrays(cls, **arrays) -> "Dataset":
        return cls(arrays)

    @property
    def n(self) -> int:
        return self._n

    @property
    def names(self) -> list[str]:
        return list(self._columns)

    def __contains__(self, name) -> bool:
        return name in self._columns

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise SpecificationError(f"column {name!r} not in dataset") from None

    def __len__(self) -> int:
        return self._n

    def __repr__(self) -> str:
        return f"Dataset(n={self._n}, columns={self.names})"

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named columns into an ``n x len(names)`` array."""
        if len(names) == 0:
            return np.empty((self._n, 0))
        return np.column_stack([self[nm] for nm in names])

    def take(self, rows) -> "Dataset":
        """Row subset (boolean mask or integer index) as a new Dataset."""
        rows = np.asarray(rows)
        return Dataset({k: v[rows] for k, v in self._columns.items()})

    def with_columns(self, **extra) -> "Dataset":
        cols = dict(self._columns)
        cols.update(extra)
        return Dataset(cols)

    def to_dict(self) -> dict[str, np.ndarray]:
        return dict(self._columns)


@dataclass(frozen=True)
class ModelSpec:
    """Column roles for one estimation problem.

    ``interaction_covariates`` may overlap ``controls``. The parameter
    dimension is ``p = 1 + len(interaction_covariates)``.
    """

    outcome: str
    treatment: str
    instruments: tuple[str, ...]
    controls: tuple[str, ...] = ()
    interaction_covariates: tuple[str, ...] = ()

    def __post_init__(self):
        for attr in ("instruments", "controls", "interaction_covariates"):
            val = getattr(self, attr)
            if isinstance(val, str):
                val = (val,)
            object.__setattr__(self, attr, tuple(val))
        if len(self.instruments) < 1:
            raise SpecificationError("at least one instrument column is required")

    @property
    def p(self) -> int:
        return 1 + len(self.interaction_covariates)

    @property
    def param_names(self) -> list[str]:
        return [self.treatment] + [f"{self.treatment}*{x}" for x in self.interaction_covariates]

    def referenced_columns(self) -> list[str]:
        cols = [self.outcome, self.treatment, *self.instruments, *self.controls, *self.interaction_covariates]
        seen = []
        for c in cols:
            if c not in seen:
                seen.append(c)
        return seen

    def check_against(self, data: Dataset) -> None:
        missing = [c for c in self.referenced_columns() if c not in data]
        if missing:
            raise SpecificationError(f"columns missing from dataset: {missing}")


@dataclass(frozen=True)
class ParameterVector:
    """Coefficient on ``W`` followed by the coefficients on ``W * X1``."""

    theta_w: float
    theta_wx: np.ndarray = field(default_factory=lambda: np.empty(0))

    @classmethod
    def from_array(cls, theta) -> "ParameterVector":
        theta = np.asarray(theta, dtype=float).ravel()
        return cls(float(theta[0]), theta[1:].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.theta_w], np.asarray(self.theta_wx, dtype=float)])

    def __len__(self) -> int:
        return 1 + len(self.theta_wx)


@dataclass(frozen=True)
class DesignMatrices:
    y: np.ndarray
    P: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    param_names: list[str]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.P.shape[1]


def build_design(data: Dataset, spec: ModelSpec) -> DesignMatrices:
    """Assemble ``y``, ``P = [W, W*X1]``, ``X`` and ``Z`` from a dataset.

    Column 0 of ``P`` is the treatment itself; column ``k`` is the entrywise
    product of the treatment with the k-th interaction covariate.
    """
    spec.check_against(data)
    n = data.n
    if n < spec.p + 2:
        raise InsufficientDataError(f"n={n} observations is too few for p={spec.p} parameters (need n >= p + 2)")
    w = data[spec.treatment]
    P = np.empty((n, spec.p))
    P[:, 0] = w
    for k, name in enumerate(spec.interaction_covariates, start=1):
        P[:, k] = w * data[name]
    return DesignMatrices(
        y=np.array(data[spec.outcome]),
        P=P,
        X=data.matrix(spec.controls),
        Z=data.matrix(spec.instruments),
        param_names=spec.param_names,
    )


@dataclass
class Issue:
    level: str  # "error" or "warning"
    message: str


@dataclass
class ValidationReport:
    issues: list[Issue]
    n: int | None
    p: int
    q_x: int
    q_z: int

    @property
    def ok(self) -> bool:
        return not any(i.level == "error" for i in self.issues)

    @property
    def errors(self) -> list[str]:
        return [i.message for i in self.issues if i.level == "error"]

    @property
    def warnings(self) -> list[str]:
        return [i.message for i in self.issues if i.level == "warning"]

    def summary(self) -> str:
        lines = [f"n={self.n} p={self.p} q_X={self.q_x} q_z={self.q_z}"]
        lines += [f"[{i.level}] {i.message}" for i in self.issues]
        return "\n".join(lines)


def validate(data, spec: ModelSpec) -> ValidationReport:
    """Report-only check of ``data`` against ``spec``; never raises.

    ``data`` may be a ``Dataset`` or a raw mapping of column name to values,
    so problems that a ``Dataset`` would refuse at construction (ragged
    columns, NaN) are reported rather than raised.
    """
    raw = data.to_dict() if isinstance(data, Dataset) else dict(data)
    issues: list[Issue] = []
    lengths = {}
    arrays = {}
    for name in spec.referenced_columns():
        if name not in raw:
            issues.append(Issue("error", f"column {name!r} is missing"))
            continue
        try:
            arr = np.asarray(raw[name], dtype=float)
        except (TypeError, ValueError):
            issues.append(Issue("error", f"column {name!r} is not numeric"))
            continue
        arrays[name] = arr
        lengths[name] = arr.shape[0] if arr.ndim == 1 else -1
    if len(set(lengths.values())) > 1:
        issues.append(Issue("error", f"column length mismatch: {lengths}"))
    for name, arr in arrays.items():
        if arr.ndim != 1:
            issues.append(Issue("error", f"column {name!r} is not one-dimensional"))
            continue
        nonfinite = int(np.sum(~np.isfinite(arr)))
        if nonfinite:
            issues.append(Issue("error", f"column {name!r} has {nonfinite} missing or non-finite values"))
            continue
        if arr.size and np.ptp(arr) == 0:
            if name in spec.instruments:
                issues.append(Issue("warning", f"instrument has zero variance: {name!r}"))
            elif name == spec.treatment:
                issues.append(Issue("warning", f"treatment has zero variance: {name!r}"))
            else:
                issues.append(Issue("warning", f"column {name!r} is constant"))
    n = next(iter(lengths.values())) if len(set(lengths.values())) == 1 and lengths else None
    if n is not None and n < spec.p + 2:
        issues.append(Issue("error", f"n={n} is too small for p={spec.p}"))
    return ValidationReport(issues, n, spec.p, len(spec.controls), len(spec.instruments))
