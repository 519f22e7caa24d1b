"""Pairwise instrument weights from the Fourier inversion of a Gaussian measure.

For a measure ``mu`` on R^q with characteristic function ``k``, the weight of
an observation pair is ``kappa_jl = k(Z_j - Z_l)``. With ``mu`` the product of
centred Gaussians with scales ``sigma_t``,

    k(u) = exp(-sum_s (u_s / sigma_s)^2 / 2).

``KernelMatrix`` never needs the dense ``n x n`` array for the estimators:
products ``K @ V`` are computed by grouping identical instrument rows when the
instruments are discrete, densely for moderate ``n``, and in row blocks above
``DENSE_LIMIT``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import DataError

DENSE_LIMIT = 20000
GROUPED_LIMIT = 256
_BLOCK_ROWS = 512
_TINY = np.finfo(float).tiny


class Measure(str, Enum):
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class KernelSpec:
    """Choice of measure and instrument preprocessing.

    Parameters
    ----------
    sigma_t : float or sequence of float
        Scale of the Gaussian measure per instrument dimension (broadcast when
        scalar).
    standardize_instruments : bool
        Centre and scale each instrument column to unit variance before
        differencing. Zero-variance columns then raise ``DataError``.
    """

    sigma_t: float | tuple[float, ...] = 1.0
    standardize_instruments: bool = True
    measure: Measure = Measure.GAUSSIAN

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma_t, dtype=float))
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise ValueError(f"sigma_t must be strictly positive, got {self.sigma_t}")
        if Measure(self.measure) is not Measure.GAUSSIAN:
            raise ValueError(f"unsupported measure {self.measure!r}")

    def scales(self, q: int) -> np.ndarray:
        s = np.atleast_1d(np.asarray(self.sigma_t, dtype=float))
        if s.size == 1:
            return np.full(q, s[0])
        if s.size != q:
            raise ValueError(f"sigma_t has {s.size} entries but instruments have {q} columns")
        return s


def kappa(u, spec: KernelSpec | None = None) -> float:
    """Weight ``k(u)`` for a single instrument difference ``u``."""
    spec = spec or KernelSpec()
    u = np.atleast_1d(np.asarray(u, dtype=float))
    s = spec.scales(u.size)
    return float(np.exp(-0.5 * np.sum((u / s) ** 2)))


def _prepare(Z, spec: KernelSpec) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if not np.all(np.isfinite(Z)):
        raise DataError("instruments contain non-finite values")
    if spec.standardize_instruments:
        sd = Z.std(axis=0)
        if np.any(sd == 0):
            bad = np.flatnonzero(sd == 0).tolist()
            raise DataError(f"instrument column(s) {bad} have zero variance; cannot standardize")
        Z = (Z - Z.mean(axis=0)) / sd
    return Z / spec.scales(Z.shape[1])


def _gauss_block(A, B) -> np.ndarray:
    # A, B already divided by sigma_t
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for s in range(A.shape[1]):
        diff = A[:, s, None] - B[None, :, s]
        d2 += diff * diff
    out = np.exp(-0.5 * d2)
    np.maximum(out, _TINY, out=out)
    return out


class KernelMatrix:
    """Symmetric ``n x n`` matrix of pair weights ``kappa(Z_j - Z_l)``.

    The diagonal is exactly 1 and all entries lie in (0, 1]. The dense array is
    only built on request through :attr:`values`; the estimators use
    :meth:`dot`, :meth:`offdiag_dot` and :meth:`offdiag_rowsum`.
    """

    def __init__(self, Z, spec: KernelSpec | None = None):
        self.spec = spec or KernelSpec()
        self._Zs = _prepare(Z, self.spec)
        self.n = self._Zs.shape[0]
        self._dense = None
        self._rowsum = None
        uniq, inverse = np.unique(self._Zs, axis=0, return_inverse=True)
        if uniq.shape[0] <= GROUPED_LIMIT:
            self._uniq = uniq
            self._inverse = inverse.ravel()
            self._Kuu = _gauss_block(uniq, uniq)
            np.fill_diagonal(self._Kuu, 1.0)
        else:
            self._uniq = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def q(self) -> int:
        return self._Zs.shape[1]

    @property
    def is_grouped(self) -> bool:
        return self._uniq is not None

    @property
    def values(self) -> np.ndarray:
        if self._dense is None:
            if self.n > DENSE_LIMIT:
                raise MemoryError(f"refusing to materialize a {self.n}x{self.n} kernel; use dot()/offdiag_dot()")
            if self.is_grouped:
                K = self._Kuu[np.ix_(self._inverse, self._inverse)]
            else:
                K = _gauss_block(self._Zs, self._Zs)
            np.fill_diagonal(K, 1.0)
            K.setflags(write=False)
            self._dense = K
        return self._dense

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def dot(self, V) -> np.ndarray:
        """``K @ V`` including the unit diagonal."""
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        V2 = V[:, None] if vec else V
        if self.is_grouped:
            G = np.zeros((self._uniq.shape[0], V2.shape[1]))
            np.add.at(G, self._inverse, V2)
            out = (self._Kuu @ G)[self._inverse]
        elif self.n <= DENSE_LIMIT:
            out = self.values @ V2
        else:
            out = np.empty((self.n, V2.shape[1]))
            for start in range(0, self.n, _BLOCK_ROWS):
                stop = min(start + _BLOCK_ROWS, self.n)
                blk = _gauss_block(self._Zs[start:stop], self._Zs)
                out[start:stop] = blk @ V2
        return out[:, 0] if vec else out

    def offdiag_dot(self, V) -> np.ndarray:
        """``(K - I) @ V``: pair sums over ``l != j``."""
        V = np.asarray(V, dtype=float)
        return self.dot(V) - V

    def offdiag_rowsum(self) -> np.ndarray:
        """``sum_{l != j} kappa_jl`` for every ``j``."""
        if self._rowsum is None:
            self._rowsum = self.offdiag_dot(np.ones(self.n))
        return self._rowsum

    def squared(self) -> "KernelMatrix":
        """Entrywise square, itself a Gaussian pair-weight matrix with scale ``sigma_t / sqrt(2)``."""
        return KernelMatrix(self._Zs * np.sqrt(2.0), KernelSpec(1.0, standardize_instruments=False))

    def __repr__(self) -> str:
        mode = "grouped" if self.is_grouped else ("dense" if self.n <= DENSE_LIMIT else "blocked")
        return f"KernelMatrix(n={self.n}, q={self.q}, mode={mode})"


def kernel_matrix(Z, spec: KernelSpec | None = None) -> KernelMatrix:
    """Build the pair-weight matrix for instruments ``Z`` (``n`` or ``n x q``)."""
    return KernelMatrix(Z, spec)
