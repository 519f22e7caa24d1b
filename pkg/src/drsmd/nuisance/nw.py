"""Nadaraya-Watson regression with a product Gaussian smoothing kernel."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

_BLOCK = 1024


def rule_of_thumb_bandwidth(X) -> np.ndarray:
    """``h_s = sd(x_s) * n^(-1/5)`` per covariate."""
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    n = X.shape[0]
    return X.std(axis=0, ddof=1) * n ** (-0.2)


def _weights(A, B, h):
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for s in range(A.shape[1]):
        diff = (A[:, s, None] - B[None, :, s]) / h[s]
        d2 += diff * diff
    return np.exp(-0.5 * d2)


@dataclass
class NWFit:
    X: np.ndarray
    y: np.ndarray
    bandwidth: np.ndarray
    fallback_rows: int = 0

    def predict(self, Xnew, leave_one_out=False) -> np.ndarray:
        """Kernel-weighted average of the training targets at ``Xnew``.

        With ``leave_one_out`` the rows of ``Xnew`` must be the training rows;
        each row's own target is excluded from its average.
        """
        Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float).T).T
        n_new = Xnew.shape[0]
        out = np.empty(n_new)
        ybar = float(self.y.mean())
        fallback = 0
        for start in range(0, n_new, _BLOCK):
            stop = min(start + _BLOCK, n_new)
            Wt = _weights(Xnew[start:stop], self.X, self.bandwidth)
            if leave_one_out:
                idx = np.arange(start, stop)
                Wt[idx - start, idx] = 0.0
            den = Wt.sum(axis=1)
            num = Wt @ self.y
            empty = den <= 0.0
            fallback += int(empty.sum())
            den[empty] = 1.0
            blk = num / den
            blk[empty] = ybar
            out[start:stop] = blk
        if fallback:
            warnings.warn(
                f"Nadaraya-Watson: {fallback} rows had no effective neighbours; using the global mean",
                RuntimeWarning,
                stacklevel=2,
            )
        self.fallback_rows = fallback
        return out


def nw_fit(X, y, bandwidth=None) -> NWFit:
    """Store the sample and resolve the bandwidth (rule of thumb if ``None``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    y = np.asarray(y, dtype=float)
    if X.shape[1] > 3:
        warnings.warn(
            f"Nadaraya-Watson with {X.shape[1]} covariates; the method is only reliable for fewer than four",
            RuntimeWarning,
            stacklevel=2,
        )
    h = rule_of_thumb_bandwidth(X) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, float), (X.shape[1],)).copy()
    if np.any(~(h > 0)):
        raise ValueError(f"bandwidth must be strictly positive, got {h}")
    return NWFit(X, y, h)
