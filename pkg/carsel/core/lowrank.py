#!/usr/bin/env python3
"""
Low-rank shrinkage correlation R = lam * (I_d + U diag(M) U^T).

Matrix powers and the correlation-adjusted product R^(-1/2) r are
evaluated through the d x m factor only; no d x d buffer is allocated
when n < d.
"""

import hashlib
import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg

from ..errors import DataError, NumericalError, UsageError
from .genomatrix import GenotypeMatrix

logger = logging.getLogger(__name__)

LAMBDA_MIN = 1e-6

CACHE_MAGIC = b'LRC1'
CACHE_VERSION = 1
# magic, version, d, m, lambda, sha256 fingerprint of X
_CACHE_HEADER = struct.Struct('<4sIQQd32s')


@dataclass(frozen=True)
class ShrinkageEstimate:
    """Shrinkage intensity toward the identity, clipped to [1e-6, 1]"""
    lambda_: float
    source: str = 'fixed'

    def __post_init__(self):
        if self.source not in ('fixed', 'analytic'):
            raise UsageError(f"unknown shrinkage source {self.source!r}")
        value = float(self.lambda_)
        if not np.isfinite(value) or value <= 0.0:
            raise NumericalError(f"shrinkage intensity must be positive, got {value}")
        if value > 1.0:
            raise UsageError(f"shrinkage intensity must not exceed 1, got {value}")
        object.__setattr__(self, 'lambda_', max(value, LAMBDA_MIN))


@dataclass(frozen=True, eq=False)
class LowRankCorrelation:
    """Factor (lam, U, M) of the shrinkage correlation matrix; M holds the
    diagonal of the m x m middle matrix"""
    lambda_: float
    U: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=float)
        M = np.array(self.M, dtype=float).ravel()
        if U.ndim != 2 or U.shape[1] != M.size:
            raise NumericalError(f"factor shapes disagree: U {U.shape}, M {M.shape}")
        if not 0.0 < self.lambda_ <= 1.0:
            raise NumericalError(f"lambda must lie in (0, 1], got {self.lambda_}")
        if M.size and not np.all(M > 0.0):
            raise NumericalError("middle factor must be strictly positive")
        U.flags.writeable = False
        M.flags.writeable = False
        object.__setattr__(self, 'U', U)
        object.__setattr__(self, 'M', M)
        object.__setattr__(self, 'lambda_', float(self.lambda_))

    @property
    def d(self) -> int:
        return self.U.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def eigenvalues(self) -> np.ndarray:
        """Nonzero eigenvalues s of the empirical correlation matrix"""
        if self.m == 0:
            return np.zeros(0)
        return self.M * self.lambda_ / (1.0 - self.lambda_)

    def with_lambda(self, shrinkage: Union['ShrinkageEstimate', float]) -> 'LowRankCorrelation':
        """Same eigenvectors, M rescaled for another intensity"""
        new = _lambda_value(shrinkage)
        if new >= 1.0:
            return LowRankCorrelation(1.0, np.zeros((self.d, 0)), np.zeros(0))
        if self.lambda_ >= 1.0:
            raise NumericalError("a factor built with lambda = 1 keeps no spectrum; rebuild it")
        return LowRankCorrelation(new, self.U, (1.0 - new) / new * self.eigenvalues)


def _lambda_value(shrinkage: Union[ShrinkageEstimate, float]) -> float:
    if isinstance(shrinkage, ShrinkageEstimate):
        return shrinkage.lambda_
    return ShrinkageEstimate(float(shrinkage)).lambda_


def _as_matrix(X: Union[GenotypeMatrix, np.ndarray]) -> np.ndarray:
    return X.X if isinstance(X, GenotypeMatrix) else np.asarray(X, dtype=float)


def estimate_lambda_analytic(X: Union[GenotypeMatrix, np.ndarray]) -> ShrinkageEstimate:
    """Analytic shrinkage intensity toward the identity for standardized data:
    lam = sum_{i!=j} Var(r_ij) / sum_{i!=j} r_ij^2.

    Every sum is taken through the smaller Gram matrix, so the cost is
    O(n^2 d) when n < d.
    """
    X = _as_matrix(X)
    n, d = X.shape
    if n < 3:
        raise NumericalError(f"analytic shrinkage needs at least 3 samples, got {n}")

    gram = X @ X.T if n < d else X.T @ X
    gram_sq = float(np.sum(gram ** 2))                 # sum_ij (x_i . x_j)^2
    col_ss = np.sum(X ** 2, axis=0)
    row_ss = np.sum(X ** 2, axis=1)

    # sum_{i!=j} r_ij^2 with r_ij = x_i . x_j / (n - 1)
    off_r2 = (gram_sq - float(col_ss @ col_ss)) / (n - 1) ** 2
    # sum_{i!=j} sum_k (w_kij - wbar_ij)^2 with w_kij = x_ki x_kj
    sum_w2 = float(row_ss @ row_ss) - float(np.sum(X ** 4))
    sum_wbar2 = (gram_sq - float(col_ss @ col_ss)) / n
    off_var = n / (n - 1) ** 3 * max(sum_w2 - sum_wbar2, 0.0)

    if off_r2 <= 0.0:
        value = 1.0
    else:
        value = min(1.0, max(LAMBDA_MIN, off_var / off_r2))
    logger.info("analytic shrinkage intensity %.6g (n=%d, d=%d)", value, n, d)
    return ShrinkageEstimate(value, 'analytic')


def resolve_shrinkage(value: Union[str, float, ShrinkageEstimate],
                      X: Union[GenotypeMatrix, np.ndarray]) -> ShrinkageEstimate:
    """'analytic' -> estimate from X, number -> fixed intensity"""
    if isinstance(value, ShrinkageEstimate):
        return value
    if isinstance(value, str) and value.lower() == 'analytic':
        return estimate_lambda_analytic(X)
    return ShrinkageEstimate(float(value), 'fixed')


def build_lowrank(X: Union[GenotypeMatrix, np.ndarray],
                  shrinkage: Union[ShrinkageEstimate, float]) -> LowRankCorrelation:
    """Factor the shrinkage correlation of standardized X.

    U holds the eigenvectors of R_emp = X^T X / (n - 1) with eigenvalues above
    the rank tolerance and M = (1 - lam) / lam * s. For n < d the spectrum is
    taken from the n x n Gram matrix and mapped to the right singular vectors.
    """
    X = _as_matrix(X)
    n, d = X.shape
    lam = _lambda_value(shrinkage)
    if lam >= 1.0:
        return LowRankCorrelation(1.0, np.zeros((d, 0)), np.zeros(0))

    scaled = X / np.sqrt(n - 1)
    if n < d:
        s, V = linalg.eigh(scaled @ scaled.T)
    else:
        s, V = linalg.eigh(scaled.T @ scaled)
    order = np.argsort(s)[::-1]
    s, V = s[order], V[:, order]

    s_max = s[0] if s.size else 0.0
    tol = max(n, d) * np.finfo(float).eps * s_max
    keep = s > tol
    s, V = s[keep], V[:, keep]
    if n < d:
        U = (scaled.T @ V) / np.sqrt(s)
    else:
        U = V

    logger.info("built low-rank factor d=%d m=%d lambda=%.4g", d, s.size, lam)
    return LowRankCorrelation(lam, U, (1.0 - lam) / lam * s)


def matrix_power_apply(L: LowRankCorrelation, alpha: float, v: np.ndarray) -> np.ndarray:
    """R^alpha v = lam^alpha (v - U ((1 - (1 + M)^alpha) * (U^T v)))

    ``v`` may be a length-d vector or a d x k block of vectors.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[0] != L.d:
        raise ValueError(f"vector has leading dimension {v.shape[0]}, factor has d={L.d}")
    inner = 1.0 - (1.0 + L.M) ** alpha
    if v.ndim == 2:
        inner = inner[:, None]
    correction = L.U @ (inner * (L.U.T @ v))
    return L.lambda_ ** alpha * (v - correction)


def fast_adjusted_scores(L: LowRankCorrelation, r_xy: np.ndarray) -> np.ndarray:
    """Correlation-adjusted scores R^(-1/2) r_xy through the factor only"""
    if L.lambda_ <= 0.0:
        raise NumericalError(f"lambda must be positive, got {L.lambda_}")
    r_xy = np.asarray(r_xy, dtype=float)
    if r_xy.shape[0] != L.d:
        raise ValueError(f"score vector has length {r_xy.shape[0]}, factor has d={L.d}")
    if not np.all(np.isfinite(r_xy)):
        raise NumericalError("scores to adjust must be finite")

    shrink = 1.0 - (1.0 + L.M) ** -0.5
    if r_xy.ndim == 2:
        shrink = shrink[:, None]
    return L.lambda_ ** -0.5 * (r_xy - L.U @ (shrink * (L.U.T @ r_xy)))


def fingerprint(X: Union[GenotypeMatrix, np.ndarray]) -> bytes:
    """SHA-256 of the standardized matrix bytes"""
    data = np.ascontiguousarray(_as_matrix(X), dtype='<f8')
    digest = hashlib.sha256()
    digest.update(struct.pack('<QQ', *data.shape))
    digest.update(data.tobytes())
    return digest.digest()


def save_lowrank(path: str, L: LowRankCorrelation, data_fingerprint: bytes = b'\0' * 32):
    """Write the factor as an LRC1 file (little-endian f64)"""
    if len(data_fingerprint) != 32:
        raise ValueError("fingerprint must be 32 bytes")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, L.d, L.m, L.lambda_, data_fingerprint)
    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(np.ascontiguousarray(L.M, dtype='<f8').tobytes())
        handle.write(np.ascontiguousarray(L.U, dtype='<f8').tobytes())
    logger.info("saved low-rank factor (d=%d, m=%d) to %s", L.d, L.m, path)


def load_lowrank(path: str, expected_fingerprint: Optional[bytes] = None) -> LowRankCorrelation:
    """Read an LRC1 file; raises DataError on any header or size mismatch"""
    try:
        with open(path, 'rb') as handle:
            header = handle.read(_CACHE_HEADER.size)
            payload = handle.read()
    except OSError as e:
        raise DataError(f"cannot read factor cache: {e}", path=path)

    if len(header) < _CACHE_HEADER.size:
        raise DataError("factor cache is truncated", path=path)
    magic, version, d, m, lam, stored_fp = _CACHE_HEADER.unpack(header)
    if magic != CACHE_MAGIC:
        raise DataError(f"not a factor cache (magic {magic!r})", path=path)
    if version != CACHE_VERSION:
        raise DataError(f"unsupported factor cache version {version}", path=path)
    if len(payload) != 8 * (m + d * m):
        raise DataError("factor cache is truncated", path=path)
    if expected_fingerprint is not None and stored_fp != expected_fingerprint:
        raise DataError("factor cache was built from different data", path=path)

    values = np.frombuffer(payload, dtype='<f8')
    M = values[:m].astype(float)
    U = values[m:].astype(float).reshape(d, m)
    return LowRankCorrelation(lam, U, M)
