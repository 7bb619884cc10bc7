#!/usr/bin/env python3
"""
Tests for the low-rank shrinkage correlation and its matrix powers
"""

import itertools

import numpy as np
import pytest

from carsel.core.genomatrix import standardize_columns
from carsel.core.lowrank import (LowRankCorrelation, ShrinkageEstimate, build_lowrank,
                                 estimate_lambda_analytic, fast_adjusted_scores, fingerprint,
                                 load_lowrank, matrix_power_apply, resolve_shrinkage,
                                 save_lowrank)
from carsel.errors import DataError, NumericalError, UsageError


def standardized(n, d, seed=0):
    rng = np.random.default_rng(seed)
    return standardize_columns(rng.normal(size=(n, d))).X


def dense_shrinkage(X, lam):
    n, d = X.shape
    return lam * np.eye(d) + (1.0 - lam) * X.T @ X / (n - 1)


def dense_power(R, alpha):
    w, V = np.linalg.eigh(R)
    return (V * w ** alpha) @ V.T


def test_shrinkage_estimate_bounds():
    assert ShrinkageEstimate(1e-9).lambda_ == 1e-6
    assert ShrinkageEstimate(1.0).lambda_ == 1.0
    with pytest.raises(NumericalError):
        ShrinkageEstimate(0.0)
    with pytest.raises(UsageError):
        ShrinkageEstimate(1.5)


def test_resolve_shrinkage():
    X = standardized(20, 5)
    assert resolve_shrinkage(0.3, X) == ShrinkageEstimate(0.3, 'fixed')
    assert resolve_shrinkage('analytic', X).source == 'analytic'


def test_lambda_one_gives_empty_factor():
    L = build_lowrank(standardized(10, 30), 1.0)
    assert L.m == 0 and L.d == 30
    v = np.random.default_rng(1).normal(size=30)
    assert np.array_equal(fast_adjusted_scores(L, v), v)


def test_build_lowrank_reconstructs_dense_matrix():
    X = standardized(20, 5, seed=2)
    L = build_lowrank(X, 0.3)
    implied = L.lambda_ * (np.eye(5) + L.U @ np.diag(L.M) @ L.U.T)
    assert np.allclose(implied, dense_shrinkage(X, 0.3), atol=1e-10)
    assert np.allclose(np.diag(implied), 1.0, atol=1e-8)


@pytest.mark.parametrize('n,d', [(15, 60), (40, 12)])
def test_factor_is_orthonormal_and_positive(n, d):
    L = build_lowrank(standardized(n, d, seed=n), 0.2)
    assert L.m <= min(n - 1, d)
    assert np.allclose(L.U.T @ L.U, np.eye(L.m), atol=1e-8)
    assert np.all(L.M > 0)


def test_duplicate_columns_correlate_at_one_minus_lambda():
    X = standardized(25, 4, seed=5)
    X = np.column_stack([X, X[:, 0]])
    lam = 0.25
    L = build_lowrank(X, lam)
    implied = lam * (np.eye(5) + L.U @ np.diag(L.M) @ L.U.T)
    assert implied[0, 4] == pytest.approx(1.0 - lam, abs=1e-10)


def test_power_zero_is_identity():
    L = build_lowrank(standardized(12, 40, seed=3), 0.1)
    v = np.random.default_rng(4).normal(size=40)
    assert np.allclose(matrix_power_apply(L, 0.0, v), v, atol=1e-12)


def test_power_one_matches_dense():
    X = standardized(18, 30, seed=6)
    L = build_lowrank(X, 0.4)
    v = np.random.default_rng(7).normal(size=30)
    assert np.allclose(matrix_power_apply(L, 1.0, v), dense_shrinkage(X, 0.4) @ v, atol=1e-10)


def test_power_composition_recovers_vector():
    L = build_lowrank(standardized(20, 80, seed=8), 0.15)
    v = np.random.default_rng(9).normal(size=80)
    w = matrix_power_apply(L, -0.5, v)
    w = matrix_power_apply(L, -0.5, w)
    w = matrix_power_apply(L, 1.0, w)
    assert np.allclose(w, v, atol=1e-8)


def test_power_composition_and_linearity():
    rng = np.random.default_rng(10)
    for lam in (0.01, 0.1, 0.5, 0.9):
        L = build_lowrank(standardized(30, 120, seed=int(lam * 100)), lam)
        v, w = rng.normal(size=(2, 120))
        for alpha, beta in [(-0.5, 0.3), (1.0, -1.0), (0.7, 0.2)]:
            lhs = matrix_power_apply(L, alpha, matrix_power_apply(L, beta, v))
            rhs = matrix_power_apply(L, alpha + beta, v)
            assert np.allclose(lhs, rhs, atol=1e-7 * max(1.0, np.abs(rhs).max()))
        combined = matrix_power_apply(L, -0.5, 2.0 * v - 3.0 * w)
        separate = 2.0 * matrix_power_apply(L, -0.5, v) - 3.0 * matrix_power_apply(L, -0.5, w)
        assert np.allclose(combined, separate, atol=1e-10 * np.abs(separate).max())


def test_power_apply_accepts_blocks_and_checks_dimension():
    L = build_lowrank(standardized(10, 20, seed=12), 0.3)
    V = np.random.default_rng(13).normal(size=(20, 3))
    block = matrix_power_apply(L, -0.5, V)
    for k in range(3):
        assert np.allclose(block[:, k], matrix_power_apply(L, -0.5, V[:, k]), atol=1e-14)
    with pytest.raises(ValueError):
        matrix_power_apply(L, 1.0, np.ones(19))


def test_fast_adjusted_scores_matches_dense_oracle():
    rng = np.random.default_rng(14)
    worst = 0.0
    for instance, lam in zip(range(50), itertools.cycle((0.01, 0.1, 0.5, 0.9))):
        n = int(rng.integers(20, 61))
        d = int(rng.integers(50, 301))
        X = standardized(n, d, seed=100 + instance)
        r = X.T @ standardize_columns(rng.normal(size=(n, 1))).X[:, 0] / (n - 1)
        L = build_lowrank(X, lam)
        fast = fast_adjusted_scores(L, r)
        dense = dense_power(dense_shrinkage(X, lam), -0.5) @ r
        worst = max(worst, float(np.max(np.abs(fast - dense))))
        assert np.allclose(fast, matrix_power_apply(L, -0.5, r), atol=1e-12)
    assert worst < 1e-8


def test_fast_adjusted_scores_zero_and_non_finite():
    L = build_lowrank(standardized(10, 25, seed=15), 0.2)
    assert np.array_equal(fast_adjusted_scores(L, np.zeros(25)), np.zeros(25))
    r = np.zeros(25)
    r[3] = np.nan
    with pytest.raises(NumericalError):
        fast_adjusted_scores(L, r)


def test_analytic_lambda_matches_pairwise_oracle():
    X = standardized(6, 4, seed=16)
    n, d = X.shape
    num = den = 0.0
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            w = X[:, i] * X[:, j]
            r = w.sum() / (n - 1)
            var = n / (n - 1) ** 3 * ((w - w.mean()) ** 2).sum()
            num += var
            den += r ** 2
    expected = min(1.0, max(1e-6, num / den))
    assert estimate_lambda_analytic(X).lambda_ == pytest.approx(expected, abs=1e-12)


def test_analytic_lambda_identical_columns_is_minimal():
    column = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
    X = np.column_stack([column, column])
    assert estimate_lambda_analytic(X).lambda_ == 1e-6


def test_analytic_lambda_near_one_for_independent_columns():
    X = standardized(50, 200, seed=17)
    assert estimate_lambda_analytic(X).lambda_ > 0.5


def test_analytic_lambda_needs_three_samples():
    with pytest.raises(NumericalError):
        estimate_lambda_analytic(np.array([[1.0, -1.0], [-1.0, 1.0]]))


def test_with_lambda_rescales_middle_factor():
    X = standardized(15, 40, seed=18)
    rebuilt = build_lowrank(X, 0.6)
    rescaled = build_lowrank(X, 0.2).with_lambda(0.6)
    assert rescaled.lambda_ == 0.6
    assert np.allclose(rescaled.M, rebuilt.M, atol=1e-10)
    assert np.allclose(rescaled.eigenvalues, rebuilt.eigenvalues, atol=1e-10)
    assert rescaled.with_lambda(1.0).m == 0


def test_factor_cache_round_trip(tmp_path):
    X = standardized(12, 30, seed=19)
    L = build_lowrank(X, 0.1)
    path = tmp_path / 'factor.lrc'
    save_lowrank(str(path), L, fingerprint(X))

    loaded = load_lowrank(str(path), expected_fingerprint=fingerprint(X))
    assert loaded.lambda_ == L.lambda_
    assert np.array_equal(loaded.U, L.U)
    assert np.array_equal(loaded.M, L.M)
    assert path.read_bytes()[:4] == b'LRC1'


def test_factor_cache_rejects_bad_files(tmp_path):
    X = standardized(12, 30, seed=20)
    L = build_lowrank(X, 0.1)
    path = tmp_path / 'factor.lrc'
    save_lowrank(str(path), L, fingerprint(X))

    with pytest.raises(DataError, match='different data'):
        load_lowrank(str(path), expected_fingerprint=fingerprint(standardized(12, 30, seed=21)))

    truncated = tmp_path / 'short.lrc'
    truncated.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match='truncated'):
        load_lowrank(str(truncated))

    wrong = tmp_path / 'wrong.lrc'
    wrong.write_bytes(b'NOPE' + path.read_bytes()[4:])
    with pytest.raises(DataError, match='magic'):
        load_lowrank(str(wrong))


def test_factor_rejects_invalid_middle():
    with pytest.raises(NumericalError):
        LowRankCorrelation(0.5, np.eye(3)[:, :2], np.array([1.0, -1.0]))
