#!/usr/bin/env python3
"""
Tests for marginal, t, CAR and CAT scores and their decompositions
"""

import numpy as np
import pytest

from carsel.core.genomatrix import standardize_columns, standardize_phenotype
from carsel.core.lowrank import ShrinkageEstimate, fingerprint, load_lowrank
from carsel.errors import DataError, NumericalError, UsageError
from carsel.ml import score_manager
from carsel.ml.scores import (ScoreKind, ScoreVector, car_scores, cat_scores, decompose,
                              marginal_correlations, pooled_within_class, random_scores,
                              read_scores_tsv, t_scores, write_scores_tsv)


def dense_inverse_sqrt(R):
    w, V = np.linalg.eigh(R)
    return (V * w ** -0.5) @ V.T


def shrunk(X, lam):
    n, d = X.shape
    return lam * np.eye(d) + (1.0 - lam) * X.T @ X / (n - 1)


def instance(n, d, seed):
    rng = np.random.default_rng(seed)
    G = standardize_columns(rng.normal(size=(n, d)))
    y = G.X[:, :3] @ [1.0, -0.5, 0.3] + rng.normal(size=n)
    return G, standardize_phenotype(y)


def labels_for(n, seed):
    labels = np.array([0, 1] * (n // 2))
    np.random.default_rng(seed).shuffle(labels)
    return labels


def test_marginal_correlation_self_and_orthogonal():
    X = standardize_columns(np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]]))
    y = standardize_phenotype(X.X[:, 0])
    cor = marginal_correlations(X, y)
    assert cor.kind is ScoreKind.COR
    assert cor.values[0] == pytest.approx(1.0, abs=1e-12)
    assert cor.values[1] == pytest.approx(0.0, abs=1e-12)


def test_marginal_correlation_matches_pairwise_oracle():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(30, 10))
    y_raw = rng.normal(size=30)
    cor = marginal_correlations(standardize_columns(M), standardize_phenotype(y_raw))
    expected = [np.corrcoef(M[:, j], y_raw)[0, 1] for j in range(10)]
    assert np.allclose(cor.values, expected, atol=1e-12)


def test_marginal_correlation_dimension_mismatch():
    G, _ = instance(20, 5, 2)
    with pytest.raises(DataError):
        marginal_correlations(G, np.arange(19.0))


def test_t_scores_match_textbook_formula():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 8))
    labels = labels_for(40, 4)
    t = t_scores(X, labels)
    for j in range(8):
        a, b = X[labels == 0, j], X[labels == 1, j]
        sp = np.sqrt(((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1))
                     / (len(a) + len(b) - 2))
        expected = (b.mean() - a.mean()) / (sp * np.sqrt(1 / len(a) + 1 / len(b)))
        assert t.values[j] == pytest.approx(expected, abs=1e-10)


def test_t_scores_identical_classes_and_degenerate_cases():
    column = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    labels = np.array([0, 0, 0, 1, 1, 1])
    noise = np.array([0.3, -1.0, 0.4, 2.0, -0.5, 0.1])
    t = t_scores(np.column_stack([column, noise]), labels)
    assert t.values[0] == pytest.approx(0.0, abs=1e-12)

    separated = np.array([[-1.0], [-1.0], [-1.0], [1.0], [1.0], [1.0]])
    with pytest.raises(NumericalError, match='zero pooled variance'):
        t_scores(separated, labels)
    with pytest.raises(DataError):
        t_scores(np.column_stack([column, noise]), np.zeros(6))


def test_lambda_one_reduces_to_marginal_scores():
    G, y = instance(30, 60, 5)
    car = car_scores(G, y, shrinkage=1.0)
    cor = marginal_correlations(G, y)
    assert np.allclose(car.values, cor.values, atol=1e-12)
    assert car.lambda_used == 1.0

    labels = labels_for(30, 6)
    cat = cat_scores(G, labels, shrinkage=1.0)
    assert np.allclose(cat.values, t_scores(G, labels).values, atol=1e-12)


def test_car_matches_dense_oracle():
    G, y = instance(50, 100, 7)
    car = car_scores(G, y, shrinkage=0.1)
    cor = marginal_correlations(G, y).values
    expected = dense_inverse_sqrt(shrunk(G.X, 0.1)) @ cor
    assert np.allclose(car.values, expected, atol=1e-8)


def test_cat_matches_dense_oracle():
    G, _ = instance(40, 30, 8)
    labels = labels_for(40, 9)
    cat = cat_scores(G, labels, shrinkage=0.2)
    pooled = pooled_within_class(G, labels)
    tau = t_scores(G, labels).values
    expected = dense_inverse_sqrt(shrunk(pooled, 0.2)) @ tau
    assert np.allclose(cat.values, expected, atol=1e-8)


def test_duplicated_columns_share_scores():
    G, y = instance(30, 20, 10)
    X = np.column_stack([G.X, G.X[:, 0]])
    car = car_scores(X, y, shrinkage=0.1)
    assert car.values[0] == pytest.approx(car.values[-1], abs=1e-10)

    labels = labels_for(30, 11)
    cat = cat_scores(X, labels, shrinkage=0.1)
    assert cat.values[0] == pytest.approx(cat.values[-1], abs=1e-10)


def test_swapping_identical_columns_keeps_score_multiset():
    G, y = instance(30, 20, 12)
    X = np.column_stack([G.X, G.X[:, 4]])
    swapped = X.copy()
    swapped[:, [4, 7]] = X[:, [7, 4]]
    a = car_scores(X, y, shrinkage=0.1).values
    b = car_scores(swapped, y, shrinkage=0.1).values
    assert np.allclose(np.sort(a), np.sort(b), atol=1e-10)
    assert b[7] == pytest.approx(b[20], abs=1e-10)


def test_antagonistic_pair_gets_low_scores():
    rng = np.random.default_rng(13)
    n = 200
    base = rng.normal(size=n)
    a = base + 0.05 * rng.normal(size=n)
    b = base + 0.05 * rng.normal(size=n)
    G = standardize_columns(np.column_stack([a, b, rng.normal(size=(n, 8))]))
    assert np.corrcoef(G.X[:, 0], G.X[:, 1])[0, 1] >= 0.99

    # risk and protective effect of equal size
    y = standardize_phenotype(G.X[:, 0] - G.X[:, 1] + 0.001 * rng.normal(size=n))
    car = car_scores(G, y, shrinkage=0.1).values
    cor = marginal_correlations(G, y).values
    beta = np.linalg.solve(shrunk(G.X, 0.1), cor)
    assert np.sign(cor[0]) == -np.sign(cor[1])
    assert np.sign(car[0]) == -np.sign(car[1])
    for j in (0, 1):
        assert abs(car[j]) < abs(beta[j])


def test_ranking_invariant_to_phenotype_scale():
    G, y = instance(40, 50, 14)
    rng = np.random.default_rng(15)
    y_raw = G.X[:, 0] + rng.normal(size=40)
    a = car_scores(G, standardize_phenotype(y_raw)).ranking()
    b = car_scores(G, standardize_phenotype(7.5 * y_raw)).ranking()
    assert np.array_equal(a, b)


def test_car_decomposition_equals_quadratic_form():
    G, y = instance(40, 80, 16)
    car = car_scores(G, y, shrinkage=0.2)
    cor = marginal_correlations(G, y).values
    R = shrunk(G.X, 0.2)
    summary = decompose(car)
    assert summary.total_r2 == pytest.approx(cor @ np.linalg.solve(R, cor), abs=1e-8)
    assert summary.total_t2 is None
    assert sum(summary.per_group.values()) == pytest.approx(summary.total, abs=1e-12)


def test_cat_decomposition_equals_quadratic_form():
    G, _ = instance(40, 25, 17)
    labels = labels_for(40, 18)
    cat = cat_scores(G, labels, shrinkage=0.3)
    tau = t_scores(G, labels).values
    R = shrunk(pooled_within_class(G, labels), 0.3)
    assert decompose(cat).total_t2 == pytest.approx(tau @ np.linalg.solve(R, tau), rel=1e-8)


def test_decompose_groups_and_edge_cases():
    s = ScoreVector(np.array([0.3, 0.4, 0.0]), ScoreKind.CAR, ('a', 'b', 'c'))
    one_gene = decompose(s, ['G1', 'G1', 'G1'])
    assert one_gene.per_group == {'G1': pytest.approx(one_gene.total_r2)}

    split = decompose(s, ['G1', 'G2', 'G1'])
    assert list(split.per_group) == ['G2', 'G1']
    assert split.shares()['G2'] == pytest.approx(0.16 / 0.25)

    zero = decompose(ScoreVector(np.zeros(3), ScoreKind.CAT, ('a', 'b', 'c')))
    assert zero.total == 0.0

    with pytest.raises(UsageError):
        decompose(ScoreVector(np.zeros(3), ScoreKind.COR, ('a', 'b', 'c')))


def test_random_scores():
    a = random_scores(5, seed=3)
    b = random_scores(5, seed=3)
    assert np.array_equal(a.values, b.values)
    assert sorted(a.values) == [0.2, 0.4, 0.6, 0.8, 1.0]
    assert a.kind is ScoreKind.RND
    with pytest.raises(UsageError):
        random_scores(0, seed=1)


def test_random_scores_rank_first_uniformly():
    d, draws = 5, 10_000
    firsts = np.bincount([random_scores(d, seed).ranking()[0] for seed in range(draws)],
                         minlength=d)
    sigma = np.sqrt(draws * (1 / d) * (1 - 1 / d))
    assert np.all(np.abs(firsts - draws / d) <= 3 * sigma + 1)


def test_ranking_ties_keep_lower_index():
    s = ScoreVector(np.array([0.5, -0.9, 0.5, 0.1]), ScoreKind.COR, ('a', 'b', 'c', 'd'))
    assert s.ranked_ids() == ('b', 'a', 'c', 'd')


def test_score_vector_rejects_bad_values():
    with pytest.raises(NumericalError):
        ScoreVector(np.array([0.1, np.inf]), ScoreKind.CAR, ('a', 'b'))
    with pytest.raises(NumericalError):
        ScoreVector(np.array([1.5]), ScoreKind.COR, ('a',))
    with pytest.raises(DataError):
        ScoreVector(np.array([0.1]), ScoreKind.CAR, ('a', 'b'))


def test_score_tsv_round_trip(tmp_path):
    G, y = instance(30, 15, 19)
    car = car_scores(G, y, shrinkage=0.1)
    path = tmp_path / 'scores.tsv'
    write_scores_tsv(str(path), car, ['tool=carsel', 'config_hash=abc'])

    text = path.read_text().splitlines()
    assert text[0] == '# tool=carsel'
    assert text[2].split('\t') == ['rank', 'marker_id', 'gene', 'score', 'abs_score',
                                   'kind', 'lambda']

    back = read_scores_tsv(str(path))
    assert back.kind is ScoreKind.CAR
    assert back.lambda_used == pytest.approx(0.1)
    assert back.ranked_ids() == car.ranked_ids()
    assert np.array_equal(np.sort(back.values), np.sort(car.values))


def test_score_manager_methods_share_factor():
    G, y = instance(30, 40, 20)
    score_manager.factor_cache.clear()
    factor = score_manager.get_factor(G, ShrinkageEstimate(0.1))
    assert len(score_manager.factor_cache) == 1
    car = score_manager.score_markers(G, y, 'car', shrinkage=0.1)
    assert np.allclose(car.values, car_scores(G, y, factor=factor).values, atol=0)
    assert score_manager.score_markers(G, y, 'cor').kind is ScoreKind.COR
    assert score_manager.score_markers(G, y, 'rnd', seed=1).kind is ScoreKind.RND
    with pytest.raises(UsageError):
        score_manager.score_markers(G, y, 'lasso')

    info = score_manager.get_score_info(car)
    assert info['markers'] == 40
    assert info['explained'] == pytest.approx(float(np.sum(car.values ** 2)))


def test_factor_in_memory_is_still_written_to_cache_path(tmp_path):
    G, y = instance(30, 40, 21)
    score_manager.factor_cache.clear()
    first = score_manager.score_markers(G, y, 'car', shrinkage=0.1)
    path = tmp_path / 'factor.lrc'
    second = score_manager.score_markers(G, y, 'car', shrinkage=0.1, cache_path=str(path))
    assert len(score_manager.factor_cache) == 1
    assert path.exists()
    assert load_lowrank(str(path), expected_fingerprint=fingerprint(G)).d == 40
    assert np.array_equal(first.values, second.values)


def test_select_markers_rejects_top_k_beyond_d():
    G, y = instance(30, 40, 22)
    cor = score_manager.score_markers(G, y, 'cor')
    assert score_manager.select_markers(cor, top_k=40).model_size == 40
    with pytest.raises(UsageError):
        score_manager.select_markers(cor, top_k=41)
