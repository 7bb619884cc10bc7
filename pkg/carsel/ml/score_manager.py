#!/usr/bin/env python3
"""
Score manager - one entry point from prepared data to scores and selections
"""

import logging
import os
import threading
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.genomatrix import GenotypeMatrix, PhenotypeVector
from ..core.lowrank import (LowRankCorrelation, ShrinkageEstimate, build_lowrank, fingerprint,
                            load_lowrank, resolve_shrinkage, save_lowrank)
from ..errors import DataError, NumericalError, UsageError
from . import scores as score_ops
from .scores import ScoreKind, ScoreVector
from .selection import SelectionResult, select, select_top_k

logger = logging.getLogger(__name__)

METHOD_KINDS = {
    'car': ScoreKind.CAR,
    'cat': ScoreKind.CAT,
    'cor': ScoreKind.COR,
    'rnd': ScoreKind.RND,
}


class FactorCache:
    """Low-rank factors keyed by (data fingerprint, lambda), in memory and
    optionally as LRC1 files, so replicate phenotypes share one factorization"""

    def __init__(self):
        self.lock = threading.Lock()
        self.factors: Dict[Tuple[bytes, float], LowRankCorrelation] = {}

    def load_or_create(self, X: Union[GenotypeMatrix, np.ndarray], shrinkage: ShrinkageEstimate,
                       cache_path: Optional[str] = None) -> LowRankCorrelation:
        """Memory, then disk, then a fresh factorization (saved when a path is given)"""
        key = (fingerprint(X), shrinkage.lambda_)
        with self.lock:
            if key in self.factors:
                factor = self.factors[key]
                if cache_path and not os.path.exists(cache_path):
                    save_lowrank(cache_path, factor, key[0])
                return factor

        factor = None
        if cache_path and os.path.exists(cache_path):
            try:
                factor = load_lowrank(cache_path, expected_fingerprint=key[0])
                if factor.lambda_ != shrinkage.lambda_:
                    factor = factor.with_lambda(shrinkage)
                logger.info("loaded low-rank factor from %s", cache_path)
            except (DataError, NumericalError) as e:
                logger.warning("ignoring factor cache %s: %s", cache_path, e)
                factor = None

        if factor is None:
            factor = build_lowrank(X, shrinkage)
            if cache_path:
                save_lowrank(cache_path, factor, key[0])

        with self.lock:
            self.factors[key] = factor
        return factor

    def clear(self):
        with self.lock:
            self.factors.clear()

    def __len__(self) -> int:
        return len(self.factors)


# Global instance
factor_cache = FactorCache()


def get_factor(G: GenotypeMatrix, shrinkage: ShrinkageEstimate,
               cache_path: Optional[str] = None) -> LowRankCorrelation:
    """Shared low-rank factor for G at the given intensity"""
    return factor_cache.load_or_create(G, shrinkage, cache_path)


def score_markers(G: GenotypeMatrix,
                  response: Union[PhenotypeVector, np.ndarray, Sequence],
                  method: str = 'car',
                  shrinkage: Union[ShrinkageEstimate, float, str] = 0.1,
                  factor: Optional[LowRankCorrelation] = None,
                  seed: int = 0,
                  cache_path: Optional[str] = None) -> ScoreVector:
    """Scores of one kind for every marker.

    ``response`` is a phenotype for car/cor and a binary label vector for cat;
    rnd ignores it and draws a ranking from ``seed``.
    """
    if method not in METHOD_KINDS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHOD_KINDS)}")

    if method == 'rnd':
        return score_ops.random_scores(G.d, seed, G.marker_ids)
    if method == 'cor':
        return score_ops.marginal_correlations(G, response)

    if method == 'car':
        if factor is None:
            factor = get_factor(G, resolve_shrinkage(shrinkage, G), cache_path)
        return score_ops.car_scores(G, response, factor=factor)

    if factor is None:
        pooled = score_ops.pooled_within_class(G, response)
        factor = factor_cache.load_or_create(pooled, resolve_shrinkage(shrinkage, pooled), cache_path)
    return score_ops.cat_scores(G, response, factor=factor)


def select_markers(scores: ScoreVector, cutoff: float = 0.5,
                   top_k: Optional[int] = None) -> SelectionResult:
    """Local-fdr selection, or a fixed-size selection when top_k is given"""
    if top_k is not None:
        return select_top_k(scores, top_k)
    return select(scores, cutoff)


def get_score_info(scores: ScoreVector) -> Dict:
    """Summary of a score vector for logs and reports"""
    magnitudes = np.abs(scores.values)
    info = {
        'kind': scores.kind.value,
        'markers': scores.d,
        'lambda': scores.lambda_used,
        'max_abs_score': float(magnitudes.max()),
        'top_marker': scores.marker_ids[int(scores.ranking()[0])],
    }
    if scores.kind in (ScoreKind.CAR, ScoreKind.CAT):
        info['explained'] = score_ops.decompose(scores).total
    return info
