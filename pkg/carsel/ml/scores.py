#!/usr/bin/env python3
"""
Marker scores: marginal correlations, t-scores and their
correlation-adjusted versions (CAR / CAT scores)
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.genomatrix import (GenotypeMatrix, PhenotypeVector, read_tsv, standardize_columns,
                               standardize_phenotype, write_table)
from ..core.lowrank import (LowRankCorrelation, ShrinkageEstimate, build_lowrank,
                            fast_adjusted_scores, resolve_shrinkage)
from ..errors import DataError, NumericalError, UsageError

logger = logging.getLogger(__name__)

Design = Union[GenotypeMatrix, np.ndarray]
Shrinkage = Union[ShrinkageEstimate, float, str]

SCORE_COLUMNS = ['rank', 'marker_id', 'gene', 'score', 'abs_score', 'kind', 'lambda']


class ScoreKind(str, Enum):
    COR = 'COR'
    TSCORE = 'TSCORE'
    CAR = 'CAR'
    CAT = 'CAT'
    RND = 'RND'


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """One score per marker, tagged with the kind of score"""
    values: np.ndarray
    kind: ScoreKind
    marker_ids: Tuple[str, ...]
    lambda_used: Optional[float] = None
    genes: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        kind = ScoreKind(self.kind)
        if len(self.marker_ids) != values.size:
            raise DataError(f"{values.size} scores for {len(self.marker_ids)} markers")
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"{kind.value} scores contain non-finite values")
        peak = float(np.max(np.abs(values))) if values.size else 0.0
        if kind is ScoreKind.COR and peak > 1.0 + 1e-8:
            raise NumericalError(f"marginal correlation {peak} outside [-1, 1]")
        if kind is ScoreKind.CAR and peak > 1.0 + 1e-6:
            logger.warning("CAR score magnitude %.6f exceeds 1 after shrinkage", peak)
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'marker_ids', tuple(self.marker_ids))
        if self.genes is not None:
            object.__setattr__(self, 'genes', tuple(self.genes))

    @property
    def d(self) -> int:
        return self.values.size

    def ranking(self) -> np.ndarray:
        """Marker indices by descending |score|; ties keep the lower index first"""
        return np.argsort(-np.abs(self.values), kind='stable')

    def ranked_ids(self) -> Tuple[str, ...]:
        return tuple(self.marker_ids[j] for j in self.ranking())

    def to_frame(self) -> pd.DataFrame:
        order = self.ranking()
        genes = self.genes if self.genes is not None else self.marker_ids
        return pd.DataFrame({
            'rank': np.arange(1, self.d + 1),
            'marker_id': [self.marker_ids[j] for j in order],
            'gene': [genes[j] for j in order],
            'score': self.values[order],
            'abs_score': np.abs(self.values[order]),
            'kind': self.kind.value,
            'lambda': self.lambda_used if self.lambda_used is not None else np.nan,
        }, columns=SCORE_COLUMNS)


@dataclass(frozen=True)
class DecompositionSummary:
    """Sum of squared adjusted scores (R^2 for CAR, T^2 for CAT) and its split by gene"""
    kind: ScoreKind
    total: float
    per_group: Dict[str, float]

    @property
    def total_r2(self) -> Optional[float]:
        return self.total if self.kind is ScoreKind.CAR else None

    @property
    def total_t2(self) -> Optional[float]:
        return self.total if self.kind is ScoreKind.CAT else None

    def shares(self) -> Dict[str, float]:
        """Fraction of the total carried by each gene, largest first"""
        if self.total == 0.0:
            return {g: 0.0 for g in self.per_group}
        return {g: v / self.total for g, v in self.per_group.items()}


def _design(X: Design) -> Tuple[np.ndarray, Tuple[str, ...], Optional[Tuple[str, ...]]]:
    if isinstance(X, GenotypeMatrix):
        return X.X, X.marker_ids, X.genes
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError(f"expected an n x d matrix, got shape {X.shape}")
    return X, tuple(f"M{j + 1}" for j in range(X.shape[1])), None


def _response(y: Union[PhenotypeVector, np.ndarray]) -> np.ndarray:
    if isinstance(y, PhenotypeVector):
        return y.y
    return standardize_phenotype(y).y


def marginal_correlations(X: Design, y: Union[PhenotypeVector, np.ndarray]) -> ScoreVector:
    """COR: X_j^T y / (n - 1) for standardized X and y"""
    matrix, ids, genes = _design(X)
    response = _response(y)
    if response.size != matrix.shape[0]:
        raise DataError(f"phenotype has {response.size} samples, genotypes have {matrix.shape[0]}")
    values = matrix.T @ response / (matrix.shape[0] - 1)
    return ScoreVector(values, ScoreKind.COR, ids, genes=genes)


def _two_classes(labels: Sequence, n: int) -> np.ndarray:
    labels = np.asarray(labels).ravel()
    if labels.size != n:
        raise DataError(f"{labels.size} labels for {n} samples")
    classes = np.unique(labels)
    if classes.size != 2:
        raise DataError(f"binary response needs exactly two classes, found {classes.size}")
    second = labels == classes[1]
    for size in (int((~second).sum()), int(second.sum())):
        if size < 2:
            raise DataError("each class needs at least two samples")
    return second


def t_scores(X: Design, labels: Sequence) -> ScoreVector:
    """Two-sample pooled-variance t-statistic per column (second class minus first)"""
    matrix, ids, genes = _design(X)
    second = _two_classes(labels, matrix.shape[0])
    a, b = matrix[~second], matrix[second]
    n_a, n_b = a.shape[0], b.shape[0]
    mean_a, mean_b = a.mean(axis=0), b.mean(axis=0)
    ss = ((a - mean_a) ** 2).sum(axis=0) + ((b - mean_b) ** 2).sum(axis=0)
    pooled_var = ss / (n_a + n_b - 2)

    scale = np.mean(matrix ** 2, axis=0)
    degenerate = pooled_var <= 1e-20 * np.maximum(scale, np.finfo(float).tiny)
    if degenerate.any():
        raise NumericalError(f"zero pooled variance in column {ids[int(np.flatnonzero(degenerate)[0])]}")

    values = (mean_b - mean_a) / (np.sqrt(pooled_var) * np.sqrt(1.0 / n_a + 1.0 / n_b))
    return ScoreVector(values, ScoreKind.TSCORE, ids, genes=genes)


def pooled_within_class(X: Design, labels: Sequence) -> np.ndarray:
    """Standardize each class separately, keep the rows in place and
    rescale the pooled matrix to unit sample variance"""
    matrix, ids, _ = _design(X)
    second = _two_classes(labels, matrix.shape[0])
    pooled = np.empty_like(matrix)
    for mask in (~second, second):
        block = matrix[mask]
        centered = block - block.mean(axis=0)
        sd = np.sqrt((centered ** 2).sum(axis=0) / (block.shape[0] - 1))
        if np.any(sd == 0.0):
            column = ids[int(np.flatnonzero(sd == 0.0)[0])]
            raise NumericalError(f"column {column} is constant within a class")
        pooled[mask] = centered / sd
    return standardize_columns(pooled, marker_ids=ids).X


def car_scores(X: Design, y: Union[PhenotypeVector, np.ndarray],
               shrinkage: Shrinkage = 0.1,
               factor: Optional[LowRankCorrelation] = None) -> ScoreVector:
    """CAR: R^(-1/2) times the marginal correlations; a prebuilt factor is reused"""
    cor = marginal_correlations(X, y)
    if factor is None:
        factor = build_lowrank(X, resolve_shrinkage(shrinkage, _design(X)[0]))
    values = fast_adjusted_scores(factor, cor.values)
    return ScoreVector(values, ScoreKind.CAR, cor.marker_ids, factor.lambda_, cor.genes)


def cat_scores(X: Design, labels: Sequence,
               shrinkage: Shrinkage = 0.1,
               factor: Optional[LowRankCorrelation] = None) -> ScoreVector:
    """CAT: R^(-1/2) times the t-scores, R from pooled within-class data"""
    t = t_scores(X, labels)
    if factor is None:
        pooled = pooled_within_class(X, labels)
        factor = build_lowrank(pooled, resolve_shrinkage(shrinkage, pooled))
    values = fast_adjusted_scores(factor, t.values)
    return ScoreVector(values, ScoreKind.CAT, t.marker_ids, factor.lambda_, t.genes)


def decompose(s: ScoreVector, gene_labels: Optional[Sequence[str]] = None) -> DecompositionSummary:
    """Total and per-gene sums of squared adjusted scores"""
    if s.kind not in (ScoreKind.CAR, ScoreKind.CAT):
        raise UsageError(f"{s.kind.value} scores do not decompose the explained variance")
    if gene_labels is None:
        gene_labels = s.genes if s.genes is not None else s.marker_ids
    if len(gene_labels) != s.d:
        raise DataError(f"{len(gene_labels)} gene labels for {s.d} scores")

    squared = s.values ** 2
    per_gene = (pd.Series(squared, index=list(gene_labels))
                .groupby(level=0, sort=False).sum()
                .sort_values(ascending=False, kind='stable'))
    return DecompositionSummary(s.kind, float(squared.sum()),
                                {str(g): float(v) for g, v in per_gene.items()})


def random_scores(d: int, seed: int, marker_ids: Optional[Sequence[str]] = None) -> ScoreVector:
    """Uniformly random ranking encoded as scores in (0, 1]"""
    if d < 1:
        raise UsageError(f"need at least one marker, got d={d}")
    if marker_ids is None:
        marker_ids = tuple(f"M{j + 1}" for j in range(d))
    rng = np.random.default_rng(seed)
    order = rng.permutation(d)
    values = np.empty(d)
    values[order] = (d - np.arange(d)) / d
    return ScoreVector(values, ScoreKind.RND, tuple(marker_ids))


def write_scores_tsv(path: str, s: ScoreVector, header_lines: Sequence[str] = ()):
    write_table(s.to_frame(), path, header_lines)


def read_scores_tsv(path: str) -> ScoreVector:
    """Read a score TSV back; markers come back in rank order"""
    frame, header_line = read_tsv(path)
    missing = set(SCORE_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"score file lacks columns {sorted(missing)}", path=path, line=header_line)
    kinds = frame['kind'].unique()
    if len(kinds) != 1:
        raise DataError("score file mixes several score kinds", path=path)
    try:
        values = frame['score'].astype(float).to_numpy()
        lam = pd.to_numeric(frame['lambda'], errors='coerce').iloc[0] if len(frame) else np.nan
        kind = ScoreKind(kinds[0])
    except ValueError as e:
        raise DataError(f"malformed score file: {e}", path=path)
    return ScoreVector(values, kind, tuple(frame['marker_id']),
                       None if pd.isna(lam) else float(lam), tuple(frame['gene']))
