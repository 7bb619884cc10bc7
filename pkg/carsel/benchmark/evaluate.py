#!/usr/bin/env python3
"""
Evaluation of marker rankings against a known causal set: true positives
along the ranking, model sizes, cross-method comparisons at each method's
own model size, recovery frequencies and the rare/common split.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.genomatrix import write_table
from ..errors import DataError, UsageError
from ..ml.scores import ScoreKind, ScoreVector
from ..ml.selection import select

logger = logging.getLogger(__name__)

RARE_MAF = 0.01
DEFAULT_WINDOW = 100
DEFAULT_MAX_K = 500


def true_positives_at_k(ranking: Sequence[str], causal: Iterable[str], k: int) -> int:
    """|top-k of ranking intersected with the causal set|; k is clamped to [0, d]"""
    causal = set(causal)
    if not causal or k <= 0:
        return 0
    return sum(1 for marker in ranking[:k] if marker in causal)


def tp_curve(ranking: Sequence[str], causal: Iterable[str], max_k: int) -> np.ndarray:
    """True positives at k = 1 .. min(max_k, d)"""
    causal = set(causal)
    top = ranking[:max(0, max_k)]
    return np.cumsum([marker in causal for marker in top], dtype=int)


def expected_random_tp(k: int, n_causal: int, d: int) -> float:
    """Hypergeometric mean of true positives among k random markers"""
    return min(k, d) * n_causal / d if d else 0.0


def cross_method_tp(rankings: Mapping[str, Sequence[str]],
                    model_sizes: Mapping[str, Optional[int]],
                    causal: Iterable[str]) -> pd.DataFrame:
    """Rows: methods with an own model size; columns: reference rankings.
    Cell (m, r) is the TP of r's ranking truncated at m's size (clamped to d)."""
    causal = set(causal)
    rows = [m for m in rankings if model_sizes.get(m) is not None]
    table = pd.DataFrame(0.0, index=pd.Index(rows, name='size_of'), columns=list(rankings))
    for m in rows:
        for r, ranking in rankings.items():
            size = min(int(model_sizes[m]), len(ranking))
            table.loc[m, r] = true_positives_at_k(ranking, causal, size)
    return table


def recovery_frequency(rankings: Sequence[Sequence[str]], causal: Sequence[str],
                       window: int = DEFAULT_WINDOW) -> Dict[str, int]:
    """Per causal marker, the number of replicate rankings with it in the top window"""
    if not rankings:
        raise UsageError("recovery frequencies need at least one replicate")
    counts = {marker: 0 for marker in causal}
    for ranking in rankings:
        for marker in ranking[:window]:
            if marker in counts:
                counts[marker] += 1
    return counts


def rare_common_split(rankings: Sequence[Sequence[str]], causal: Iterable[str],
                      mafs: Mapping[str, float], window: int = DEFAULT_WINDOW,
                      rare_maf: float = RARE_MAF) -> Optional[Tuple[float, float]]:
    """(proportion rare, proportion common) among true positives in the top
    window, pooled over replicates; None when there are no true positives"""
    causal = set(causal)
    rare = common = 0
    for ranking in rankings:
        for marker in ranking[:window]:
            if marker not in causal:
                continue
            if marker not in mafs:
                raise DataError(f"no MAF for causal marker {marker!r}")
            if mafs[marker] < rare_maf:
                rare += 1
            else:
                common += 1
    total = rare + common
    if total == 0:
        return None
    return rare / total, common / total


@dataclass
class ReplicateOutcome:
    """Rankings of each method on one replicate and their own model sizes
    (None for methods without a selection rule, e.g. rnd)"""
    replicate: int
    rankings: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    model_sizes: Dict[str, Optional[int]] = field(default_factory=dict)
    # (eta0, null_scale) of each fdr fit
    fits: Dict[str, Tuple[float, float]] = field(default_factory=dict)


def method_name(s: ScoreVector) -> str:
    return s.kind.value.lower()


def outcome_from_scores(replicate: int, scores: Mapping[str, ScoreVector],
                        cutoff: float = 0.5) -> ReplicateOutcome:
    """Rank every score vector and fdr-select all but the random ranking"""
    outcome = ReplicateOutcome(replicate)
    for method, s in scores.items():
        outcome.rankings[method] = s.ranked_ids()
        if s.kind is ScoreKind.RND:
            outcome.model_sizes[method] = None
            continue
        selection = select(s, cutoff)
        outcome.model_sizes[method] = selection.model_size
        outcome.fits[method] = (selection.eta0, selection.null_scale)
    return outcome


@dataclass
class EvaluationReport:
    methods: List[str]
    replicates: int
    d: int
    causal_ids: Tuple[str, ...]
    window: int
    tp_at_k: Dict[str, np.ndarray]
    model_size: Dict[str, Dict[str, float]]
    tp_at_own_size: Dict[str, float]
    cross_tp: pd.DataFrame
    recovery: Dict[str, Dict[str, int]]
    rare_common: Dict[str, Optional[Tuple[float, float]]]

    def random_expectation(self, k: float) -> float:
        return expected_random_tp(k, len(self.causal_ids), self.d)

    def to_dict(self) -> Dict:
        return {
            'methods': self.methods,
            'replicates': self.replicates,
            'd': self.d,
            'causal': list(self.causal_ids),
            'window': self.window,
            'tp_at_k': {m: curve.tolist() for m, curve in self.tp_at_k.items()},
            'model_size': self.model_size,
            'tp_at_own_size': self.tp_at_own_size,
            'random_tp_at_own_size': {m: self.random_expectation(s['mean'])
                                      for m, s in self.model_size.items()},
            'cross_tp': {m: row.to_dict() for m, row in self.cross_tp.iterrows()},
            'recovery': self.recovery,
            'rare_common': {m: None if split is None else {'rare': split[0], 'common': split[1]}
                            for m, split in self.rare_common.items()},
        }

    def to_json(self, provenance: Optional[Dict] = None) -> str:
        data = self.to_dict()
        if provenance is not None:
            data['provenance'] = provenance
        return json.dumps(data, indent=2)

    def write_tables(self, out_dir: str, header_lines: Sequence[str] = ()) -> List[str]:
        """model_sizes, cross_tp, rare_common, tp_curve and recovery TSVs"""
        os.makedirs(out_dir, exist_ok=True)
        written = []

        def emit(name: str, frame: pd.DataFrame):
            path = os.path.join(out_dir, name)
            write_table(frame, path, header_lines)
            written.append(path)

        emit('model_sizes.tsv', pd.DataFrame(
            [{'method': m, **stats, 'mean_tp': self.tp_at_own_size[m],
              'random_tp': self.random_expectation(stats['mean'])}
             for m, stats in self.model_size.items()],
            columns=['method', 'median', 'q1', 'q3', 'iqr', 'mean', 'mean_tp', 'random_tp']))
        emit('cross_tp.tsv', self.cross_tp.reset_index())
        emit('rare_common.tsv', pd.DataFrame(
            [{'method': m,
              'rare': np.nan if split is None else split[0],
              'common': np.nan if split is None else split[1]}
             for m, split in self.rare_common.items()],
            columns=['method', 'rare', 'common']))
        emit('tp_curve.tsv', pd.DataFrame(
            [{'k': k + 1, 'method': m, 'mean_tp': float(v)}
             for m, curve in self.tp_at_k.items() for k, v in enumerate(curve)],
            columns=['k', 'method', 'mean_tp']))
        emit('recovery.tsv', pd.DataFrame(
            [{'method': m, 'marker_id': marker, 'count': count}
             for m, counts in self.recovery.items() for marker, count in counts.items()],
            columns=['method', 'marker_id', 'count']))
        logger.info("wrote %d report tables to %s", len(written), out_dir)
        return written


def build_report(outcomes: Sequence[ReplicateOutcome], causal_ids: Sequence[str],
                 mafs: Mapping[str, float], max_k: int = DEFAULT_MAX_K,
                 window: int = DEFAULT_WINDOW) -> EvaluationReport:
    """Aggregate replicate outcomes; replicate order does not matter"""
    if not outcomes:
        raise UsageError("no replicate outcomes to evaluate")
    methods = list(outcomes[0].rankings)
    for outcome in outcomes:
        if list(outcome.rankings) != methods:
            raise DataError(f"replicate {outcome.replicate} has methods "
                            f"{list(outcome.rankings)}, expected {methods}")
    d = len(outcomes[0].rankings[methods[0]])
    causal = tuple(dict.fromkeys(causal_ids))
    known = set(outcomes[0].rankings[methods[0]])
    unknown = [c for c in causal if c not in known]
    if unknown:
        raise DataError(f"causal markers not among the ranked markers: {unknown[:3]}")

    B = len(outcomes)
    K = min(max_k, d)
    tp_at_k, model_size, tp_own, recovery, rare_common = {}, {}, {}, {}, {}
    for m in methods:
        rankings = [o.rankings[m] for o in outcomes]
        tp_at_k[m] = np.mean([tp_curve(r, causal, K) for r in rankings], axis=0)
        recovery[m] = recovery_frequency(rankings, causal, window)
        rare_common[m] = rare_common_split(rankings, causal, mafs, window)

        sizes = [o.model_sizes.get(m) for o in outcomes]
        if any(s is None for s in sizes):
            continue
        q1, median, q3 = np.percentile(sizes, [25, 50, 75])
        model_size[m] = {'median': float(median), 'q1': float(q1), 'q3': float(q3),
                         'iqr': float(q3 - q1), 'mean': float(np.mean(sizes))}
        tp_own[m] = float(np.mean([true_positives_at_k(o.rankings[m], causal, s)
                                   for o, s in zip(outcomes, sizes)]))

    cross = sum(cross_method_tp(o.rankings, o.model_sizes, causal) for o in outcomes) / B
    logger.info("evaluated %d methods over %d replicates (%d causal markers)",
                len(methods), B, len(causal))
    return EvaluationReport(methods, B, d, causal, window, tp_at_k, model_size, tp_own,
                            cross, recovery, rare_common)
