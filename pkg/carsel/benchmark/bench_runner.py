#!/usr/bin/env python3
"""
Benchmark runner - simulate a scenario once, score every replicate phenotype
with each method against one shared low-rank factor, and aggregate
"""

import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import psutil
from joblib import Parallel, delayed

from ..core.genomatrix import GenotypeMatrix, PhenotypeVector
from ..core.lowrank import LowRankCorrelation, resolve_shrinkage
from ..core.results_store import ResultsStore
from ..errors import UsageError
from ..ml.score_manager import METHOD_KINDS, get_factor, score_markers
from .evaluate import (DEFAULT_MAX_K, DEFAULT_WINDOW, EvaluationReport, ReplicateOutcome,
                       build_report, outcome_from_scores, true_positives_at_k)
from .simulate import (RANKING_STREAM, SimulationScenario, causal_ids, derived_seed,
                       simulate_genotypes, simulate_phenotype)

logger = logging.getLogger(__name__)

DEFAULT_METHODS = ('car', 'cor', 'rnd')


class BenchmarkRunner:
    def __init__(self, scenario: SimulationScenario,
                 methods: Sequence[str] = DEFAULT_METHODS,
                 shrinkage=0.1, cutoff: float = 0.5, threads: int = 1,
                 store: Optional[ResultsStore] = None, run_id: Optional[int] = None,
                 max_k: int = DEFAULT_MAX_K, window: int = DEFAULT_WINDOW):
        unknown = [m for m in methods if m not in METHOD_KINDS]
        if unknown:
            raise UsageError(f"unknown methods {unknown}")
        if 'cat' in methods:
            raise UsageError("simulated phenotypes are metric; cat scores need binary labels")
        if len(set(methods)) != len(methods) or not methods:
            raise UsageError("methods must be a non-empty list without repeats")
        self.scenario = scenario
        self.methods = tuple(methods)
        self.shrinkage = shrinkage
        self.cutoff = cutoff
        self.threads = max(1, int(threads))
        self.store = store
        self.run_id = run_id
        self.max_k = max_k
        self.window = window
        self.process = psutil.Process()
        self.started = None
        self.outcomes: List[ReplicateOutcome] = []

    def run(self) -> EvaluationReport:
        """All replicates of the scenario; outcomes come back in replicate order"""
        self.started = time.perf_counter()
        sc = self.scenario

        G = simulate_genotypes(sc)
        phenotypes = simulate_phenotype(G, sc)
        causal = causal_ids(G, sc)

        factor = None
        if 'car' in self.methods:
            factor = get_factor(G, resolve_shrinkage(self.shrinkage, G))
        self._sample_resources()

        logger.info("running %d replicates of %s on %d thread(s)",
                    len(phenotypes), sc.name, self.threads)
        outcomes = Parallel(n_jobs=self.threads, prefer="threads")(
            delayed(self._run_replicate)(G, y, factor, causal) for y in phenotypes)
        self.outcomes = sorted(outcomes, key=lambda o: o.replicate)
        self._sample_resources()

        return build_report(self.outcomes, causal, G.maf_map(), self.max_k, self.window)

    def _run_replicate(self, G: GenotypeMatrix, y: PhenotypeVector,
                       factor: Optional[LowRankCorrelation],
                       causal: Tuple[str, ...]) -> ReplicateOutcome:
        b = y.replicate_index
        scores = {
            m: score_markers(G, y, m, factor=factor,
                             seed=derived_seed(self.scenario.seed, RANKING_STREAM, b))
            for m in self.methods
        }
        outcome = outcome_from_scores(b, scores, self.cutoff)
        if self.store is not None and self.run_id is not None:
            for m in self.methods:
                size = outcome.model_sizes[m]
                eta0, null_scale = outcome.fits.get(m, (None, None))
                self.store.log_replicate(
                    self.run_id, b, m, model_size=size,
                    tp_own_size=None if size is None else
                    true_positives_at_k(outcome.rankings[m], causal, size),
                    eta0=eta0, null_scale=null_scale)
        logger.debug("replicate %d: model sizes %s", b, outcome.model_sizes)
        return outcome

    def _sample_resources(self):
        stats = self.get_resource_stats()
        if self.store is not None and self.run_id is not None:
            self.store.log_resources(self.run_id, stats['rss_mb'], stats['elapsed_s'])

    def get_resource_stats(self) -> Dict:
        """Resident memory and wall time of the running benchmark"""
        elapsed = 0.0 if self.started is None else time.perf_counter() - self.started
        return {
            'rss_mb': self.process.memory_info().rss / 1e6,
            'elapsed_s': elapsed,
            'threads': self.threads,
            'cpu_count': psutil.cpu_count(logical=True),
        }
