#!/usr/bin/env python3
"""
carsel command-line driver: score, select, simulate, evaluate, bench.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from collections import defaultdict
from typing import Dict, List, Optional, Sequence

from carsel import __version__
from carsel.benchmark.bench_runner import BenchmarkRunner
from carsel.benchmark.evaluate import build_report, method_name, outcome_from_scores
from carsel.benchmark.simulate import (SimulationScenario, load_scenario, read_causal_tsv,
                                       scenario_presets, simulate_genotypes,
                                       simulate_phenotype, write_simulation)
from carsel.config import DEFAULTS, METHODS, RunConfig, resolve_threads
from carsel.core.genomatrix import load_dataset, residualize_phenotype
from carsel.core.results_store import ResultsStore
from carsel.errors import CarselError, DataError, UsageError
from carsel.ml import score_manager
from carsel.ml.scores import ScoreVector, read_scores_tsv, write_scores_tsv

logger = logging.getLogger('carsel')


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports bad flags as UsageError (exit 1)"""

    def error(self, message):
        raise UsageError(message)


def _add_data_flags(parser: argparse.ArgumentParser, required: bool = True):
    parser.add_argument('--genotypes', required=required, help='genotype TSV (sample_id + markers)')
    parser.add_argument('--meta', help='marker metadata TSV (marker_id, gene, synonymous)')
    parser.add_argument('--phenotypes', required=required, help='phenotype TSV')
    parser.add_argument('--phenotype-column', default='y', help='response column (default: y)')
    parser.add_argument('--method', choices=METHODS, default=DEFAULTS['method'])
    parser.add_argument('--lambda', dest='lambda_spec', default=str(DEFAULTS['lambda_spec']),
                        help="fixed shrinkage in (0, 1] or 'analytic' (default: 0.1)")
    parser.add_argument('--cache', help='low-rank factor cache file (LRC1)')
    parser.add_argument('--drop-synonymous', action='store_true')
    parser.add_argument('--seed', type=int, default=DEFAULTS['seed'], help='seed for rnd')


def _add_scenario_flags(parser: argparse.ArgumentParser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--preset', choices=sorted(scenario_presets()))
    source.add_argument('--scenario', help='scenario file (key = value lines)')
    parser.add_argument('--replicates', type=int, help='override the replicate count B')
    parser.add_argument('--seed', type=int, help='override the scenario seed')


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='carsel',
                            description='Shrinkage CAR/CAT scores for SNP selection')
    parser.add_argument('--version', action='version', version=f'carsel {__version__}')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    parser.add_argument('-q', '--quiet', action='store_true', help='warnings only')
    sub = parser.add_subparsers(dest='subcommand', parser_class=ArgumentParser)
    sub.required = True

    score = sub.add_parser('score', help='score every marker')
    _add_data_flags(score)
    score.add_argument('--out', required=True, help='score TSV to write')

    select = sub.add_parser('select', help='select markers by local fdr or top-k')
    _add_data_flags(select, required=False)
    select.add_argument('--scores', help='score TSV from `score` instead of raw data')
    select.add_argument('--cutoff', type=float, default=DEFAULTS['fdr_cutoff'])
    select.add_argument('--top-k', type=int)
    select.add_argument('--with-fdr', action='store_true', help='include per-marker fdr values')
    select.add_argument('--out', help='JSON file (default: stdout)')

    simulate = sub.add_parser('simulate', help='write a synthetic data set')
    _add_scenario_flags(simulate)
    simulate.add_argument('--out-dir', required=True)

    evaluate = sub.add_parser('evaluate', help='evaluate score files against the causal set')
    evaluate.add_argument('--scores', nargs='+', required=True,
                          help='one score TSV per replicate and method')
    evaluate.add_argument('--causal', required=True, help='causal.tsv from `simulate`')
    evaluate.add_argument('--cutoff', type=float, default=DEFAULTS['fdr_cutoff'])
    evaluate.add_argument('--window', type=int, default=DEFAULTS['window'])
    evaluate.add_argument('--max-k', type=int, default=DEFAULTS['max_k'])
    evaluate.add_argument('--out-dir', required=True)

    bench = sub.add_parser('bench', help='simulate, score and evaluate all replicates')
    _add_scenario_flags(bench)
    bench.add_argument('--methods', default='car,cor,rnd', help='comma-separated methods')
    bench.add_argument('--lambda', dest='lambda_spec', default=str(DEFAULTS['lambda_spec']))
    bench.add_argument('--cutoff', type=float, default=DEFAULTS['fdr_cutoff'])
    bench.add_argument('--threads', type=int, help='worker threads (default: CARSEL_THREADS or 1)')
    bench.add_argument('--window', type=int, default=DEFAULTS['window'])
    bench.add_argument('--max-k', type=int, default=DEFAULTS['max_k'])
    bench.add_argument('--store', help='SQLite results ledger')
    bench.add_argument('--out-dir', required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Fold parsed flags into a validated RunConfig"""
    inputs = {}
    for name in ('genotypes', 'meta', 'phenotypes', 'cache', 'scenario', 'causal', 'store'):
        value = getattr(args, name, None)
        if value:
            inputs[name] = value
    if getattr(args, 'scores', None):
        scores = args.scores
        inputs['scores'] = ','.join(scores) if isinstance(scores, list) else scores
    if getattr(args, 'phenotype_column', None):
        inputs['phenotype_column'] = args.phenotype_column

    methods = DEFAULTS['methods']
    if getattr(args, 'methods', None):
        methods = tuple(m.strip() for m in args.methods.split(',') if m.strip())

    return RunConfig(
        subcommand=args.subcommand,
        method=getattr(args, 'method', DEFAULTS['method']),
        lambda_spec=getattr(args, 'lambda_spec', DEFAULTS['lambda_spec']),
        fdr_cutoff=getattr(args, 'cutoff', DEFAULTS['fdr_cutoff']),
        top_k=getattr(args, 'top_k', None),
        seed=getattr(args, 'seed', None),
        threads=resolve_threads(getattr(args, 'threads', None)),
        window=getattr(args, 'window', DEFAULTS['window']),
        max_k=getattr(args, 'max_k', DEFAULTS['max_k']),
        replicates=getattr(args, 'replicates', None),
        preset=getattr(args, 'preset', None),
        methods=methods,
        drop_synonymous=getattr(args, 'drop_synonymous', False),
        include_fdr=getattr(args, 'with_fdr', False),
        inputs=inputs,
        output=getattr(args, 'out', None) or getattr(args, 'out_dir', None),
    )


def _scores_from_data(config: RunConfig) -> ScoreVector:
    inputs = config.inputs
    if 'genotypes' not in inputs or 'phenotypes' not in inputs:
        raise UsageError("--genotypes and --phenotypes are required")
    G, y_raw, covariates = load_dataset(inputs['genotypes'], inputs['phenotypes'],
                                        inputs.get('phenotype_column', 'y'),
                                        inputs.get('meta'),
                                        config.drop_synonymous)
    if config.method == 'cat':
        response = y_raw
    else:
        response = residualize_phenotype(y_raw, covariates)
    return score_manager.score_markers(G, response, config.method,
                                       shrinkage=config.lambda_spec, seed=config.effective_seed,
                                       cache_path=inputs.get('cache'))


def run_score(config: RunConfig) -> int:
    scores = _scores_from_data(config)
    write_scores_tsv(config.output, scores, config.header_lines())
    info = score_manager.get_score_info(scores)
    print(f"✓ {info['kind']} scores for {info['markers']} markers written to {config.output} "
          f"(top marker {info['top_marker']})")
    return 0


def run_select(config: RunConfig) -> int:
    if 'scores' in config.inputs:
        scores = read_scores_tsv(config.inputs['scores'])
    else:
        scores = _scores_from_data(config)
    result = score_manager.select_markers(scores, config.fdr_cutoff, config.top_k)
    text = result.to_json(include_fdr=config.include_fdr,
                          provenance=config.provenance())
    if config.output:
        with open(config.output, 'w', encoding='utf-8') as handle:
            handle.write(text + '\n')
        print(f"✓ selected {result.model_size} of {scores.d} markers -> {config.output}")
    else:
        print(text)
    return 0


def _scenario(config: RunConfig) -> SimulationScenario:
    if config.preset:
        sc = scenario_presets()[config.preset]
    else:
        sc = load_scenario(config.inputs['scenario'])
    changes = {}
    if config.replicates is not None:
        changes['replicates'] = config.replicates
    if config.seed is not None:
        changes['seed'] = config.seed
    return dataclasses.replace(sc, **changes) if changes else sc


def run_simulate(config: RunConfig) -> int:
    sc = _scenario(config)
    G = simulate_genotypes(sc)
    phenotypes = simulate_phenotype(G, sc)
    paths = write_simulation(config.output, sc, G, phenotypes, config.header_lines())
    print(f"✓ simulated {sc.name}: n={G.n}, d={G.d}, {len(sc.causal)} causal, "
          f"B={len(phenotypes)} -> {paths['genotypes']}")
    return 0


def _group_score_files(paths: Sequence[str]) -> List[Dict[str, ScoreVector]]:
    """The k-th file of each method is that method's replicate k"""
    by_method: Dict[str, List[ScoreVector]] = defaultdict(list)
    for path in paths:
        s = read_scores_tsv(path)
        by_method[method_name(s)].append(s)
    counts = {m: len(v) for m, v in by_method.items()}
    if len(set(counts.values())) != 1:
        raise DataError(f"unequal number of score files per method: {counts}")
    B = next(iter(counts.values()))
    return [{m: files[b] for m, files in by_method.items()} for b in range(B)]


def run_evaluate(config: RunConfig) -> int:
    replicates = _group_score_files(config.inputs['scores'].split(','))
    causal, mafs = read_causal_tsv(config.inputs['causal'])
    if not mafs:
        raise DataError("causal file needs a 'maf' column", path=config.inputs['causal'])
    outcomes = [outcome_from_scores(b + 1, scores, config.fdr_cutoff)
                for b, scores in enumerate(replicates)]
    report = build_report(outcomes, causal, mafs, config.max_k, config.window)
    _write_report(report, config)
    return 0


def _write_report(report, config: RunConfig):
    os.makedirs(config.output, exist_ok=True)
    path = os.path.join(config.output, 'report.json')
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(report.to_json(provenance=config.provenance()) + '\n')
    report.write_tables(config.output, config.header_lines())
    print(f"✓ report for {', '.join(report.methods)} over {report.replicates} replicates "
          f"-> {path}")
    for method, sizes in report.model_size.items():
        print(f"  {method}: median model size {sizes['median']:.0f} "
              f"(IQR {sizes['iqr']:.0f}), mean TP {report.tp_at_own_size[method]:.2f}")


def run_bench(config: RunConfig) -> int:
    sc = _scenario(config)
    store, run_id = None, None
    if 'store' in config.inputs:
        store = ResultsStore(config.inputs['store'])
        run_id = store.start_run('bench', config.config_hash(), __version__, config.to_dict())
        if run_id is None:
            print("✗ results store unavailable; continuing without it", file=sys.stderr)

    runner = BenchmarkRunner(sc, config.methods, config.lambda_spec, config.fdr_cutoff,
                             config.threads, store, run_id, config.max_k, config.window)
    report = runner.run()
    _write_report(report, config)
    stats = runner.get_resource_stats()
    print(f"✓ finished in {stats['elapsed_s']:.1f} s, resident memory {stats['rss_mb']:.0f} MB")
    if store is not None and run_id is not None:
        logger.debug("store statistics: %s", json.dumps(store.get_statistics(run_id)))
    return 0


COMMANDS = {
    'score': run_score,
    'select': run_select,
    'simulate': run_simulate,
    'evaluate': run_evaluate,
    'bench': run_bench,
}


def run(config: RunConfig) -> int:
    """Execute one configured subcommand"""
    return COMMANDS[config.subcommand](config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
        config = config_from_args(args)
        logger.debug("config %s: %s", config.config_hash(), config.to_dict())
        return run(config)
    except CarselError as e:
        print(f"✗ {e}", file=sys.stderr)
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
