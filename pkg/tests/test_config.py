#!/usr/bin/env python3
"""
Tests for run configuration parsing and provenance
"""

import pytest

from carsel.config import THREADS_ENV, RunConfig, parse_lambda, resolve_threads
from carsel.errors import UsageError


def test_parse_lambda():
    assert parse_lambda('0.25') == 0.25
    assert parse_lambda(' Analytic ') == 'analytic'
    assert parse_lambda(1) == 1.0
    for bad in ('0', '-0.1', '1.01', 'auto'):
        with pytest.raises(UsageError):
            parse_lambda(bad)


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv(THREADS_ENV, '4')
    assert resolve_threads(None) == 4
    assert resolve_threads(2) == 2
    monkeypatch.setenv(THREADS_ENV, 'many')
    with pytest.raises(UsageError):
        resolve_threads(None)
    with pytest.raises(UsageError):
        resolve_threads(0)


def test_config_hash_ignores_threads():
    one = RunConfig('bench', threads=1, methods=['car', 'rnd'])
    eight = RunConfig('bench', threads=8, methods=('car', 'rnd'))
    assert one.config_hash() == eight.config_hash()
    assert one.config_hash() != RunConfig('bench', lambda_spec='analytic').config_hash()
    assert len(one.config_hash()) == 16


def test_header_lines():
    config = RunConfig('score')
    lines = config.header_lines()
    assert lines[0] == 'tool=carsel'
    assert lines[2] == f"config_hash={config.config_hash()}"
    assert config.effective_seed == 0
    assert RunConfig('score', seed=9).effective_seed == 9


@pytest.mark.parametrize('changes', [
    {'subcommand': 'plot'},
    {'method': 'lasso'},
    {'methods': ('car', 'svm')},
    {'fdr_cutoff': 0.0},
    {'top_k': 0},
    {'window': 0},
    {'replicates': 0},
    {'seed': -1},
])
def test_invalid_config(changes):
    values = {'subcommand': 'score', **changes}
    with pytest.raises(UsageError):
        RunConfig(**values)
