#!/usr/bin/env python3
"""
Run configuration for the carsel command-line driver
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple, Union

from . import TOOL_NAME, __version__
from .errors import UsageError

SUBCOMMANDS = ('score', 'select', 'simulate', 'evaluate', 'bench')
METHODS = ('car', 'cat', 'cor', 'rnd')
THREADS_ENV = 'CARSEL_THREADS'

# Fixed λ = 0.1 and fdr cutoff 0.5 are the published CAR settings
DEFAULTS = {
    'method': 'car',
    'lambda_spec': 0.1,
    'fdr_cutoff': 0.5,
    'window': 100,
    'max_k': 500,
    'threads': 1,
    'seed': 0,
    'methods': ('car', 'cor', 'rnd'),
}


def parse_lambda(value: Union[str, float]) -> Union[str, float]:
    """Parse a λ flag: a float in (0, 1] or the literal 'analytic'"""
    if isinstance(value, str) and value.strip().lower() == 'analytic':
        return 'analytic'
    try:
        lam = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"--lambda must be a number in (0, 1] or 'analytic', got {value!r}")
    if not 0.0 < lam <= 1.0:
        raise UsageError(f"fixed lambda must lie in (0, 1], got {lam}")
    return lam


def resolve_threads(flag: Optional[int]) -> int:
    """--threads wins, then CARSEL_THREADS, then 1"""
    if flag is not None:
        threads = flag
    else:
        env_value = os.environ.get(THREADS_ENV)
        if env_value:
            try:
                threads = int(env_value)
            except ValueError:
                raise UsageError(f"{THREADS_ENV} must be an integer, got {env_value!r}")
        else:
            threads = DEFAULTS['threads']
    if threads < 1:
        raise UsageError(f"threads must be >= 1, got {threads}")
    return threads


@dataclass(frozen=True)
class RunConfig:
    """Every parameter of one CLI invocation"""
    subcommand: str
    method: str = DEFAULTS['method']
    lambda_spec: Union[str, float] = DEFAULTS['lambda_spec']
    fdr_cutoff: float = DEFAULTS['fdr_cutoff']
    top_k: Optional[int] = None
    # None keeps a scenario's own seed
    seed: Optional[int] = None
    threads: int = DEFAULTS['threads']
    window: int = DEFAULTS['window']
    max_k: int = DEFAULTS['max_k']
    replicates: Optional[int] = None
    preset: Optional[str] = None
    methods: Tuple[str, ...] = DEFAULTS['methods']
    drop_synonymous: bool = False
    include_fdr: bool = False
    inputs: Dict[str, str] = field(default_factory=dict)
    output: Optional[str] = None

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        object.__setattr__(self, 'methods', tuple(self.methods))
        for method in self.methods:
            if method not in METHODS:
                raise UsageError(f"unknown method {method!r} in --methods")
        if self.seed is not None and self.seed < 0:
            raise UsageError(f"seed must be non-negative, got {self.seed}")
        object.__setattr__(self, 'lambda_spec', parse_lambda(self.lambda_spec))
        if not 0.0 < self.fdr_cutoff < 1.0:
            raise UsageError(f"fdr cutoff must lie in (0, 1), got {self.fdr_cutoff}")
        if self.top_k is not None and self.top_k < 1:
            raise UsageError(f"--top-k must be >= 1, got {self.top_k}")
        if self.window < 1 or self.max_k < 1:
            raise UsageError("--window and --max-k must be >= 1")
        if self.replicates is not None and self.replicates < 1:
            raise UsageError(f"--replicates must be >= 1, got {self.replicates}")

    @property
    def effective_seed(self) -> int:
        return self.seed if self.seed is not None else DEFAULTS['seed']

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['methods'] = list(self.methods)
        return data

    def config_hash(self) -> str:
        """Short SHA-256 of the canonical JSON form; threads excluded so
        thread counts never change the provenance of identical results"""
        data = self.to_dict()
        data.pop('threads')
        canonical = json.dumps(data, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]

    def provenance(self) -> Dict:
        return {
            'tool': TOOL_NAME,
            'version': __version__,
            'config_hash': self.config_hash(),
        }

    def header_lines(self) -> Tuple[str, ...]:
        """Provenance as key=value lines for TSV comment headers"""
        return tuple(f"{key}={value}" for key, value in self.provenance().items())
