#!/usr/bin/env python3
"""
Synthetic genotype/phenotype replicates with known causal markers.

Genotypes follow a latent Gaussian threshold model: each haplotype is an
equicorrelated Gaussian vector within LD blocks, thresholded at the marker's
MAF quantile, and the two haplotypes are summed (Hardy-Weinberg by
construction). Phenotypes are linear in the causal allele counts with
Gaussian noise scaled to the requested heritability.
"""

import logging
import os
from dataclasses import dataclass
from types import MappingProxyType
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from ..core.genomatrix import (GenotypeMatrix, MarkerRecord, PhenotypeVector, RawGenotypes,
                               prepare_genotypes, read_tsv, standardize_phenotype,
                               write_genotype_tsv,
                               write_marker_tsv, write_phenotype_tsv, write_table)
from ..errors import DataError, NumericalError, UsageError

logger = logging.getLogger(__name__)

GENOTYPE_STREAM = 0
PHENOTYPE_STREAM = 1
RANKING_STREAM = 2


@dataclass(frozen=True)
class LDBlock:
    size: int
    rho: float


@dataclass(frozen=True)
class CausalMarker:
    index: int
    beta: float
    maf: float


@dataclass(frozen=True)
class SimulationScenario:
    """Dimensions, LD structure, causal effects, heritability and replicate count"""
    n: int
    d: int
    blocks: Tuple[LDBlock, ...] = ()
    causal: Tuple[CausalMarker, ...] = ()
    heritability: float = 0.5
    replicates: int = 1
    seed: int = 0
    maf_min: float = 0.05
    maf_max: float = 0.5
    name: str = 'custom'

    def __post_init__(self):
        object.__setattr__(self, 'blocks', tuple(self.blocks))
        object.__setattr__(self, 'causal', tuple(self.causal))
        if self.n < 3 or self.d < 1:
            raise UsageError(f"scenario needs n >= 3 and d >= 1, got n={self.n}, d={self.d}")
        if self.replicates < 1:
            raise UsageError(f"replicates must be >= 1, got {self.replicates}")
        if not 0.0 <= self.heritability <= 1.0:
            raise UsageError(f"heritability must lie in [0, 1], got {self.heritability}")
        if not 0.0 < self.maf_min <= self.maf_max <= 0.5:
            raise UsageError(f"background MAF range ({self.maf_min}, {self.maf_max}) "
                             "must lie inside (0, 0.5]")
        if sum(b.size for b in self.blocks) > self.d:
            raise UsageError("LD block sizes exceed d")
        for block in self.blocks:
            if block.size < 1 or not 0.0 <= block.rho < 1.0:
                raise UsageError(f"invalid LD block {block}")
        indices = [c.index for c in self.causal]
        if len(set(indices)) != len(indices):
            raise UsageError("causal marker indices must be distinct")
        for c in self.causal:
            if not 0 <= c.index < self.d:
                raise UsageError(f"causal index {c.index} outside [0, {self.d})")
            if not 0.0 < c.maf <= 0.5:
                raise UsageError(f"causal MAF {c.maf} outside (0, 0.5]")

    def block_ranges(self) -> List[Tuple[int, int, float]]:
        """(start, stop, rho) of each block, placed consecutively from marker 0"""
        ranges, start = [], 0
        for block in self.blocks:
            ranges.append((start, start + block.size, block.rho))
            start += block.size
        return ranges

    def marker_id(self, index: int) -> str:
        return f"snp{index + 1:05d}"


def _stream(seed: int, *key: int) -> np.random.Generator:
    """Independent RNG stream per (seed, purpose, replicate)"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def marker_mafs(sc: SimulationScenario) -> np.ndarray:
    rng = _stream(sc.seed, GENOTYPE_STREAM, 0)
    mafs = rng.uniform(sc.maf_min, sc.maf_max, size=sc.d)
    for c in sc.causal:
        mafs[c.index] = c.maf
    if np.any((mafs <= 0.0) | (mafs > 0.5)):
        raise UsageError("marker MAFs must lie inside (0, 0.5]")
    return mafs


def simulate_codes(sc: SimulationScenario) -> np.ndarray:
    """n x d allele counts; monomorphic columns get one random heterozygote"""
    mafs = marker_mafs(sc)
    thresholds = stats.norm.ppf(mafs)
    rng = _stream(sc.seed, GENOTYPE_STREAM, 1)
    codes = np.zeros((sc.n, sc.d), dtype=np.int8)
    for _ in range(2):
        latent = rng.standard_normal((sc.n, sc.d))
        for start, stop, rho in sc.block_ranges():
            shared = rng.standard_normal((sc.n, 1))
            latent[:, start:stop] = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * latent[:, start:stop]
        codes += (latent < thresholds).astype(np.int8)

    constant = np.flatnonzero(np.all(codes == codes[0], axis=0))
    for j in constant:
        i = rng.integers(sc.n)
        codes[i, j] = 1 if codes[i, j] != 1 else 2
    if constant.size:
        logger.debug("made %d monomorphic markers polymorphic", constant.size)
    return codes


def _gene_labels(sc: SimulationScenario) -> List[str]:
    genes = [sc.marker_id(j) for j in range(sc.d)]
    for b, (start, stop, _) in enumerate(sc.block_ranges()):
        for j in range(start, stop):
            genes[j] = f"LD{b + 1:03d}"
    return genes


def simulate_genotypes(sc: SimulationScenario) -> GenotypeMatrix:
    """Standardized genotypes (codes retained) after the usual dedup pipeline"""
    codes = simulate_codes(sc)
    genes = _gene_labels(sc)
    raw = RawGenotypes(
        samples=tuple(f"s{i + 1:05d}" for i in range(sc.n)),
        markers=tuple(MarkerRecord(sc.marker_id(j), genes[j], False) for j in range(sc.d)),
        calls=codes.astype(float),
    )
    G = prepare_genotypes(raw)
    logger.info("simulated %s genotypes: n=%d, d=%d (%d after dedup)",
                sc.name, sc.n, sc.d, G.d)
    return G


def causal_ids(G: GenotypeMatrix, sc: SimulationScenario) -> Tuple[str, ...]:
    """Post-dedup IDs of the causal markers; duplicates collapse onto one ID"""
    resolved = []
    for c in sc.causal:
        marker_id = G.marker_ids[G.column_of(sc.marker_id(c.index))]
        if marker_id not in resolved:
            resolved.append(marker_id)
    return tuple(resolved)


def genetic_values(G: GenotypeMatrix, sc: SimulationScenario) -> np.ndarray:
    if not sc.causal:
        return np.zeros(G.n)
    if G.codes is None:
        raise DataError("genetic values need the pre-standardization codes")
    columns = [G.column_of(sc.marker_id(c.index)) for c in sc.causal]
    beta = np.array([c.beta for c in sc.causal])
    return G.codes[:, columns] @ beta


def simulate_phenotype(G: GenotypeMatrix, sc: SimulationScenario) -> List[PhenotypeVector]:
    """B standardized replicate phenotypes y_b = X_causal beta + noise_b"""
    g = genetic_values(G, sc)
    var_g = float(np.var(g, ddof=1))
    h2 = sc.heritability
    if h2 > 0.0 and var_g == 0.0:
        raise NumericalError("zero genetic variance with positive heritability")

    if h2 >= 1.0:
        noise_sd = 0.0
    elif h2 == 0.0:
        noise_sd = 1.0
        g = np.zeros_like(g)
    else:
        noise_sd = np.sqrt(var_g * (1.0 - h2) / h2)

    phenotypes = []
    for b in range(1, sc.replicates + 1):
        noise = _stream(sc.seed, PHENOTYPE_STREAM, b).standard_normal(G.n)
        phenotypes.append(standardize_phenotype(g + noise_sd * noise, replicate_index=b))
    return phenotypes


# (MAF, BETA) of the top published causal SNPs for each reference phenotype
_Q1_EFFECTS = (
    (0.011478, 0.56190), (0.017217, 0.74136), (0.027977, 0.61830),
    (0.066714, 0.64997), (0.004304, 0.62223), (0.000717, 1.07706),
    (0.164993, 0.13573), (0.020803, 0.29558), (0.002152, 1.20645),
    (0.000717, 1.35726),
)
_Q2_EFFECTS = (
    (0.000717, 1.01569), (0.000717, 1.09484), (0.015782, 0.49459),
    (0.002152, 0.83224), (0.002152, 0.97060), (0.170732, 0.24437),
    (0.098278, 0.27053), (0.010043, 0.66909),
)
_RHO_CYCLE = (0.2, 0.5, 0.8)


def _preset(name: str, n_causal: int, effects: Sequence[Tuple[float, float]],
            heritability: float, n: int = 400, d: int = 2000,
            block_size: int = 10, replicates: int = 100, seed: int = 7) -> SimulationScenario:
    n_blocks = d // block_size
    n_causal_blocks = (n_causal + 1) // 2
    step = max(1, n_blocks // max(n_causal_blocks, 1))
    causal_blocks = {b * step for b in range(n_causal_blocks)}
    blocks = tuple(LDBlock(block_size, 0.7 if b in causal_blocks else _RHO_CYCLE[b % 3])
                   for b in range(n_blocks))

    causal = []
    for i in range(n_causal):
        block = sorted(causal_blocks)[i // 2]
        index = block * block_size + (2 if i % 2 == 0 else 6)
        maf, beta = effects[i % len(effects)]
        causal.append(CausalMarker(index, beta, maf))
    return SimulationScenario(n=n, d=d, blocks=blocks, causal=tuple(causal),
                              heritability=heritability, replicates=replicates,
                              seed=seed, name=name)


def scenario_presets() -> Mapping[str, SimulationScenario]:
    """Named desk-scale scenarios mirroring the reference phenotypes"""
    return MappingProxyType({
        'q1like': _preset('q1like', 38, _Q1_EFFECTS, 0.44),
        'q2like': _preset('q2like', 71, _Q2_EFFECTS, 0.29),
        # heritable, but none of it through the markers
        'q4like': _preset('q4like', 0, _Q1_EFFECTS, 0.0),
    })


_SCALAR_KEYS = {
    'n': int, 'd': int, 'replicates': int, 'seed': int,
    'heritability': float, 'maf_min': float, 'maf_max': float, 'name': str,
}


def parse_scenario_text(text: str, source: str = '<scenario>') -> SimulationScenario:
    """Flat key = value grammar; 'block' and 'causal' lines repeat"""
    values: Dict[str, object] = {}
    blocks, causal = [], []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise DataError(f"expected 'key = value', got {line!r}", path=source, line=line_no)
        try:
            if key == 'block':
                size, rho = [v.strip() for v in value.split(',')]
                blocks.append(LDBlock(int(size), float(rho)))
            elif key == 'causal':
                index, beta, maf = [v.strip() for v in value.split(',')]
                causal.append(CausalMarker(int(index), float(beta), float(maf)))
            elif key in _SCALAR_KEYS:
                if key in values:
                    raise DataError(f"duplicate key {key!r}", path=source, line=line_no)
                values[key] = _SCALAR_KEYS[key](value.strip('"'))
            else:
                raise DataError(f"unknown key {key!r}", path=source, line=line_no)
        except ValueError as e:
            raise DataError(f"malformed value for {key!r}: {e}", path=source, line=line_no)

    for required in ('n', 'd'):
        if required not in values:
            raise DataError(f"scenario lacks required key {required!r}", path=source)
    try:
        return SimulationScenario(blocks=tuple(blocks), causal=tuple(causal), **values)
    except UsageError as e:
        raise DataError(str(e), path=source)


def load_scenario(path: str) -> SimulationScenario:
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            text = handle.read()
    except OSError as e:
        raise DataError(f"cannot read scenario: {e}", path=path)
    return parse_scenario_text(text, source=path)


def format_scenario(sc: SimulationScenario) -> str:
    """Scenario in the file grammar accepted by parse_scenario_text"""
    lines = [f"name = {sc.name}", f"n = {sc.n}", f"d = {sc.d}",
             f"heritability = {sc.heritability!r}", f"replicates = {sc.replicates}",
             f"seed = {sc.seed}", f"maf_min = {sc.maf_min!r}", f"maf_max = {sc.maf_max!r}"]
    lines += [f"block = {b.size}, {b.rho!r}" for b in sc.blocks]
    lines += [f"causal = {c.index}, {c.beta!r}, {c.maf!r}" for c in sc.causal]
    return "\n".join(lines) + "\n"


def write_simulation(out_dir: str, sc: SimulationScenario, G: GenotypeMatrix,
                     phenotypes: Sequence[PhenotypeVector],
                     header_lines: Sequence[str] = ()) -> Dict[str, str]:
    """Write genotypes, marker metadata, replicate phenotypes and the causal
    truth in the formats the readers consume"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        'genotypes': os.path.join(out_dir, 'genotypes.tsv'),
        'markers': os.path.join(out_dir, 'markers.tsv'),
        'phenotypes': os.path.join(out_dir, 'phenotypes.tsv'),
        'causal': os.path.join(out_dir, 'causal.tsv'),
        'scenario': os.path.join(out_dir, 'scenario.txt'),
    }
    write_genotype_tsv(paths['genotypes'], G.samples, G.marker_ids, G.codes, header_lines)
    write_marker_tsv(paths['markers'], G.marker_ids, G.genes, header_lines=header_lines)
    columns = {'y': phenotypes[0].y}
    columns.update({f"y_{p.replicate_index}": p.y for p in phenotypes})
    write_phenotype_tsv(paths['phenotypes'], G.samples, columns, header_lines)

    maf_map = G.maf_map()
    truth = pd.DataFrame({
        'marker_id': [G.marker_ids[G.column_of(sc.marker_id(c.index))] for c in sc.causal],
        'source_id': [sc.marker_id(c.index) for c in sc.causal],
        'beta': [c.beta for c in sc.causal],
        'target_maf': [c.maf for c in sc.causal],
    })
    truth['maf'] = [maf_map[m] for m in truth['marker_id']]
    write_table(truth, paths['causal'], header_lines)

    with open(paths['scenario'], 'w', encoding='utf-8') as handle:
        for line in header_lines:
            handle.write(f"# {line}\n")
        handle.write(format_scenario(sc))
    logger.info("wrote simulation to %s", out_dir)
    return paths


def read_causal_tsv(path: str) -> Tuple[Tuple[str, ...], Dict[str, float]]:
    """Causal marker IDs (post-dedup, unique) and their MAFs"""
    frame, header_line = read_tsv(path)
    if 'marker_id' not in frame.columns:
        raise DataError("causal file needs a 'marker_id' column", path=path, line=header_line)
    ids = tuple(dict.fromkeys(frame['marker_id']))
    mafs: Dict[str, float] = {}
    if 'maf' in frame.columns:
        mafs = dict(zip(frame['marker_id'], frame['maf'].astype(float)))
    return ids, mafs
