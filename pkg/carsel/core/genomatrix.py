#!/usr/bin/env python3
"""
Genotype ingestion: additive coding, duplicate/synonymous filtering,
column standardization and covariate residualization of phenotypes
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import DataError, GenotypeDataError, NumericalError

logger = logging.getLogger(__name__)

MISSING_TOKEN = 'NA'
VALID_CALLS = ('0', '1', '2')


@dataclass(frozen=True)
class MarkerRecord:
    """One genotyped marker as listed in the input files"""
    marker_id: str
    gene: str
    synonymous: bool = False


@dataclass(frozen=True, eq=False)
class RawGenotypes:
    """Allele-count calls before encoding; NaN marks a missing call"""
    samples: Tuple[str, ...]
    markers: Tuple[MarkerRecord, ...]
    calls: np.ndarray

    def __post_init__(self):
        calls = np.asarray(self.calls, dtype=float)
        if calls.ndim != 2 or calls.shape != (len(self.samples), len(self.markers)):
            raise GenotypeDataError(
                f"calls have shape {calls.shape}, expected "
                f"({len(self.samples)}, {len(self.markers)})")
        observed = ~np.isnan(calls)
        bad = observed & ~np.isin(calls, (0.0, 1.0, 2.0))
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise GenotypeDataError(
                f"invalid genotype call {calls[row, col]!r} in sample {self.samples[row]}",
                column=self.markers[col].marker_id)
        calls.flags.writeable = False
        object.__setattr__(self, 'calls', calls)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def d(self) -> int:
        return len(self.markers)

    @property
    def marker_ids(self) -> Tuple[str, ...]:
        return tuple(m.marker_id for m in self.markers)

    def subset(self, columns: Sequence[int]) -> 'RawGenotypes':
        columns = list(columns)
        return RawGenotypes(
            samples=self.samples,
            markers=tuple(self.markers[j] for j in columns),
            calls=self.calls[:, columns],
        )


@dataclass(frozen=True, eq=False)
class GenotypeMatrix:
    """Column-standardized n x d predictor matrix with per-marker metadata.

    ``codes`` keeps the pre-standardization allele counts when known and
    ``aliases`` maps duplicate marker IDs removed upstream to the ID kept.
    """
    X: np.ndarray
    marker_ids: Tuple[str, ...]
    genes: Tuple[str, ...]
    mafs: np.ndarray
    codes: Optional[np.ndarray] = None
    samples: Optional[Tuple[str, ...]] = None
    aliases: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise GenotypeDataError(f"predictor matrix must be 2-D, got shape {X.shape}")
        if len(self.marker_ids) != X.shape[1] or len(self.genes) != X.shape[1]:
            raise GenotypeDataError("marker metadata does not match matrix columns")
        if len(set(self.marker_ids)) != len(self.marker_ids):
            raise GenotypeDataError("marker IDs must be unique")
        for name in ('X', 'mafs', 'codes'):
            value = getattr(self, name)
            if value is not None:
                value = np.array(value, dtype=float)
                value.flags.writeable = False
                object.__setattr__(self, name, value)
        object.__setattr__(self, '_index', {m: j for j, m in enumerate(self.marker_ids)})

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def column_of(self, marker_id: str) -> int:
        """Column index of a marker, following duplicate aliases"""
        key = self.aliases.get(marker_id, marker_id)
        try:
            return self._index[key]
        except KeyError:
            raise GenotypeDataError(f"unknown marker {marker_id!r}", column=marker_id)

    def maf_map(self) -> Dict[str, float]:
        return dict(zip(self.marker_ids, self.mafs.tolist()))


@dataclass(frozen=True, eq=False)
class CovariateMatrix:
    """Non-genetic covariates (sex, age, smoking, ...) without the intercept"""
    Z: np.ndarray
    names: Tuple[str, ...] = ()

    def design(self) -> np.ndarray:
        """Covariates with an intercept column prepended"""
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        return np.column_stack([np.ones(Z.shape[0]), Z])


@dataclass(frozen=True, eq=False)
class PhenotypeVector:
    """Standardized response for one replicate (1-based index)"""
    y: np.ndarray
    replicate_index: int = 1

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        y.flags.writeable = False
        object.__setattr__(self, 'y', y)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True, eq=False)
class PhenotypeTable:
    """Parsed phenotype file"""
    samples: Tuple[str, ...]
    y: np.ndarray
    covariates: Optional[CovariateMatrix] = None


def minor_allele_frequencies(codes: np.ndarray) -> np.ndarray:
    """MAF = min(p, 1 - p) with p = sum(codes) / 2n per column"""
    codes = np.asarray(codes, dtype=float)
    p = codes.sum(axis=0) / (2.0 * codes.shape[0])
    return np.minimum(p, 1.0 - p)


def encode_additive(raw: RawGenotypes) -> np.ndarray:
    """Map 0/1/2 calls to reals, imputing missing calls with the column mean"""
    calls = np.array(raw.calls, dtype=float)
    missing = np.isnan(calls)
    observed = (~missing).sum(axis=0)
    empty = np.flatnonzero(observed == 0)
    if empty.size:
        marker_id = raw.markers[empty[0]].marker_id
        raise GenotypeDataError(f"marker {marker_id} has no observed calls", column=marker_id)

    if missing.any():
        means = np.nansum(calls, axis=0) / observed
        rows, cols = np.nonzero(missing)
        calls[rows, cols] = means[cols]
        logger.info("imputed %d missing calls in %d markers",
                    rows.size, np.unique(cols).size)
    return calls


def deduplicate_and_filter(raw: RawGenotypes,
                           drop_synonymous: bool = False) -> Tuple[RawGenotypes, np.ndarray]:
    """Keep the first of every group of identical columns, optionally drop
    synonymous markers.

    Returns the filtered genotypes and an index map of length ``raw.d``:
    surviving columns map to their new index, duplicates map to the new index
    of the column they duplicate, removed columns map to -1.
    """
    # missing calls compare equal to each other, never to an observed code
    keyed = np.where(np.isnan(raw.calls), -1, raw.calls).astype(np.int8)
    first_seen: Dict[bytes, int] = {}
    representative = np.empty(raw.d, dtype=int)
    for j in range(raw.d):
        key = keyed[:, j].tobytes()
        representative[j] = first_seen.setdefault(key, j)

    unique_cols = np.flatnonzero(representative == np.arange(raw.d))
    n_duplicates = raw.d - unique_cols.size

    if drop_synonymous:
        kept = [j for j in unique_cols if not raw.markers[j].synonymous]
    else:
        kept = list(unique_cols)

    new_index = np.full(raw.d, -1, dtype=int)
    new_index[kept] = np.arange(len(kept))
    index_map = new_index[representative]

    logger.info("marker filter: %d -> %d unique -> %d kept (%d duplicates, synonymous %s)",
                raw.d, unique_cols.size, len(kept), n_duplicates,
                'dropped' if drop_synonymous else 'kept')
    if not kept:
        logger.warning("no markers survived deduplication and filtering")
    return raw.subset(kept), index_map


def drop_monomorphic(raw: RawGenotypes) -> Tuple[RawGenotypes, np.ndarray]:
    """Remove markers whose observed calls are all equal"""
    calls = raw.calls
    lo = np.nanmin(np.where(np.isnan(calls), np.inf, calls), axis=0)
    hi = np.nanmax(np.where(np.isnan(calls), -np.inf, calls), axis=0)
    # fully missing columns are kept so encoding can reject them by name
    kept = np.flatnonzero((hi > lo) | np.isnan(calls).all(axis=0))
    index_map = np.full(raw.d, -1, dtype=int)
    index_map[kept] = np.arange(kept.size)
    if kept.size < raw.d:
        logger.warning("dropped %d monomorphic markers", raw.d - kept.size)
    return raw.subset(kept), index_map


def standardize_columns(M: np.ndarray,
                        marker_ids: Optional[Sequence[str]] = None,
                        genes: Optional[Sequence[str]] = None,
                        mafs: Optional[np.ndarray] = None,
                        codes: Optional[np.ndarray] = None,
                        samples: Optional[Sequence[str]] = None,
                        aliases: Optional[Dict[str, str]] = None) -> GenotypeMatrix:
    """Center every column and scale it to unit sample variance (n - 1)"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise GenotypeDataError(f"expected a 2-D matrix, got shape {M.shape}")
    n, d = M.shape
    if n < 2:
        raise NumericalError("standardization needs at least two samples")
    if marker_ids is None:
        marker_ids = [f"M{j + 1}" for j in range(d)]
    marker_ids = tuple(str(m) for m in marker_ids)
    genes = tuple(str(g) for g in genes) if genes is not None else marker_ids

    constant = np.all(M == M[0], axis=0)
    if constant.any():
        marker_id = marker_ids[int(np.flatnonzero(constant)[0])]
        raise NumericalError(f"constant column {marker_id} cannot be standardized")

    centered = M - M.mean(axis=0)
    sd = np.sqrt((centered ** 2).sum(axis=0) / (n - 1))
    X = centered / sd

    if mafs is None:
        source = codes if codes is not None else M
        if np.all((source >= 0.0) & (source <= 2.0)):
            mafs = minor_allele_frequencies(source)
        else:
            mafs = np.full(d, np.nan)

    return GenotypeMatrix(
        X=X,
        marker_ids=marker_ids,
        genes=genes,
        mafs=np.asarray(mafs, dtype=float),
        codes=codes,
        samples=tuple(samples) if samples is not None else None,
        aliases=dict(aliases or {}),
    )


def prepare_genotypes(raw: RawGenotypes, drop_synonymous: bool = False) -> GenotypeMatrix:
    """encode -> dedup -> standardize; deterministic for identical input"""
    filtered, dedup_map = deduplicate_and_filter(raw, drop_synonymous)
    polymorphic, poly_map = drop_monomorphic(filtered)
    if polymorphic.d == 0:
        raise GenotypeDataError("no markers left after filtering")

    index_map = np.where(dedup_map >= 0, poly_map[np.maximum(dedup_map, 0)], -1)
    aliases = {}
    for old, new in enumerate(index_map):
        old_id = raw.markers[old].marker_id
        if new >= 0 and polymorphic.markers[new].marker_id != old_id:
            aliases[old_id] = polymorphic.markers[new].marker_id

    codes = encode_additive(polymorphic)
    return standardize_columns(
        codes,
        marker_ids=polymorphic.marker_ids,
        genes=[m.gene for m in polymorphic.markers],
        mafs=minor_allele_frequencies(codes),
        codes=codes,
        samples=polymorphic.samples,
        aliases=aliases,
    )


def standardize_phenotype(y: np.ndarray, replicate_index: int = 1) -> PhenotypeVector:
    """Center and scale a response to unit sample variance"""
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise NumericalError("phenotype needs at least two samples")
    centered = y - y.mean()
    sd = np.sqrt(centered @ centered / (y.size - 1))
    if sd == 0.0:
        raise NumericalError("zero residual variance")
    return PhenotypeVector(centered / sd, replicate_index)


def residualize_phenotype(y: np.ndarray,
                          Z: Union[CovariateMatrix, np.ndarray, None] = None,
                          replicate_index: int = 1) -> PhenotypeVector:
    """Standardized least-squares residuals of y on [1, Z]"""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if Z is None:
        design = np.ones((n, 1))
    elif isinstance(Z, CovariateMatrix):
        design = Z.design()
    else:
        design = CovariateMatrix(np.asarray(Z, dtype=float)).design()

    if design.shape[0] != n:
        raise DataError(f"covariates have {design.shape[0]} rows, phenotype has {n}")
    if n <= design.shape[1]:
        raise NumericalError(
            f"need more samples ({n}) than covariate columns ({design.shape[1]})")
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise NumericalError("covariate matrix is rank-deficient")

    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - design @ coef
    if np.linalg.norm(residuals) <= 1e-10 * max(np.linalg.norm(y), np.finfo(float).tiny):
        raise NumericalError("zero residual variance")
    return standardize_phenotype(residuals, replicate_index)


def _leading_comment_lines(path: str) -> int:
    count = 0
    with open(path, 'r', encoding='utf-8') as handle:
        for line in handle:
            if not line.startswith('#'):
                break
            count += 1
    return count


def read_tsv(path: str) -> Tuple[pd.DataFrame, int]:
    """Read a TSV as strings; returns the frame and the file line of its header"""
    if not os.path.exists(path):
        raise DataError("file not found", path=path)
    try:
        frame = pd.read_csv(path, sep='\t', dtype=str, keep_default_na=False, comment='#')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse TSV: {e}", path=path)
    return frame, _leading_comment_lines(path) + 1


def read_marker_metadata(path: str) -> Dict[str, MarkerRecord]:
    """Sidecar TSV with columns marker_id, gene, synonymous{0,1}"""
    frame, header_line = read_tsv(path)
    missing = {'marker_id', 'gene', 'synonymous'} - set(frame.columns)
    if missing:
        raise DataError(f"metadata lacks columns {sorted(missing)}", path=path, line=header_line)

    records = {}
    for row, (marker_id, gene, flag) in enumerate(
            frame[['marker_id', 'gene', 'synonymous']].itertuples(index=False)):
        if flag not in ('0', '1'):
            raise DataError(f"synonymous flag must be 0 or 1, got {flag!r}",
                            path=path, line=header_line + 1 + row, column='synonymous')
        records[marker_id] = MarkerRecord(marker_id, gene or marker_id, flag == '1')
    return records


def read_genotype_tsv(path: str, meta_path: Optional[str] = None) -> RawGenotypes:
    """Genotype TSV: first column sample IDs, header cells marker IDs, calls 0/1/2/NA"""
    frame, header_line = read_tsv(path)
    if frame.shape[1] < 2:
        raise DataError("genotype file needs a sample column and at least one marker",
                        path=path, line=header_line)

    samples = tuple(frame.iloc[:, 0])
    marker_ids = [str(c) for c in frame.columns[1:]]
    values = frame.iloc[:, 1:].to_numpy(dtype=str)
    is_missing = values == MISSING_TOKEN
    invalid = ~(np.isin(values, VALID_CALLS) | is_missing)
    if invalid.any():
        row, col = np.argwhere(invalid)[0]
        raise GenotypeDataError(f"invalid genotype call {values[row, col]!r}",
                                path=path, line=header_line + 1 + int(row),
                                column=marker_ids[col])
    calls = np.where(is_missing, '0', values).astype(float)
    calls[is_missing] = np.nan

    meta = read_marker_metadata(meta_path) if meta_path else {}
    markers = tuple(meta.get(m, MarkerRecord(m, m, False)) for m in marker_ids)
    logger.info("read %d samples x %d markers from %s", len(samples), len(marker_ids), path)
    return RawGenotypes(samples=samples, markers=markers, calls=calls)


def read_phenotype_tsv(path: str, column: str = 'y') -> PhenotypeTable:
    """Phenotype TSV: sample_id, response column, any further columns are covariates"""
    frame, header_line = read_tsv(path)
    if 'sample_id' not in frame.columns or column not in frame.columns:
        raise DataError(f"phenotype file needs columns 'sample_id' and {column!r}",
                        path=path, line=header_line)
    covariate_names = [c for c in frame.columns
                       if c != 'sample_id' and c != column and not _is_replicate_column(c)]

    numeric = {}
    for name in [column] + covariate_names:
        parsed = pd.to_numeric(frame[name].replace(MISSING_TOKEN, np.nan), errors='coerce')
        bad = parsed.isna().to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DataError(f"non-numeric or missing value {frame[name].iloc[row]!r}",
                            path=path, line=header_line + 1 + row, column=name)
        numeric[name] = parsed.to_numpy(dtype=float)

    covariates = None
    if covariate_names:
        covariates = CovariateMatrix(np.column_stack([numeric[c] for c in covariate_names]),
                                     tuple(covariate_names))
    return PhenotypeTable(tuple(frame['sample_id']), numeric[column], covariates)


def _is_replicate_column(name: str) -> bool:
    # y and y_1 .. y_B columns written by the simulator are alternative responses
    prefix, _, suffix = name.partition('_')
    return prefix == 'y' and (suffix == '' or suffix.isdigit())


def align_samples(samples: Sequence[str], phenotype_samples: Sequence[str]) -> np.ndarray:
    """Row indexer that puts phenotype rows in genotype sample order"""
    position = {s: i for i, s in enumerate(phenotype_samples)}
    missing = [s for s in samples if s not in position]
    if missing or len(position) != len(samples):
        raise DataError(f"genotype and phenotype samples differ (e.g. {missing[:3]})")
    return np.array([position[s] for s in samples], dtype=int)


def _write_with_header(frame: pd.DataFrame, path: str, header_lines: Iterable[str]):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        for line in header_lines:
            handle.write(f"# {line}\n")
        frame.to_csv(handle, sep='\t', index=False, na_rep=MISSING_TOKEN,
                     lineterminator='\n', float_format='%.17g')


def write_genotype_tsv(path: str, samples: Sequence[str], marker_ids: Sequence[str],
                       codes: np.ndarray, header_lines: Iterable[str] = ()):
    frame = pd.DataFrame(np.asarray(codes).astype(int), columns=list(marker_ids))
    frame.insert(0, 'sample_id', list(samples))
    _write_with_header(frame, path, header_lines)


def write_marker_tsv(path: str, marker_ids: Sequence[str], genes: Sequence[str],
                     synonymous: Optional[Sequence[bool]] = None,
                     header_lines: Iterable[str] = ()):
    flags = synonymous if synonymous is not None else [False] * len(marker_ids)
    frame = pd.DataFrame({
        'marker_id': list(marker_ids),
        'gene': list(genes),
        'synonymous': [int(bool(f)) for f in flags],
    })
    _write_with_header(frame, path, header_lines)


def write_phenotype_tsv(path: str, samples: Sequence[str], columns: Dict[str, np.ndarray],
                        header_lines: Iterable[str] = ()):
    frame = pd.DataFrame({'sample_id': list(samples)})
    for name, values in columns.items():
        frame[name] = np.asarray(values, dtype=float)
    _write_with_header(frame, path, header_lines)


def write_table(frame: pd.DataFrame, path: str, header_lines: Iterable[str] = ()):
    """Any TSV artifact with leading provenance comments"""
    _write_with_header(frame, path, header_lines)


def load_dataset(genotype_path: str, phenotype_path: str, column: str = 'y',
                 meta_path: Optional[str] = None,
                 drop_synonymous: bool = False) -> Tuple[GenotypeMatrix, np.ndarray, Optional[CovariateMatrix]]:
    """Read, filter and standardize genotypes and align the phenotype rows.

    Returns the matrix, the raw (unstandardized) response and the covariates.
    """
    raw = read_genotype_tsv(genotype_path, meta_path)
    table = read_phenotype_tsv(phenotype_path, column)
    order = align_samples(raw.samples, table.samples)
    G = prepare_genotypes(raw, drop_synonymous)
    covariates = None
    if table.covariates is not None:
        covariates = CovariateMatrix(table.covariates.Z[order], table.covariates.names)
    return G, table.y[order], covariates
