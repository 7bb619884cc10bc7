#!/usr/bin/env python3
"""
Model-size selection by local false discovery rates.

The absolute scores are modelled as a two-component mixture: a half-normal
null whose scale is fitted by truncated maximum likelihood on the central
part of the data, and a monotone non-increasing (Grenander) estimate of the
mixture density.
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import optimize, stats
from sklearn.isotonic import isotonic_regression

from ..errors import NumericalError, UsageError
from .scores import ScoreVector

logger = logging.getLogger(__name__)

MIN_MARKERS = 50
TRUNCATION_QUANTILE = 0.75
DEFAULT_CUTOFF = 0.5


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Ranked markers, their local fdr (in rank order) and the selected set"""
    ranked_ids: Tuple[str, ...]
    local_fdr: Optional[np.ndarray]
    selected: Tuple[str, ...]
    cutoff: Optional[float] = None
    eta0: Optional[float] = None
    null_scale: Optional[float] = None
    top_k: Optional[int] = None
    kind: Optional[str] = None

    @property
    def model_size(self) -> int:
        return len(self.selected)

    def at_cutoff(self, cutoff: float) -> 'SelectionResult':
        """Re-threshold the same fdr values"""
        if self.local_fdr is None:
            raise UsageError("fixed-size selections carry no local fdr values")
        if not 0.0 < cutoff < 1.0:
            raise UsageError(f"fdr cutoff must lie in (0, 1), got {cutoff}")
        keep = self.local_fdr < cutoff
        selected = tuple(m for m, k in zip(self.ranked_ids, keep) if k)
        return SelectionResult(self.ranked_ids, self.local_fdr, selected, cutoff,
                               self.eta0, self.null_scale, None, self.kind)

    def to_dict(self, include_fdr: bool = False) -> Dict:
        data = {
            'cutoff': self.cutoff,
            'eta0': self.eta0,
            'null_scale': self.null_scale,
            'model_size': self.model_size,
            'selected': list(self.selected),
        }
        if self.top_k is not None:
            data['top_k'] = self.top_k
        if self.kind is not None:
            data['kind'] = self.kind
        if include_fdr and self.local_fdr is not None:
            data['fdr'] = [{'marker_id': m, 'fdr': float(f)}
                           for m, f in zip(self.ranked_ids, self.local_fdr)]
        return data

    def to_json(self, include_fdr: bool = False, provenance: Optional[Dict] = None) -> str:
        data = self.to_dict(include_fdr)
        if provenance is not None:
            data['provenance'] = provenance
        return json.dumps(data, indent=2)


def fit_null_scale(z: np.ndarray, quantile: float = TRUNCATION_QUANTILE) -> Tuple[float, float]:
    """Half-normal scale by ML on z below its ``quantile``; returns (sigma, eta0)"""
    # work on a unit scale so the fit is invariant to rescaling the scores
    unit = float(np.median(z))
    if unit <= 0.0:
        unit = float(np.max(z))
    zs = z / unit
    cut = float(np.quantile(zs, quantile))
    inside = zs[zs <= cut]
    if cut <= 0.0 or inside.size < 2:
        raise NumericalError("too few distinct scores to fit the null distribution")

    def negative_loglik(log_sigma: float) -> float:
        sigma = np.exp(log_sigma)
        loglik = stats.halfnorm.logpdf(inside, scale=sigma).sum()
        return -(loglik - inside.size * stats.halfnorm.logcdf(cut, scale=sigma))

    start = np.log(np.sqrt(np.mean(inside ** 2)))
    fit = optimize.minimize_scalar(negative_loglik, bounds=(start - 5.0, start + 5.0),
                                   method='bounded', options={'xatol': 1e-10})
    sigma = float(np.exp(fit.x))
    null_mass = float(stats.halfnorm.cdf(cut, scale=sigma))
    eta0 = min(1.0, (inside.size / zs.size) / null_mass)
    return sigma * unit, eta0


def grenander_density(z: np.ndarray) -> np.ndarray:
    """Non-increasing density estimate on [0, inf), evaluated at each z.

    Left slopes of the least concave majorant of the empirical cdf, computed
    by weighted isotonic regression of the histogram heights between
    consecutive distinct values.
    """
    n = z.size
    knots, inverse, counts = np.unique(z, return_inverse=True, return_counts=True)
    widths = np.diff(np.concatenate([[0.0], knots]))
    widths = np.maximum(widths, 1e-12 * knots[-1])
    heights = counts / (n * widths)
    slopes = isotonic_regression(heights, sample_weight=widths, increasing=False)
    return slopes[inverse]


def local_fdr(s: ScoreVector) -> SelectionResult:
    """Local fdr of every marker; nothing selected yet"""
    if s.d < MIN_MARKERS:
        raise UsageError(f"local fdr needs at least {MIN_MARKERS} markers (got {s.d}); "
                         "use a fixed-size selection instead")
    z = np.abs(s.values)
    if np.all(z == z[0]):
        raise NumericalError("all scores are equal; local fdr is undefined")

    sigma, eta0 = fit_null_scale(z)
    null_density = stats.halfnorm.pdf(z, scale=sigma)
    mixture_density = grenander_density(z)
    fdr = np.minimum(1.0, eta0 * null_density / mixture_density)

    # non-increasing in z: each value is raised to the largest fdr at or above its score
    by_z = np.argsort(z, kind='stable')
    monotone = np.maximum.accumulate(fdr[by_z][::-1])[::-1]
    fdr[by_z] = monotone

    order = s.ranking()
    logger.debug("local fdr fit: sigma=%.4g eta0=%.4f", sigma, eta0)
    return SelectionResult(
        ranked_ids=tuple(s.marker_ids[j] for j in order),
        local_fdr=fdr[order],
        selected=(),
        eta0=eta0,
        null_scale=sigma,
        kind=s.kind.value,
    )


def select(s: ScoreVector, cutoff: float = DEFAULT_CUTOFF) -> SelectionResult:
    """Markers with local fdr below the cutoff, in rank order"""
    if not 0.0 < cutoff < 1.0:
        raise UsageError(f"fdr cutoff must lie in (0, 1), got {cutoff}")
    result = local_fdr(s).at_cutoff(cutoff)
    logger.info("%s selection at fdr < %.3g: %d of %d markers",
                s.kind.value, cutoff, result.model_size, s.d)
    return result


def select_top_k(s: ScoreVector, k: int) -> SelectionResult:
    """The k markers with largest |score|; ties go to the lower index"""
    if not 1 <= k <= s.d:
        raise UsageError(f"k must lie in [1, {s.d}], got {k}")
    ranked = tuple(s.marker_ids[j] for j in s.ranking())
    return SelectionResult(ranked, None, ranked[:k], top_k=k, kind=s.kind.value)
