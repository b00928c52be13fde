"""Distances between ideal and mitigated distributions, and improvement rates.

Each distance has a per-pair form and a ``*_batch`` form returning one value
per row; test-set figures are the arithmetic mean of per-sample values.
KL divergence uses the natural logarithm, a ``1e-12`` floor on the
mitigated side and ``0 * log 0 = 0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import ArgumentError, UndefinedRateError
from .probdist import ProbDist

logger = logging.getLogger(__name__)

KLD_FLOOR = 1e-12
METRIC_NAMES = ('mse', 'kld', 'infidelity')


def _pair(p, q):
    p = np.atleast_2d(p.values if isinstance(p, ProbDist) else np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(q.values if isinstance(q, ProbDist) else np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise ArgumentError(f"distributions have different shapes {p.shape} and {q.shape}")
    return p, q


def mse_batch(p, q) -> np.ndarray:
    p, q = _pair(p, q)
    return np.mean((q - p) ** 2, axis=1)


def kld_batch(p_ideal, q_mitigated) -> np.ndarray:
    p, q = _pair(p_ideal, q_mitigated)
    positive = p > 0
    safe_p = np.where(positive, p, 1.0)
    terms = np.where(positive, p * np.log(safe_p / np.maximum(q, KLD_FLOOR)), 0.0)
    values = terms.sum(axis=1)
    negative = values < 0
    if np.any(negative):
        logger.warning("Clamped %d slightly negative KL divergences to 0 (clip floor effect).", int(negative.sum()))
        values = np.where(negative, 0.0, values)
    return values


def infidelity_batch(p, q) -> np.ndarray:
    p, q = _pair(p, q)
    overlap = np.sqrt(p * q).sum(axis=1)
    return np.clip(1.0 - overlap ** 2, 0.0, 1.0)


def mse(p, q) -> float:
    return float(mse_batch(p, q)[0])


def kld(p_ideal, q_mitigated) -> float:
    return float(kld_batch(p_ideal, q_mitigated)[0])


def infidelity(p, q) -> float:
    return float(infidelity_batch(p, q)[0])


def improvement_rate(d_unmitigated: float, d_mitigated: float) -> float:
    """Percent reduction of a distance relative to the unmitigated baseline."""
    if d_unmitigated <= 0:
        raise UndefinedRateError("improvement rate is undefined when the unmitigated distance is 0")
    return (d_unmitigated - d_mitigated) / d_unmitigated * 100.0


def rate_or_nan(d_unmitigated: float, d_mitigated: float) -> float:
    try:
        return improvement_rate(d_unmitigated, d_mitigated)
    except UndefinedRateError:
        return math.nan


_BATCH_FUNCS = {'mse': mse_batch, 'kld': kld_batch, 'infidelity': infidelity_batch}


@dataclass
class MetricsReport:
    mse: float
    kld: float
    infidelity: float
    rates: Dict[str, float] = field(default_factory=dict)

    def distances(self) -> Dict[str, float]:
        return {'mse': self.mse, 'kld': self.kld, 'infidelity': self.infidelity}

    def with_rates(self, baseline: 'MetricsReport') -> 'MetricsReport':
        """Copy with rates against ``baseline``; NaN where the baseline distance is 0."""
        base = baseline.distances()
        rates = {name: rate_or_nan(base[name], value) for name, value in self.distances().items()}
        return MetricsReport(self.mse, self.kld, self.infidelity, rates)


def evaluate(ideal: np.ndarray, mitigated: np.ndarray) -> MetricsReport:
    """Mean of each per-sample distance over a test set."""
    values = {name: float(np.mean(fn(ideal, mitigated))) for name, fn in _BATCH_FUNCS.items()}
    return MetricsReport(**values)
