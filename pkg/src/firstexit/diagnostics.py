"""Checks that standardized exit times look Exponential(1).

Exit times are integers, so the classical KS null distribution does not apply;
distances are reported descriptively and compared with thresholds calibrated on
the exact geometric law (:func:`ks_lattice_exp1`).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .engine import ExitTimeSample, SummaryStats, nearest_rank_index
from .errors import EmptySampleError, PreconditionError

DEFAULT_MGF_T = (-1.0, -0.5, 0.25, 0.45)
MGF_LARGE_T = 0.7
MGF_LARGE_T_MIN_SIZE = 100_000


class RateSource(str, Enum):
    P_HAT = "p_hat-from-mean"
    QSD = "p-from-qsd"
    APPROX = "p-from-approx"


@dataclass(frozen=True, eq=False)
class StandardizedSample:
    values: np.ndarray
    rate_source: RateSource
    rate: float


def standardize(sample, rate_source=RateSource.P_HAT, external_rate=None) -> StandardizedSample:
    """Scale raw exit times by a rate: ``1/mean``, a QSD ``p_A``, or an approximation."""
    rate_source = RateSource(rate_source)
    raw = sample.values if isinstance(sample, ExitTimeSample) else np.asarray(sample)
    raw = raw.astype(float)
    if raw.size == 0:
        raise EmptySampleError("cannot standardize an empty sample")
    if rate_source is RateSource.P_HAT:
        if external_rate is not None:
            raise PreconditionError("external_rate is only used with p-from-qsd or p-from-approx")
        mean = raw.mean()
        rate = 1.0 / mean
        values = raw / mean
    else:
        if external_rate is None:
            raise PreconditionError(f"rate source {rate_source.value} needs external_rate")
        rate = float(external_rate)
        values = raw * rate
    if not 0 < rate <= 1:
        raise PreconditionError(f"rate must lie in (0, 1], got {rate}")
    return StandardizedSample(values, rate_source, rate)


def _values(sample):
    v = sample.values if isinstance(sample, StandardizedSample) else np.asarray(sample, dtype=float)
    return np.asarray(v, dtype=float)


def ks_stat_exp1(sample):
    """Kolmogorov-Smirnov distance to Exp(1); returns ``(d, n)``."""
    x = np.sort(_values(sample))
    n = x.size
    if n < 1:
        raise EmptySampleError("KS distance needs at least one value")
    f = -np.expm1(-np.maximum(x, 0.0))
    i = np.arange(1, n + 1)
    d = max(float((i / n - f).max()), float((f - (i - 1) / n).max()))
    return d, n


def ks_lattice_exp1(pmf, scale: float) -> float:
    """Exact KS distance between the law ``P(scale * N = scale * n) = pmf[n-1]`` and Exp(1).

    Mass beyond the end of ``pmf`` is treated as sitting past the last point.
    """
    pmf = np.asarray(pmf, dtype=float)
    n = np.arange(1, pmf.size + 1)
    f = -np.expm1(-scale * n)
    after = np.cumsum(pmf)
    before = after - pmf
    return float(max(np.abs(after - f).max(), np.abs(before - f).max()))


def qq_data(sample, k: int) -> np.ndarray:
    """``k`` pairs (Exp(1) quantile, nearest-rank sample quantile) at probabilities ``(i - 0.5)/k``."""
    x = np.sort(_values(sample))
    if not 1 <= k <= x.size:
        raise PreconditionError(f"k must lie in [1, {x.size}], got {k}")
    probs = (np.arange(1, k + 1) - 0.5) / k
    idx = [nearest_rank_index(p, x.size) for p in probs]
    return np.column_stack([-np.log1p(-probs), x[idx]])


def qq_slope(sample, k=1000, band=(0.05, 0.95)) -> float:
    """Least-squares slope of the QQ pairs whose probability lies in ``band``."""
    pairs = qq_data(sample, min(k, _values(sample).size))
    probs = (np.arange(1, len(pairs) + 1) - 0.5) / len(pairs)
    sel = (probs >= band[0]) & (probs <= band[1])
    return float(np.polyfit(pairs[sel, 0], pairs[sel, 1], 1)[0])


def survival_curve(sample, grid) -> np.ndarray:
    """Rows ``(y, log P(value > y), survivors)``; ``-inf`` where no value survives."""
    x = np.sort(_values(sample))
    grid = np.asarray(grid, dtype=float)
    if (np.diff(grid) <= 0).any() or (grid < 0).any():
        raise PreconditionError("survival grid must be increasing and nonnegative")
    survivors = x.size - np.searchsorted(x, grid, side="right")
    with np.errstate(divide="ignore"):
        logs = np.where(survivors > 0, np.log(np.maximum(survivors, 1) / x.size), -np.inf)
    return np.column_stack([grid, logs, survivors.astype(float)])


def empirical_mgf(sample, t_grid=DEFAULT_MGF_T) -> np.ndarray:
    """Rows ``(t, mean exp(t V), 1/(1 - t))``.

    The second moment of ``exp(t V)`` for ``V ~ Exp(1)`` is finite only for
    ``t < 1/2``; values of ``t >= 0.7`` are refused below 10^5 draws.
    """
    v = _values(sample)
    t = np.asarray(t_grid, dtype=float)
    if (t >= 1).any():
        raise PreconditionError("moment generating function is only defined for t < 1")
    if (t >= MGF_LARGE_T).any() and v.size < MGF_LARGE_T_MIN_SIZE:
        raise PreconditionError(f"t >= {MGF_LARGE_T} needs at least {MGF_LARGE_T_MIN_SIZE} values")
    emp = np.array([np.exp(ti * v).mean() for ti in t])
    return np.column_stack([t, emp, 1.0 / (1.0 - t)])


def moment_diagnostic(summary: SummaryStats) -> float:
    """Ratio SD/mean; 1 for an exponential law."""
    if summary.count < 2:
        raise PreconditionError("need at least 2 values")
    return summary.sd / summary.mean


def survival_deviation(curve, min_survivors=100) -> float:
    """Largest ``|log S(y) + y|`` over points with at least ``min_survivors`` survivors."""
    sel = curve[:, 2] >= min_survivors
    return float(np.abs(curve[sel, 1] + curve[sel, 0]).max())


def survival_slope(curve, min_survivors=100) -> float:
    sel = curve[:, 2] >= min_survivors
    return float(np.polyfit(curve[sel, 0], curve[sel, 1], 1)[0])


def geometric_exactness(pmf, p: float) -> float:
    """Total variation between an exit-time pmf and Geometric(p) on the same support."""
    n = np.arange(1, len(pmf) + 1)
    geo = p * (1.0 - p) ** (n - 1) if p > 0 else np.zeros(len(pmf))
    return 0.5 * float(np.abs(np.asarray(pmf) - geo).sum())

