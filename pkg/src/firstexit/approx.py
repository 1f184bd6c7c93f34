"""Closed-form and renewal-theoretic run-length approximations.

Thresholds ``A`` are on the scale of the Shiryaev-Roberts statistic and of the
exponential-scale CUSUM (``A = exp(a)`` for a log-scale CUSUM threshold ``a``).
The closed forms are for the exponential-scale model with parameter ``q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import CensoringError, ConfigError, OutOfRangeError, PreconditionError
from .model import ChangePointModel, Regime, exponential_scale_constants
from .statistic import StatisticKind
from .streams import stream

_CUSUM_KINDS = (StatisticKind.CUSUM, StatisticKind.CUSUM_EXP)


def _check(q, a):
    if not q > 0:
        raise PreconditionError(f"q must be positive, got {q}")
    if not a > 0:
        raise PreconditionError(f"threshold must be positive, got {a}")


def arl_sr_approx(q: float, a: float) -> float:
    """Shiryaev-Roberts ARL to false alarm, ``A / gamma = (1 + q) A``."""
    _check(q, a)
    return (1.0 + q) * a


def fo_arl_cusum(q: float, a: float) -> float:
    """First-order CUSUM ARL, ``A / (I1 gamma^2) = (1+q)^2 A / (q - log(1+q))``."""
    _check(q, a)
    return (1.0 + q) ** 2 * a / (q - math.log1p(q))


def ho_arl_cusum(q: float, a: float) -> float:
    """First-order CUSUM ARL with the ``log A`` and constant corrections."""
    _check(q, a)
    lq = math.log1p(q)
    return (
        fo_arl_cusum(q, a)
        - math.log(a) / (lq - q / (1.0 + q))
        - (1.0 + q) / (q - lq)
        - q / ((1.0 + q) * lq - q)
    )


def cusum_arl_structural(delta: float, omega: float, a_log: float) -> float:
    """``exp(omega a) / delta`` for a caller-supplied ``delta`` (no closed form for general omega)."""
    if not 0 < delta:
        raise PreconditionError(f"delta must be positive, got {delta}")
    return math.exp(omega * a_log) / delta


@dataclass(frozen=True)
class ArlApproximation:
    value: float
    order: str
    statistic: StatisticKind
    q: float
    threshold: float


def arl_approximation(kind, q, a, order="first") -> ArlApproximation:
    kind = StatisticKind(kind)
    if kind is StatisticKind.SHIRYAEV_ROBERTS:
        if order != "first":
            raise ConfigError("only a first-order Shiryaev-Roberts approximation is available")
        value = arl_sr_approx(q, a)
    elif kind in _CUSUM_KINDS:
        value = {"first": fo_arl_cusum, "higher": ho_arl_cusum}[order](q, a)
    else:
        raise ConfigError(f"no ARL approximation for {kind.value}")
    return ArlApproximation(value, order, kind, float(q), float(a))


def p_a_approx(kind, q: float, a: float, order="first") -> float:
    """Approximate absorption rate ``p_A``.

    Shiryaev-Roberts: ``gamma / A``; CUSUM first order: ``I1 gamma^2 / A``;
    CUSUM higher order: reciprocal of :func:`ho_arl_cusum`.
    """
    kind = StatisticKind(kind)
    if kind in _CUSUM_KINDS and order == "first":
        c = exponential_scale_constants(q)
        _check(q, a)
        p = c.i1 * c.gamma**2 / a
    else:
        p = 1.0 / arl_approximation(kind, q, a, order).value
    if not 0 < p < 1:
        raise OutOfRangeError(f"approximate p_A = {p:.6g} is outside (0, 1) at q={q}, A={a}")
    return p


def local_false_alarm_prob(p: float, m: int) -> float:
    """``1 - (1 - p)^m`` evaluated in the log domain."""
    if not 0 < p < 1:
        raise PreconditionError(f"p must lie in (0, 1), got {p}")
    if int(m) < 1:
        raise PreconditionError(f"window length must be >= 1, got {m}")
    if m == 1:
        return p
    return -math.expm1(int(m) * math.log1p(-p))


@dataclass(frozen=True)
class GammaEstimate:
    gamma_hat: float
    se: float
    levels: np.ndarray
    by_level: np.ndarray
    se_by_level: np.ndarray


@numba.njit(cache=True)
def _overshoots(s, z, levels, j, out):
    for k in range(z.shape[0]):
        s += z[k]
        while j < levels.shape[0] and s > levels[j]:
            out[j] = s - levels[j]
            j += 1
        if j == levels.shape[0]:
            break
    return s, j


def renewal_gamma_mc(model: ChangePointModel, y_levels, R: int, seed: int, cap: int = 10**7) -> GammaEstimate:
    """Monte Carlo estimate of ``lim_y E exp(-(S_tau_y - y))`` for the post-change LLR walk.

    Each replication walks until it has strictly crossed every level; the
    estimate is taken at the largest level, the others show the approach to the
    limit.
    """
    levels = np.asarray(y_levels, dtype=float)
    if levels.ndim != 1 or levels.size == 0 or (levels <= 0).any() or (np.diff(levels) <= 0).any():
        raise PreconditionError("y_levels must be a nonempty increasing sequence of positive reals")
    if int(R) < 2:
        raise PreconditionError(f"need at least 2 replications, got {R}")
    disc = np.empty((int(R), levels.size))
    over = np.empty(levels.size)
    for i in range(int(R)):
        rng = stream(seed, i)
        s, j, n, chunk = 0.0, 0, 0, 16
        while j < levels.size:
            if n >= cap:
                raise CensoringError(
                    f"walk did not cross y={levels[j]:g} within {cap} steps; post-change drift must be positive"
                )
            size = min(chunk, cap - n)
            s, j = _overshoots(s, model.sample_llr(rng, Regime.POST, size), levels, j, over)
            n += size
            chunk = min(2 * chunk, 1 << 14)
        disc[i] = np.exp(-over)
    means = disc.mean(axis=0)
    ses = disc.std(axis=0, ddof=1) / math.sqrt(R)
    return GammaEstimate(float(means[-1]), float(ses[-1]), levels, means, ses)
