"""Batches of independent exit-time replications.

Replications are grouped into fixed blocks of ``BLOCK`` consecutive indices.
Blocks are the unit of work handed to worker processes and are merged in block
order, so the output does not depend on the number of workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, EmptySampleError, PreconditionError
from .model import ChangePointModel, Regime
from .statistic import DEFAULT_CAP, StatisticKind, _exit_time
from .streams import check_seed, stream

BLOCK = 4096
FULL_SAMPLE_LIMIT = 10**7
DEFAULT_SEED = 2007
DEFAULT_PROBS = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99)


@dataclass(frozen=True)
class ExperimentConfig:
    statistic: StatisticKind
    model: ChangePointModel
    threshold: float
    initial_state: Optional[float] = None
    regime: Regime = Regime.PRE
    replications: int = 100_000
    master_seed: int = DEFAULT_SEED
    workers: int = 1
    censor_cap: int = DEFAULT_CAP

    def __post_init__(self):
        try:
            kind = StatisticKind(self.statistic)
            regime = Regime(self.regime)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "statistic", kind)
        object.__setattr__(self, "regime", regime)
        if self.initial_state is None:
            object.__setattr__(self, "initial_state", kind.floor)
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "initial_state", float(self.initial_state))
        self._validate()

    def _validate(self):
        kind, a, x = self.statistic, self.threshold, self.initial_state
        if not isinstance(self.model, ChangePointModel):
            raise ConfigError(f"model must be a ChangePointModel, got {type(self.model).__name__}")
        if not (math.isfinite(a) and a > kind.floor):
            raise ConfigError(f"threshold A={a} must be finite and exceed {kind.floor} for {kind.value}")
        if not x >= kind.floor:
            raise ConfigError(f"initial_state x={x} must be >= {kind.floor} for {kind.value}")
        if not x < a:
            raise ConfigError(f"precondition A > x violated: threshold A={a}, initial_state x={x}")
        if int(self.replications) < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if int(self.censor_cap) < 1:
            raise ConfigError(f"censor_cap must be >= 1, got {self.censor_cap}")
        if int(self.workers) < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        try:
            check_seed(self.master_seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic.value,
            "model": self.model.to_dict(),
            "threshold": self.threshold,
            "initial_state": self.initial_state,
            "regime": self.regime.value,
            "replications": int(self.replications),
            "master_seed": int(self.master_seed),
            "workers": int(self.workers),
            "censor_cap": int(self.censor_cap),
        }

    def fingerprint(self) -> str:
        # worker count does not change results, so it is not part of the identity
        d = self.to_dict()
        del d["workers"]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class StreamingMoments:
    """Welford moments plus a fixed-size histogram sketch of positive integers.

    Values up to ``EXACT`` are counted exactly; larger values fall into
    log-spaced bins of relative width ``2**(1/64) - 1`` (about 1.1%).
    """

    EXACT = 4096
    PER_OCTAVE = 64
    OCTAVES = 48

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.exact = np.zeros(self.EXACT + 1, dtype=np.int64)
        self.log_bins = np.zeros(self.OCTAVES * self.PER_OCTAVE, dtype=np.int64)

    def add(self, values):
        v = np.asarray(values, dtype=np.int64)
        if v.size == 0:
            return self
        other = StreamingMoments()
        other.count = int(v.size)
        other.mean = float(v.mean())
        other.m2 = float(((v - other.mean) ** 2).sum())
        small = v[v <= self.EXACT]
        other.exact += np.bincount(small, minlength=self.EXACT + 1)
        big = v[v > self.EXACT]
        if big.size:
            idx = np.floor(np.log2(big / self.EXACT) * self.PER_OCTAVE).astype(np.int64)
            other.log_bins += np.bincount(np.minimum(idx, self.log_bins.size - 1), minlength=self.log_bins.size)
        return self.merge(other)

    def merge(self, other):
        n = self.count + other.count
        if n == 0:
            return self
        d = other.mean - self.mean
        self.mean += d * other.count / n
        self.m2 += other.m2 + d * d * self.count * other.count / n
        self.count = n
        self.exact += other.exact
        self.log_bins += other.log_bins
        return self

    def quantile(self, p):
        rank = nearest_rank_index(p, self.count) + 1
        cum = np.cumsum(self.exact)
        k = int(np.searchsorted(cum, rank))
        if k <= self.EXACT:
            return float(k)
        k = int(np.searchsorted(np.cumsum(self.log_bins), rank - cum[-1]))
        return float(self.EXACT * 2.0 ** (k / self.PER_OCTAVE))


@dataclass
class ExitTimeSample:
    """Simulated exit times in replication order; 0 in ``raw`` marks a censored run."""

    raw: Optional[np.ndarray]
    censored_count: int
    fingerprint: str
    master_seed: int
    replications: int
    config: Optional[ExperimentConfig] = field(default=None, repr=False)
    moments: Optional[StreamingMoments] = field(default=None, repr=False)

    @property
    def values(self) -> np.ndarray:
        if self.raw is None:
            raise PreconditionError(
                f"full sample not retained for R={self.replications} > {FULL_SAMPLE_LIMIT}"
            )
        return self.raw[self.raw > 0]

    @property
    def count(self) -> int:
        return self.replications - self.censored_count


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    sd: float
    standard_error: float
    p_hat: float
    quantiles: dict
    count: int
    censored_count: int = 0

    def to_dict(self):
        return {
            "mean": self.mean,
            "sd": self.sd,
            "standard_error": self.standard_error,
            "p_hat": self.p_hat,
            "quantiles": {format(p, "g"): v for p, v in self.quantiles.items()},
            "count": self.count,
            "censored_count": self.censored_count,
        }


def _run_block(config: ExperimentConfig, start: int, stop: int, retain: bool):
    code = config.statistic.code
    a, x, cap = config.threshold, config.initial_state, int(config.censor_cap)
    out = np.empty(stop - start, dtype=np.int64)
    for j, i in enumerate(range(start, stop)):
        out[j] = _exit_time(code, a, x, config.model, config.regime, stream(config.master_seed, i), cap)
    if retain:
        return out
    acc = StreamingMoments().add(out[out > 0])
    return acc, int((out == 0).sum())


def run_experiment(config: ExperimentConfig, retain_limit: int = FULL_SAMPLE_LIMIT) -> ExitTimeSample:
    """Run ``config.replications`` replications; replication ``i`` uses stream ``(seed, i)``."""
    r = int(config.replications)
    retain = r <= retain_limit
    blocks = [(s, min(s + BLOCK, r)) for s in range(0, r, BLOCK)]
    if config.workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=int(config.workers)) as pool:
            parts = list(
                pool.map(
                    _run_block,
                    [config] * len(blocks),
                    [b[0] for b in blocks],
                    [b[1] for b in blocks],
                    [retain] * len(blocks),
                )
            )
    else:
        parts = [_run_block(config, s, e, retain) for s, e in blocks]

    if retain:
        raw = np.concatenate(parts)
        return ExitTimeSample(
            raw=raw,
            censored_count=int((raw == 0).sum()),
            fingerprint=config.fingerprint(),
            master_seed=int(config.master_seed),
            replications=r,
            config=config,
        )
    acc = StreamingMoments()
    censored = 0
    for part, c in parts:
        acc.merge(part)
        censored += c
    return ExitTimeSample(
        raw=None,
        censored_count=censored,
        fingerprint=config.fingerprint(),
        master_seed=int(config.master_seed),
        replications=r,
        config=config,
        moments=acc,
    )


def nearest_rank_index(p, n):
    """0-based index of the nearest-rank ``p``-quantile among ``n`` sorted values."""
    # guard against p * n landing a rounding error above an integer
    return min(n, max(1, math.ceil(p * n - 1e-9))) - 1


def nearest_rank(sorted_values, p):
    return sorted_values[nearest_rank_index(p, len(sorted_values))]


def summarize(sample, probs=DEFAULT_PROBS) -> SummaryStats:
    """Mean, SD (divisor n-1), standard error, ``1/mean`` and nearest-rank quantiles."""
    if isinstance(sample, ExitTimeSample) and sample.raw is None:
        m = sample.moments
        if m.count < 2:
            raise EmptySampleError(f"need at least 2 uncensored values, got {m.count}")
        sd = math.sqrt(m.m2 / (m.count - 1))
        return SummaryStats(
            mean=m.mean,
            sd=sd,
            standard_error=sd / math.sqrt(m.count),
            p_hat=1.0 / m.mean,
            quantiles={p: m.quantile(p) for p in probs},
            count=m.count,
            censored_count=sample.censored_count,
        )
    if isinstance(sample, ExitTimeSample):
        values, censored = sample.values, sample.censored_count
    else:
        values, censored = np.asarray(sample), 0
    n = values.size
    if n < 2:
        raise EmptySampleError(f"need at least 2 uncensored values, got {n}")
    x = np.sort(values.astype(float))
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    return SummaryStats(
        mean=mean,
        sd=sd,
        standard_error=sd / math.sqrt(n),
        p_hat=1.0 / mean,
        quantiles={p: float(nearest_rank(x, p)) for p in probs},
        count=int(n),
        censored_count=censored,
    )
