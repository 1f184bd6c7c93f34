"""Detection statistics as one-step stochastically monotone Markov updates.

* Shiryaev-Roberts: ``R(n) = (1 + R(n-1)) * lam``
* CUSUM on the log scale: ``X(n) = max(0, X(n-1) + z)``
* CUSUM on the exponential scale: ``W(n) = max(1, W(n-1) * lam)``, the exact
  image of the log-scale CUSUM under ``exp``. The additive variant
  ``max(1, W(n-1) + lam)`` is kept only for side-by-side comparison.

All maps are nondecreasing in the state for a fixed innovation, so driving two
copies with the same innovations preserves their order (monotone coupling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numba
import numpy as np

from .errors import PreconditionError
from .model import ChangePointModel, Innovation, Regime

DEFAULT_CAP = 10**8
_MAX_CHUNK = 1 << 16


class StatisticKind(str, Enum):
    SHIRYAEV_ROBERTS = "shiryaev-roberts"
    CUSUM = "cusum-log"
    CUSUM_EXP = "cusum-exp-scale"
    CUSUM_EXP_ADDITIVE = "cusum-exp-additive"

    @property
    def floor(self) -> float:
        """Reflecting barrier (lowest reachable state)."""
        return 1.0 if self in (StatisticKind.CUSUM_EXP, StatisticKind.CUSUM_EXP_ADDITIVE) else 0.0

    @property
    def code(self) -> int:
        return _CODES[self]


_CODES = {
    StatisticKind.SHIRYAEV_ROBERTS: 0,
    StatisticKind.CUSUM: 1,
    StatisticKind.CUSUM_EXP: 2,
    StatisticKind.CUSUM_EXP_ADDITIVE: 3,
}


def initial_state(kind) -> float:
    return StatisticKind(kind).floor


def sr_update(state: float, innovation: Innovation) -> float:
    if not state >= 0:
        raise PreconditionError(f"Shiryaev-Roberts state must be >= 0, got {state}")
    if not innovation.lam > 0:
        raise PreconditionError(f"likelihood ratio must be > 0, got {innovation.lam}")
    return (1.0 + state) * innovation.lam


def cusum_update(state: float, innovation: Innovation) -> float:
    if not state >= 0:
        raise PreconditionError(f"CUSUM state must be >= 0, got {state}")
    return max(0.0, state + innovation.z)


def cusum_exp_update(state: float, innovation: Innovation) -> float:
    if not state >= 1:
        raise PreconditionError(f"exponential-scale CUSUM state must be >= 1, got {state}")
    return max(1.0, state * innovation.lam)


def cusum_exp_additive_update(state: float, innovation: Innovation) -> float:
    if not state >= 1:
        raise PreconditionError(f"exponential-scale CUSUM state must be >= 1, got {state}")
    return max(1.0, state + innovation.lam)


UPDATES = {
    StatisticKind.SHIRYAEV_ROBERTS: sr_update,
    StatisticKind.CUSUM: cusum_update,
    StatisticKind.CUSUM_EXP: cusum_exp_update,
    StatisticKind.CUSUM_EXP_ADDITIVE: cusum_exp_additive_update,
}


@dataclass
class MonotoneStatistic:
    kind: StatisticKind
    state: Optional[float] = None

    def __post_init__(self):
        self.kind = StatisticKind(self.kind)
        if self.state is None:
            self.state = self.kind.floor
        if not self.state >= self.kind.floor:
            raise PreconditionError(f"{self.kind.value} state must be >= {self.kind.floor}, got {self.state}")

    def update(self, innovation: Innovation) -> float:
        self.state = UPDATES[self.kind](self.state, innovation)
        return self.state


@numba.njit(cache=True)
def _step(code, state, z):
    if code == 0:
        return (1.0 + state) * math.exp(z)
    if code == 1:
        return max(0.0, state + z)
    if code == 2:
        return max(1.0, state * math.exp(z))
    return max(1.0, state + math.exp(z))


@numba.njit(cache=True)
def _scan(code, state, z, threshold):
    for k in range(z.shape[0]):
        state = _step(code, state, z[k])
        if state > threshold:
            return k, state
    return -1, state


@numba.njit(cache=True)
def _path(code, state, z):
    out = np.empty(z.shape[0])
    for k in range(z.shape[0]):
        state = _step(code, state, z[k])
        out[k] = state
    return out


def path(kind, x: float, z) -> np.ndarray:
    """Trajectory ``X(1..n)`` from ``X(0) = x`` driven by the LLR sequence ``z``."""
    kind = StatisticKind(kind)
    return _path(kind.code, float(x), np.ascontiguousarray(z, dtype=float))


def _check_start(kind: StatisticKind, threshold, x):
    if not threshold > kind.floor:
        raise PreconditionError(f"threshold A={threshold} must exceed {kind.floor} for {kind.value}")
    if not x >= kind.floor:
        raise PreconditionError(f"initial state x={x} must be >= {kind.floor} for {kind.value}")
    if not x < threshold:
        raise PreconditionError(f"initial state x={x} must be below the threshold A={threshold}")


def first_exit(kind, threshold: float, x: float, z) -> Optional[int]:
    """Exit time over ``threshold`` along a given LLR sequence, or ``None`` if it never exits."""
    kind = StatisticKind(kind)
    _check_start(kind, threshold, x)
    k, _ = _scan(kind.code, float(x), np.ascontiguousarray(z, dtype=float), float(threshold))
    return None if k < 0 else int(k) + 1


def _exit_time(code, threshold, x, model, regime, rng, cap):
    # 0 marks a censored replication
    n = 0
    state = x
    chunk = 64
    while n < cap:
        size = min(chunk, cap - n)
        z = model.sample_llr(rng, regime, size)
        k, state = _scan(code, state, z, threshold)
        if k >= 0:
            return n + int(k) + 1
        n += size
        chunk = min(2 * chunk, _MAX_CHUNK)
    return 0


def run_to_exit(
    statistic,
    threshold: float,
    x: Optional[float],
    model: ChangePointModel,
    regime,
    rng: np.random.Generator,
    cap: int = DEFAULT_CAP,
) -> Optional[int]:
    """Simulate ``N_A^x = min{n >= 1: X(n) > A}``; ``None`` if censored at ``cap``."""
    kind = statistic.kind if isinstance(statistic, MonotoneStatistic) else StatisticKind(statistic)
    if x is None:
        x = statistic.state if isinstance(statistic, MonotoneStatistic) else kind.floor
    x = float(x)
    _check_start(kind, threshold, x)
    if cap < 1:
        raise PreconditionError(f"cap must be >= 1, got {cap}")
    n = _exit_time(kind.code, float(threshold), x, model, Regime(regime), rng, int(cap))
    return n or None
