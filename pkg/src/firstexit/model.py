"""Change-point observation models and their log-likelihood-ratio innovations.

Two kinds of model are supported:

* :class:`ExponentialScaleModel` -- observations are Exponential(1) before the
  change and Exponential with mean ``1 + q`` after it. Every constant needed by
  the run-length approximations has a closed form.
* :class:`SamplerModel` -- any user-supplied sampler of log-likelihood ratios,
  optionally with its CDF (needed by the grid kernels) and known constants.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special

from .errors import NoRootError, ParameterError, UnsupportedModelError
from .streams import stream


class Regime(str, Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True)
class Innovation:
    """One step of the driving sequence: the log-likelihood ratio and its exponential."""

    z: float
    lam: float

    @classmethod
    def from_z(cls, z):
        return cls(float(z), math.exp(z))

    @classmethod
    def from_lambda(cls, lam):
        if not lam > 0:
            raise ParameterError(f"likelihood ratio must be positive, got {lam}")
        return cls(math.log(lam), float(lam))


@dataclass(frozen=True)
class ModelConstants:
    """Information numbers and renewal constants of a model.

    ``i1``/``i0`` are the post-/pre-change Kullback-Leibler numbers, ``gamma`` the
    limiting mean of ``exp(-overshoot)`` of the post-change LLR walk, ``omega``
    the positive root of ``E exp(omega Z) = 1`` under the pre-change law, and
    ``beta``/``mu`` the pre-change means of the likelihood ratio and its log.
    """

    i1: float
    i0: float
    gamma: float
    omega: float
    beta: float
    mu: float

    @property
    def delta(self):
        """CUSUM ARL constant ``I1 * gamma**2`` (valid for LLR innovations, omega = 1)."""
        return self.i1 * self.gamma**2


class ChangePointModel(ABC):
    kind: str

    @abstractmethod
    def sample_llr(self, rng: np.random.Generator, regime: Regime, size: int) -> np.ndarray:
        """Draw ``size`` log-likelihood ratios under ``regime``."""

    @property
    def has_cdf(self) -> bool:
        return False

    def llr_cdf(self, z, regime: Regime = Regime.PRE):
        raise UnsupportedModelError(f"model {self.kind!r} has no closed-form innovation CDF")

    def lr_cdf(self, t, regime: Regime = Regime.PRE):
        """CDF of the likelihood ratio ``exp(Z)`` evaluated at ``t``."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            logt = np.where(t > 0, np.log(np.where(t > 0, t, 1.0)), -np.inf)
        return self.llr_cdf(logt, regime)

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class ExponentialScaleModel(ChangePointModel):
    """Exponential(1) observations changing to Exponential(mean ``1 + q``)."""

    q: float
    kind: str = field(default="exponential-scale", init=False)

    def __post_init__(self):
        if not (np.isfinite(self.q) and self.q > 0):
            raise ParameterError(f"exponential-scale model needs q > 0, got q={self.q}")

    @property
    def pre_density_params(self):
        return (1.0,)

    @property
    def post_density_params(self):
        return (1.0 + self.q,)

    def log_lr(self, y):
        q = self.q
        return q * np.asarray(y, dtype=float) / (1.0 + q) - math.log1p(q)

    def sample_observations(self, rng, regime, size):
        y = rng.standard_exponential(size)
        if Regime(regime) is Regime.POST:
            y *= 1.0 + self.q
        return y

    def sample_llr(self, rng, regime, size):
        return self.log_lr(self.sample_observations(rng, regime, size))

    @property
    def has_cdf(self):
        return True

    def llr_cdf(self, z, regime=Regime.PRE):
        q = self.q
        # Z = q Y / (1+q) - log(1+q) with Y ~ Exp(1) (pre) or Exp(mean 1+q) (post)
        shifted = np.asarray(z, dtype=float) + math.log1p(q)
        rate = (1.0 + q) / q if Regime(regime) is Regime.PRE else 1.0 / q
        with np.errstate(invalid="ignore"):
            return np.where(shifted > 0, -np.expm1(-rate * np.maximum(shifted, 0.0)), 0.0)

    def to_dict(self):
        return {"kind": self.kind, "q": float(self.q)}


@dataclass(frozen=True)
class SamplerModel(ChangePointModel):
    """Model defined by a sampler ``sampler(rng, regime, size) -> z``.

    For ``workers > 1`` the sampler must be picklable (a module-level function).
    """

    sampler: Callable
    cdf: Optional[Callable] = None
    constants: Optional[ModelConstants] = None
    name: str = "user-supplied"
    kind: str = field(default="user-supplied", init=False)

    pre_density_params = ()
    post_density_params = ()

    def sample_llr(self, rng, regime, size):
        z = np.asarray(self.sampler(rng, Regime(regime), size), dtype=float)
        if z.shape != (size,):
            raise ParameterError(f"sampler returned shape {z.shape}, expected ({size},)")
        return z

    @property
    def has_cdf(self):
        return self.cdf is not None

    def llr_cdf(self, z, regime=Regime.PRE):
        if self.cdf is None:
            return super().llr_cdf(z, regime)
        return np.asarray(self.cdf(np.asarray(z, dtype=float), Regime(regime)), dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "name": self.name}


def sample_innovation(model: ChangePointModel, regime, rng: np.random.Generator) -> Innovation:
    """Draw one innovation from ``model`` under ``regime``."""
    return Innovation.from_z(model.sample_llr(rng, Regime(regime), 1)[0])


def exponential_scale_constants(q):
    if not q > 0:
        raise ParameterError(f"q must be positive, got {q}")
    lq = math.log1p(q)
    i0 = lq - q / (1.0 + q)
    return ModelConstants(
        i1=q - lq,
        i0=i0,
        gamma=1.0 / (1.0 + q),
        omega=1.0,
        beta=1.0,
        mu=-i0,
    )


def model_constants(model: ChangePointModel, seed=None, n=200_000) -> ModelConstants:
    """Constants of ``model``.

    Closed forms for the exponential-scale model; attached constants for a
    :class:`SamplerModel` that carries them; otherwise Monte Carlo estimates when
    a ``seed`` is given.
    """
    if isinstance(model, ExponentialScaleModel):
        return exponential_scale_constants(model.q)
    if getattr(model, "constants", None) is not None:
        return model.constants
    if seed is None:
        raise UnsupportedModelError(
            f"model {model.kind!r} has no closed-form constants; pass seed= to estimate them"
        )
    from .approx import renewal_gamma_mc

    z_pre = model.sample_llr(stream(seed, 0), Regime.PRE, n)
    z_post = model.sample_llr(stream(seed, 1), Regime.POST, n)
    i1 = float(z_post.mean())
    omega = solve_omega(lambda rng, size: model.sample_llr(rng, Regime.PRE, size), seed=seed, n=n)
    gamma = renewal_gamma_mc(model, [20.0 * max(i1, 1e-3)], 10_000, seed).gamma_hat
    return ModelConstants(
        i1=i1,
        i0=-float(z_pre.mean()),
        gamma=gamma,
        omega=omega,
        beta=float(np.exp(z_pre).mean()),
        mu=float(z_pre.mean()),
    )


def solve_omega(llr_sampler, tolerance=1e-6, *, n=200_000, seed=0, interval=(1e-6, 64.0)):
    """Positive root of ``omega -> E exp(omega Z) = 1``.

    The moment function is estimated from one fixed sample of ``n`` draws, so it
    is a smooth deterministic function of omega and can be bracketed exactly.
    ``llr_sampler`` is either a :class:`ChangePointModel` (pre-change draws are
    used) or a callable ``(rng, size) -> array``.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    rng = stream(seed, 0)
    if isinstance(llr_sampler, ChangePointModel):
        z = llr_sampler.sample_llr(rng, Regime.PRE, n)
    else:
        z = np.asarray(llr_sampler(rng, n), dtype=float)
    log_n = math.log(z.size)

    def log_moment(w):
        return float(special.logsumexp(w * z) - log_n)

    lo, hi = interval
    grid = np.geomspace(lo, hi, 193)
    values = np.array([log_moment(w) for w in grid])
    if not values[0] < 0:
        raise NoRootError("moment function is not below 1 near zero (mean of Z is not negative)", interval)
    above = np.flatnonzero(values > 0)
    if above.size == 0:
        raise NoRootError("no sign change of E exp(omega Z) - 1", interval)
    k = above[0]
    root = optimize.brentq(log_moment, grid[k - 1], grid[k], xtol=1e-14, rtol=4 * np.finfo(float).eps)
    if abs(math.expm1(log_moment(root))) >= tolerance:
        raise NoRootError(f"bracketed root misses tolerance {tolerance:g}", interval)
    return root
