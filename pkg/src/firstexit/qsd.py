"""Grid discretization of the one-step kernel, quasi-stationary and stationary laws.

The state space below the threshold is cut into cells. Row ``i`` of the kernel
is the one-step law from the representative point of cell ``i``, integrated
exactly over every cell using the closed-form innovation CDF:

* Shiryaev-Roberts: ``P(X(1) <= y | x) = F_lam(y / (1 + x))``
* log-scale CUSUM: ``P(X(1) <= y | x) = F_z(y - x)`` for ``y >= 0``
* exponential-scale CUSUM: ``P(W(1) <= y | w) = F_lam(y / w)`` for ``y >= 1``

The mass of the reflecting barrier is the CDF at the first upper edge, so it
lands in the lowest cell. What is left of each row after the last edge is the
absorption (exit) probability.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    ConfigError,
    ConvergenceError,
    DivergenceWarning,
    FitError,
    PreconditionError,
    UnsupportedModelError,
)
from .model import ChangePointModel, Regime, model_constants
from .statistic import StatisticKind
from .streams import stream

MIN_CELLS = 50
_ROW_BLOCK = 512


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    masses: np.ndarray
    cell_edges: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.ndim != 1 or m.size + 1 != len(self.cell_edges):
            raise PreconditionError("masses must have one entry per cell")
        if (m < 0).any() or abs(m.sum() - 1.0) > 1e-12:
            raise PreconditionError(f"masses must be nonnegative and sum to 1 (sum={m.sum()!r})")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "cell_edges", np.asarray(self.cell_edges, dtype=float))

    @classmethod
    def uniform(cls, cell_edges):
        m = len(cell_edges) - 1
        return cls(np.full(m, 1.0 / m), cell_edges)

    @property
    def cdf(self) -> np.ndarray:
        """``P(X <= upper edge of cell k)``."""
        return np.cumsum(self.masses)

    @property
    def tail(self) -> np.ndarray:
        """``P(X > upper edge of cell k)``, summed from the top to avoid cancellation."""
        t = np.cumsum(self.masses[::-1])[::-1]
        return np.append(t[1:], 0.0)


@dataclass(frozen=True, eq=False)
class GridKernel:
    cell_edges: np.ndarray
    transition_matrix: np.ndarray
    absorption_vector: np.ndarray
    points: Optional[np.ndarray] = None

    @classmethod
    def from_matrix(cls, matrix, cell_edges=None):
        """Kernel from an explicit substochastic matrix; absorption is the row deficit."""
        p = np.asarray(matrix, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise PreconditionError(f"transition matrix must be square, got shape {p.shape}")
        if cell_edges is None:
            cell_edges = np.arange(p.shape[0] + 1, dtype=float)
        k = cls(np.asarray(cell_edges, dtype=float), p, np.clip(1.0 - p.sum(axis=1), 0.0, 1.0))
        k.validate()
        return k

    @property
    def m(self) -> int:
        return self.transition_matrix.shape[0]

    def validate(self, tol=1e-10):
        p, a = self.transition_matrix, self.absorption_vector
        if (p < 0).any() or (a < 0).any():
            raise PreconditionError("kernel has negative entries")
        total = p.sum(axis=1) + a
        if np.abs(total - 1.0).max() > tol:
            raise PreconditionError(f"rows do not sum to 1 (max deviation {np.abs(total - 1).max():.3g})")
        return self

    def exceedance(self) -> np.ndarray:
        """``P(X(1) > upper edge of cell j | cell i)``, including exit."""
        tail = np.cumsum(self.transition_matrix[:, ::-1], axis=1)[:, ::-1]
        return np.hstack([tail[:, 1:], np.zeros((self.m, 1))]) + self.absorption_vector[:, None]

    def is_monotone(self, tol=1e-12) -> bool:
        return bool((np.diff(self.exceedance(), axis=0) >= -tol).all())

    def restrict(self, upper) -> "GridKernel":
        """Kernel of the same chain killed above ``upper``, which must be a cell edge."""
        k = int(np.argmin(np.abs(self.cell_edges - upper)))
        if k == 0 or not np.isclose(self.cell_edges[k], upper, rtol=1e-12, atol=0.0):
            raise PreconditionError(f"{upper} is not an edge of the grid")
        p = self.transition_matrix[:k, :k].copy()
        a = self.absorption_vector[:k] + self.transition_matrix[:k, k:].sum(axis=1)
        pts = None if self.points is None else self.points[:k]
        return GridKernel(self.cell_edges[: k + 1].copy(), p, a, pts)


@dataclass(frozen=True)
class QsdResult:
    distribution: DiscreteDistribution
    p_a: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class StationaryResult:
    distribution: DiscreteDistribution
    leakage: float
    iterations: int
    residual: float
    kernel: GridKernel


class TailFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def _piecewise_edges(points, m, log):
    f = np.log if log else (lambda v: np.asarray(v, dtype=float))
    pts = np.asarray(points, dtype=float)
    span = f(pts[1:]) - f(pts[:-1])
    counts = np.maximum(1, np.round(m * span / span.sum()).astype(int))
    counts[-1] = max(1, m - counts[:-1].sum())
    pieces = [pts[:1]]
    for a, b, k in zip(pts[:-1], pts[1:], counts):
        seg = np.geomspace(a, b, k + 1) if log else np.linspace(a, b, k + 1)
        seg[-1] = b
        pieces.append(seg[1:])
    return np.concatenate(pieces)


def make_grid(kind, upper, m, spacing="auto", lower=None, breakpoints=()) -> np.ndarray:
    """Cell edges with ``m`` cells spanning ``[floor, upper]``.

    ``spacing="auto"`` is uniform for the log-scale CUSUM and log-uniform
    otherwise. On log grids of the Shiryaev-Roberts chain the first cell is
    ``[0, lower]``. Every breakpoint becomes an exact edge, which lets several
    thresholds share one grid.
    """
    kind = StatisticKind(kind)
    if spacing == "auto":
        spacing = "uniform" if kind is StatisticKind.CUSUM else "log"
    if spacing not in ("uniform", "log"):
        raise ConfigError(f"unknown grid spacing {spacing!r}")
    floor = kind.floor
    if not upper > floor:
        raise PreconditionError(f"grid upper bound {upper} must exceed {floor}")
    inner = sorted(b for b in breakpoints if floor < b < upper)
    if spacing == "uniform":
        return _piecewise_edges([floor, *inner, upper], m, log=False)
    if floor > 0:
        return _piecewise_edges([floor, *inner, upper], m, log=True)
    if lower is None:
        lower = 1e-3 * min(1.0, upper)
    inner = [b for b in inner if b > lower]
    return np.concatenate([[0.0], _piecewise_edges([lower, *inner, upper], m - 1, log=True)])


def transition_cdf(kind, model: ChangePointModel, x, y, regime=Regime.PRE):
    """``P(X(1) <= y | X(0) = x)``; broadcasts over ``x`` and ``y``."""
    kind = StatisticKind(kind)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind is StatisticKind.SHIRYAEV_ROBERTS:
        return model.lr_cdf(y / (1.0 + x), regime)
    if kind is StatisticKind.CUSUM:
        return np.where(y >= 0, model.llr_cdf(y - x, regime), 0.0)
    if kind is StatisticKind.CUSUM_EXP:
        return np.where(y >= 1, model.lr_cdf(y / x, regime), 0.0)
    return np.where(y >= 1, model.lr_cdf(y - x, regime), 0.0)


def _representatives(edges, scheme):
    if scheme == "midpoint":
        return 0.5 * (edges[1:] + edges[:-1])
    if scheme == "right-edge":
        return edges[1:].copy()
    raise ConfigError(f"unknown representative-point scheme {scheme!r}")


def _rows(kind, model, x, edges, regime):
    c = transition_cdf(kind, model, x[:, None], edges[None, 1:], regime)
    p = np.diff(c, axis=1, prepend=0.0)
    return p, 1.0 - c[:, -1]


def build_grid_kernel(
    kind,
    model: ChangePointModel,
    threshold: float,
    m: int,
    scheme="midpoint",
    regime=Regime.PRE,
    edges=None,
    spacing="auto",
) -> GridKernel:
    """Discretized substochastic kernel of ``kind`` killed above ``threshold``."""
    if not model.has_cdf:
        raise ConfigError(f"model {model.kind!r} has no closed-form CDF; grid kernels need one")
    if edges is None:
        if m < MIN_CELLS:
            raise ConfigError(f"grid needs at least {MIN_CELLS} cells, got m={m}")
        edges = make_grid(kind, threshold, m, spacing)
    edges = np.asarray(edges, dtype=float)
    if not (np.diff(edges) > 0).all():
        raise PreconditionError("cell edges must be strictly increasing")
    if edges.size - 1 < MIN_CELLS:
        raise ConfigError(f"grid needs at least {MIN_CELLS} cells, got {edges.size - 1}")
    x = _representatives(edges, scheme)
    n = x.size
    p = np.empty((n, n))
    a = np.empty(n)
    for s in range(0, n, _ROW_BLOCK):
        p[s : s + _ROW_BLOCK], a[s : s + _ROW_BLOCK] = _rows(kind, model, x[s : s + _ROW_BLOCK], edges, regime)
    return GridKernel(edges, p, a, x).validate()


def _as_masses(start, m):
    if start is None:
        return np.full(m, 1.0 / m)
    v = start.masses if isinstance(start, DiscreteDistribution) else np.asarray(start, dtype=float)
    if v.shape != (m,):
        raise PreconditionError(f"start distribution has shape {v.shape}, expected ({m},)")
    return v


def qsd_power_iteration(kernel: GridKernel, init=None, tolerance=1e-10, max_iter=10**6) -> QsdResult:
    """Fixed point of ``G -> normalize(G P)``: the law conditioned on no exit."""
    if tolerance <= 0:
        raise PreconditionError("tolerance must be positive")
    p = kernel.transition_matrix
    g = _as_masses(init, kernel.m).copy()
    g /= g.sum()
    residual = np.inf
    for it in range(1, int(max_iter) + 1):
        h = g @ p
        s = h.sum()
        if not s > 0:
            raise ConvergenceError("all mass exits in one step; no quasi-stationary law", residual, it)
        h /= s
        residual = 0.5 * np.abs(h - g).sum()
        g = h
        if residual < tolerance:
            return QsdResult(
                DiscreteDistribution(g, kernel.cell_edges),
                float(g @ kernel.absorption_vector),
                it,
                float(residual),
            )
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", residual, max_iter)


def exact_finite_chain_oracle(transition_matrix, start, horizon: int) -> np.ndarray:
    """``P(N = n)``, ``n = 1..horizon``, by propagating ``start`` through the chain."""
    p = transition_matrix.transition_matrix if isinstance(transition_matrix, GridKernel) else np.asarray(
        transition_matrix, dtype=float
    )
    absorb = 1.0 - p.sum(axis=1)
    v = _as_masses(start, p.shape[0]).astype(float)
    out = np.empty(int(horizon))
    for n in range(int(horizon)):
        out[n] = v @ absorb
        v = v @ p
    return out


def mean_exit_times(kernel: GridKernel) -> np.ndarray:
    """Expected exit time from each cell's representative point: solves ``(I - P) L = 1``."""
    return np.linalg.solve(np.eye(kernel.m) - kernel.transition_matrix, np.ones(kernel.m))


def kernel_arl(kind, model, threshold, x=None, m=2000, regime=Regime.PRE, scheme="midpoint") -> float:
    """Expected exit time from the exact point ``x`` via the discretized renewal equation."""
    kind = StatisticKind(kind)
    x = kind.floor if x is None else float(x)
    kernel = build_grid_kernel(kind, model, threshold, m, scheme, regime)
    first, _ = _rows(kind, model, np.array([x]), kernel.cell_edges, regime)
    return float(1.0 + first[0] @ mean_exit_times(kernel))


def _drift(model, regime):
    if Regime(regime) is Regime.PRE:
        try:
            return model_constants(model).mu
        except UnsupportedModelError:
            pass
    return float(model.sample_llr(stream(0, 0), Regime(regime), 100_000).mean())


def stationary_distribution(
    kind,
    model: ChangePointModel,
    m: int,
    bound: float,
    regime=Regime.PRE,
    breakpoints=(),
    scheme="midpoint",
    spacing="auto",
    tolerance=1e-12,
    max_iter=10**6,
) -> StationaryResult:
    """Stationary law on ``[floor, bound]`` with above-bound mass returned to the top cell.

    ``leakage`` is the long-run fraction of steps that overshoot ``bound``; it
    is reported, not hidden by renormalization.
    """
    kind = StatisticKind(kind)
    mu = _drift(model, regime)
    if kind is StatisticKind.CUSUM_EXP_ADDITIVE or mu >= 0:
        warnings.warn(f"nonnegative drift (mean log-likelihood ratio {mu:.4g}); chain may be transient",
                      DivergenceWarning, stacklevel=2)
    if m < MIN_CELLS:
        raise ConfigError(f"grid needs at least {MIN_CELLS} cells, got m={m}")
    edges = make_grid(kind, bound, m, spacing, breakpoints=breakpoints)
    kernel = build_grid_kernel(kind, model, bound, m, scheme, regime, edges=edges)
    p = kernel.transition_matrix.copy()
    p[:, -1] += kernel.absorption_vector
    g = np.full(kernel.m, 1.0 / kernel.m)
    residual = np.inf
    for it in range(1, int(max_iter) + 1):
        h = g @ p
        h /= h.sum()
        residual = 0.5 * np.abs(h - g).sum()
        g = h
        if residual < tolerance:
            return StationaryResult(
                DiscreteDistribution(g, edges),
                float(g @ kernel.absorption_vector),
                it,
                float(residual),
                kernel,
            )
    raise ConvergenceError(f"stationary iteration did not converge in {max_iter} iterations", residual, max_iter)


def dominance_gap(stationary: StationaryResult, threshold: float, tolerance=1e-12) -> float:
    """``min_k (H_A(cell k) - H(cell k))`` on the shared grid below ``threshold``.

    Nonnegative when the quasi-stationary law is stochastically smaller than the
    stationary law.
    """
    q = qsd_power_iteration(stationary.kernel.restrict(threshold), tolerance=tolerance)
    h = stationary.distribution.cdf[: q.distribution.masses.size]
    return float((q.distribution.cdf - h).min())


def stationary_distance(stationary: StationaryResult, threshold: float, tolerance=1e-12) -> float:
    """Largest gap between the cumulative quasi-stationary law below ``threshold`` and the stationary law.

    Shrinks as ``threshold`` grows; no rate is asserted.
    """
    q = qsd_power_iteration(stationary.kernel.restrict(threshold), tolerance=tolerance)
    h = stationary.distribution.cdf[: q.distribution.masses.size]
    return float(np.abs(q.distribution.cdf - h).max())


def tail_exponent_estimate(distribution: DiscreteDistribution, fit_range) -> TailFit:
    """Least-squares line through ``log P(X > y)`` against ``log y`` on the grid edges."""
    lo, hi = fit_range
    edges = distribution.cell_edges
    if not (edges[0] <= lo < hi <= edges[-1]):
        raise FitError(f"fit range {fit_range} outside grid [{edges[0]}, {edges[-1]}]")
    y = edges[1:]
    tail = distribution.tail
    sel = (y >= lo) & (y <= hi) & (tail > 0)
    if sel.sum() < 10:
        raise FitError(f"only {int(sel.sum())} grid points with positive tail mass in {fit_range}; need 10")
    lx, ly = np.log(y[sel]), np.log(tail[sel])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = ((ly - ly.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / ss_tot if ss_tot > 0 else 1.0
    return TailFit(float(slope), float(intercept), float(r2))
