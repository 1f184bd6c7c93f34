import math
import warnings

import numpy as np
import pytest

from firstexit.diagnostics import geometric_exactness
from firstexit.errors import ConfigError, ConvergenceError, FitError, PreconditionError
from firstexit.model import ExponentialScaleModel, Regime, SamplerModel
from firstexit.qsd import (
    DiscreteDistribution,
    GridKernel,
    build_grid_kernel,
    dominance_gap,
    exact_finite_chain_oracle,
    kernel_arl,
    make_grid,
    qsd_power_iteration,
    stationary_distance,
    stationary_distribution,
    tail_exponent_estimate,
    transition_cdf,
)

TWO_CELL = [[0.5, 0.2], [0.1, 0.6]]


def random_monotone_chain(m, seed):
    """Substochastic kernel whose rows are discretized shifted logistic laws, monotone in the row."""
    rng = np.random.default_rng(seed)
    slope = rng.uniform(0.95, 1.0)
    shift = rng.uniform(0.0, 1.0)
    scale = rng.uniform(1.0, 4.0)
    edges = np.arange(m + 1, dtype=float)
    loc = shift + slope * (edges[:-1] + 0.5)
    c = 1.0 / (1.0 + np.exp(-(edges[None, 1:] - loc[:, None]) / scale))
    return np.diff(c, axis=1, prepend=0.0)


def two_cell_oracle():
    a = np.array(TWO_CELL)
    tr, det = np.trace(a), np.linalg.det(a)
    lam = 0.5 * (tr + math.sqrt(tr * tr - 4 * det))
    # left eigenvector: h (A - lam I) = 0
    h = np.array([a[1, 0], lam - a[0, 0]])
    return lam, h / h.sum()


def test_two_cell_analytic():
    lam, h = two_cell_oracle()
    assert lam == pytest.approx(0.7, abs=1e-15)
    res = qsd_power_iteration(GridKernel.from_matrix(TWO_CELL), tolerance=1e-14)
    assert res.p_a == pytest.approx(1 - lam, abs=1e-12)
    assert np.allclose(res.distribution.masses, h, atol=1e-12)
    assert np.allclose(res.distribution.masses, [1 / 3, 2 / 3], atol=1e-12)


def test_two_cell_geometric_exactness():
    res = qsd_power_iteration(GridKernel.from_matrix(TWO_CELL), tolerance=1e-15)
    pmf = exact_finite_chain_oracle(TWO_CELL, res.distribution, 1000)
    assert geometric_exactness(pmf, res.p_a) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_random_monotone_chain_geometric_exactness(seed):
    p = random_monotone_chain(50, seed)
    kernel = GridKernel.from_matrix(p)
    assert kernel.is_monotone()
    res = qsd_power_iteration(kernel, tolerance=1e-15)
    pmf = exact_finite_chain_oracle(p, res.distribution, 1000)
    assert geometric_exactness(pmf, res.p_a) < 1e-9


def test_two_cell_any_start_is_geometric():
    # both rows lose 0.3 per step, so the exit time is Geometric(0.3) from every start
    pmf = exact_finite_chain_oracle(TWO_CELL, [1.0, 0.0], 1000)
    assert geometric_exactness(pmf, 0.3) < 1e-12


def test_non_qsd_start_is_not_geometric():
    p = random_monotone_chain(50, 0)
    res = qsd_power_iteration(GridKernel.from_matrix(p), tolerance=1e-15)
    start = np.zeros(50)
    start[0] = 1.0
    pmf = exact_finite_chain_oracle(p, start, 1000)
    assert geometric_exactness(pmf, res.p_a) > 1e-3


def test_oracle_point_mass():
    pmf = exact_finite_chain_oracle(TWO_CELL, [1.0, 0.0], 2)
    assert pmf[0] == pytest.approx(0.3)
    assert pmf[1] == pytest.approx(0.5 * 0.3 + 0.2 * 0.3)


def test_zero_absorption():
    res = qsd_power_iteration(GridKernel.from_matrix([[0.5, 0.5], [0.25, 0.75]]), tolerance=1e-14)
    assert res.p_a == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(res.distribution.masses, [1 / 3, 2 / 3], atol=1e-12)


def test_all_mass_exits():
    with pytest.raises(ConvergenceError):
        qsd_power_iteration(GridKernel.from_matrix([[0.0, 0.0], [0.0, 0.0]]))


def test_iteration_limit():
    with pytest.raises(ConvergenceError) as info:
        qsd_power_iteration(GridKernel.from_matrix(random_monotone_chain(50, 0)), tolerance=1e-15, max_iter=2)
    assert info.value.iterations == 2


def test_non_square_rejected():
    with pytest.raises(PreconditionError):
        GridKernel.from_matrix([[0.5, 0.2]])


def test_masses_must_sum_to_one():
    with pytest.raises(PreconditionError):
        DiscreteDistribution(np.array([0.5, 0.4]), np.array([0.0, 1.0, 2.0]))


@pytest.fixture(scope="module")
def sr_kernel():
    return build_grid_kernel("shiryaev-roberts", ExponentialScaleModel(3.0), 40.0, 2000)


def test_sr_kernel_rows_sum_to_one(sr_kernel):
    total = sr_kernel.transition_matrix.sum(axis=1) + sr_kernel.absorption_vector
    assert np.abs(total - 1).max() < 1e-10


def test_sr_kernel_absorption_closed_form(sr_kernel):
    # P(R(1) > A | x) = P(Lambda > A/(1+x)) = (4 A / (1+x))^(-4/3)
    x = sr_kernel.points
    assert np.allclose(sr_kernel.absorption_vector, (4 * 40.0 / (1 + x)) ** (-4 / 3), rtol=1e-9)
    assert (np.diff(sr_kernel.absorption_vector) > 0).all()


def test_sr_kernel_monotone(sr_kernel):
    assert sr_kernel.is_monotone()


def test_cusum_kernel_atom_at_zero():
    model = ExponentialScaleModel(3.0)
    k = build_grid_kernel("cusum-log", model, 3.0, 100)
    e1 = k.cell_edges[1]
    # the lowest cell carries the reflection atom P(x + Z <= 0) plus the mass in (0, e1]
    expected = model.llr_cdf(e1 - k.points)
    assert np.allclose(k.transition_matrix[:, 0], expected, atol=1e-14)
    assert k.transition_matrix[0, 0] > model.llr_cdf(-k.points[0]) > 0


def test_transition_cdf_cusum_below_floor(q3):
    assert transition_cdf("cusum-log", q3, 0.5, -0.1) == 0.0
    assert transition_cdf("cusum-exp-scale", q3, 2.0, 0.99) == 0.0


def test_small_grid_rejected(q3):
    with pytest.raises(ConfigError, match="at least 50"):
        build_grid_kernel("shiryaev-roberts", q3, 40.0, 10)


def test_model_without_cdf_rejected():
    m = SamplerModel(lambda rng, regime, size: rng.normal(-0.5, 1, size))
    with pytest.raises(ConfigError):
        build_grid_kernel("cusum-log", m, 3.0, 100)


def test_grid_breakpoints_are_edges():
    e = make_grid("shiryaev-roberts", 2000.0, 1000, breakpoints=(20.0, 40.0))
    assert e[0] == 0.0 and e[-1] == 2000.0 and len(e) == 1001
    assert 20.0 in e and 40.0 in e
    assert (np.diff(e) > 0).all()


def test_restrict_to_non_edge(sr_kernel):
    with pytest.raises(PreconditionError):
        sr_kernel.restrict(33.3)


def test_qsd_fixed_point_and_arl(sr_kernel):
    res = qsd_power_iteration(sr_kernel)
    g = res.distribution.masses
    h = g @ sr_kernel.transition_matrix
    assert 0.5 * np.abs(h / h.sum() - g).sum() < 1e-9
    # exact ARL of the chain from 0 is (1 + q) A = 160; 1 / p_A is close to it
    assert 1 / res.p_a == pytest.approx(160.0, rel=0.03)


def test_kernel_arl_exact_sr(q3):
    assert kernel_arl("shiryaev-roberts", q3, 40.0, m=2000) == pytest.approx(160.0, rel=1e-3)


def test_qsd_grid_refinement(q3):
    p1 = qsd_power_iteration(build_grid_kernel("shiryaev-roberts", q3, 40.0, 1000)).p_a
    p2 = qsd_power_iteration(build_grid_kernel("shiryaev-roberts", q3, 40.0, 2000)).p_a
    assert abs(p2 / p1 - 1) < 0.01


def test_stationary_degenerate_walk():
    m = SamplerModel(
        lambda rng, regime, size: np.full(size, -1.0),
        cdf=lambda z, regime: (z >= -1.0).astype(float),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = stationary_distribution("cusum-log", m, 60, 5.0)
    assert res.distribution.masses[0] == pytest.approx(1.0, abs=1e-12)
    assert res.leakage == 0.0


def test_stationary_positive_drift_warns(q3):
    with pytest.warns(RuntimeWarning):
        try:
            stationary_distribution("cusum-log", q3, 60, 5.0, regime=Regime.POST, max_iter=5)
        except ConvergenceError:
            pass


@pytest.fixture(scope="module")
def sr_stationary():
    return stationary_distribution(
        "shiryaev-roberts", ExponentialScaleModel(3.0), 2000, 2000.0, breakpoints=(20.0, 40.0)
    )


def test_dominance(sr_stationary):
    for a in (20.0, 40.0):
        assert dominance_gap(sr_stationary, a) >= -2 / 2000


def test_quasi_stationary_approaches_stationary(sr_stationary):
    d20, d40 = stationary_distance(sr_stationary, 20.0), stationary_distance(sr_stationary, 40.0)
    assert 0 < d40 < d20


def test_rate_order_of_magnitude(q3):
    # p_A is of order A^(-omega) with omega = 1: A p_A stays nearly constant
    scaled = [a * qsd_power_iteration(build_grid_kernel("shiryaev-roberts", q3, a, 1000)).p_a for a in (20.0, 40.0, 100.0)]
    assert max(scaled) / min(scaled) < 1.05


def test_stationary_tail(sr_stationary):
    fit = tail_exponent_estimate(sr_stationary.distribution, (20.0, 200.0))
    assert -1.15 <= fit.slope <= -0.85
    assert fit.r_squared >= 0.98
    assert sr_stationary.leakage < 1e-3


def _from_tail(edges, tail):
    masses = -np.diff(np.concatenate([[1.0], tail]))
    masses[-1] += 1 - masses.sum()
    return DiscreteDistribution(masses, edges)


def test_tail_fit_pareto_exact():
    edges = np.concatenate([[0.0], np.geomspace(1, 1e4, 200)])
    tail = np.minimum(1.0, edges[1:] ** -2.0)
    tail[-1] = 0.0
    fit = tail_exponent_estimate(_from_tail(edges, tail), (2.0, 1000.0))
    assert fit.slope == pytest.approx(-2.0, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_tail_fit_uniform_is_poor():
    edges = np.linspace(0, 100, 201)
    d = DiscreteDistribution(np.full(200, 1 / 200), edges)
    assert tail_exponent_estimate(d, (1.0, 99.0)).r_squared < 0.98


def test_tail_fit_too_few_points():
    edges = np.linspace(0, 10, 21)
    d = DiscreteDistribution(np.full(20, 1 / 20), edges)
    with pytest.raises(FitError):
        tail_exponent_estimate(d, (1.0, 3.0))


@pytest.mark.parametrize(
    "kind,threshold",
    [("shiryaev-roberts", 20.0), ("cusum-log", 3.0), ("cusum-exp-scale", 13.0), ("cusum-exp-additive", 13.0)],
)
@pytest.mark.parametrize("scheme", ["midpoint", "right-edge"])
def test_kernel_invariants(q3, kind, threshold, scheme):
    k = build_grid_kernel(kind, q3, threshold, 300, scheme)
    assert (k.transition_matrix >= 0).all() and (k.absorption_vector >= 0).all()
    assert np.abs(k.transition_matrix.sum(axis=1) + k.absorption_vector - 1).max() <= 1e-10
    assert k.is_monotone()


@pytest.mark.parametrize("tol", [1e-6, 1e-10, 1e-13])
def test_qsd_result_invariants(tol):
    k = GridKernel.from_matrix(random_monotone_chain(50, 3))
    res = qsd_power_iteration(k, tolerance=tol)
    assert res.residual <= tol
    assert abs(res.p_a - res.distribution.masses @ k.absorption_vector) <= 1e-12
    assert (res.distribution.masses >= 0).all()
    assert abs(res.distribution.masses.sum() - 1) <= 1e-12
