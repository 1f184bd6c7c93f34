"""First-exit times of stochastically monotone Markov chains: CUSUM and Shiryaev-Roberts run lengths."""

from .approx import (
    arl_sr_approx,
    fo_arl_cusum,
    ho_arl_cusum,
    local_false_alarm_prob,
    p_a_approx,
    renewal_gamma_mc,
)
from .diagnostics import (
    empirical_mgf,
    ks_stat_exp1,
    moment_diagnostic,
    qq_data,
    standardize,
    survival_curve,
)
from .engine import ExitTimeSample, ExperimentConfig, SummaryStats, run_experiment, summarize
from .model import (
    ExponentialScaleModel,
    Innovation,
    ModelConstants,
    Regime,
    SamplerModel,
    model_constants,
    sample_innovation,
    solve_omega,
)
from .qsd import (
    DiscreteDistribution,
    GridKernel,
    QsdResult,
    build_grid_kernel,
    dominance_gap,
    exact_finite_chain_oracle,
    kernel_arl,
    qsd_power_iteration,
    stationary_distance,
    stationary_distribution,
    tail_exponent_estimate,
)
from .statistic import (
    MonotoneStatistic,
    StatisticKind,
    cusum_exp_update,
    cusum_update,
    run_to_exit,
    sr_update,
)

__version__ = "0.1.0"
