"""Threshold grids and settings of the reference CUSUM / Shiryaev-Roberts experiment (q = 3)."""

from __future__ import annotations

from .approx import arl_sr_approx, fo_arl_cusum, ho_arl_cusum
from .engine import DEFAULT_SEED, ExperimentConfig, run_experiment, summarize
from .model import ExponentialScaleModel
from .statistic import StatisticKind

Q = 3.0
CUSUM_THRESHOLDS = (1.2, 1.7, 2.5, 4.6, 9.2, 13.0, 17.1, 21.0, 41.0)
SR_THRESHOLDS = (1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 100.0)
FIGURE_SETTINGS = {
    "cusum": (StatisticKind.CUSUM_EXP, 13.0),
    "sr": (StatisticKind.SHIRYAEV_ROBERTS, 40.0),
}
FULL_REPS = 100_000
DESK_REPS = 10_000

TABLE_COLUMNS = {
    1: ("A", "FO", "HO", "MC-ARL", "MC-SD", "MC-SE"),
    2: ("A", "approx-ARL", "MC-ARL", "MC-SD", "MC-SE"),
}


def experiment(kind, threshold, replications=FULL_REPS, seed=DEFAULT_SEED, workers=1, q=Q):
    """Pre-change run of ``kind`` from its barrier (``W(0) = 1`` for the CUSUM, ``R(0) = 0``)."""
    return ExperimentConfig(
        statistic=kind,
        model=ExponentialScaleModel(q),
        threshold=threshold,
        replications=replications,
        master_seed=seed,
        workers=workers,
    )


def table(which, replications=FULL_REPS, seed=DEFAULT_SEED, workers=1, q=Q):
    """Rows of the ARL-versus-threshold table: 1 for CUSUM, 2 for Shiryaev-Roberts."""
    rows = []
    if which == 1:
        for a in CUSUM_THRESHOLDS:
            s = summarize(run_experiment(experiment(StatisticKind.CUSUM_EXP, a, replications, seed, workers, q)))
            rows.append((a, fo_arl_cusum(q, a), ho_arl_cusum(q, a), s.mean, s.sd, s.standard_error))
    elif which == 2:
        for a in SR_THRESHOLDS:
            s = summarize(run_experiment(experiment(StatisticKind.SHIRYAEV_ROBERTS, a, replications, seed, workers, q)))
            rows.append((a, arl_sr_approx(q, a), s.mean, s.sd, s.standard_error))
    else:
        raise ValueError(f"table must be 1 or 2, got {which}")
    return rows
