"""Acceptance gate: one test per criterion, at the stated tolerances.

Set ``FIRSTEXIT_DESK=1`` for the desk-scale variant (R = 10^4, 4 standard
errors in criterion 2). The terminal summary prints one PASS/FAIL line per
criterion.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from firstexit.approx import arl_sr_approx, fo_arl_cusum, ho_arl_cusum
from firstexit.cli import main
from firstexit.diagnostics import empirical_mgf, geometric_exactness, ks_stat_exp1, qq_slope, standardize
from firstexit.engine import summarize
from firstexit.model import ExponentialScaleModel, Regime
from firstexit.qsd import (
    GridKernel,
    build_grid_kernel,
    dominance_gap,
    exact_finite_chain_oracle,
    qsd_power_iteration,
    stationary_distribution,
    tail_exponent_estimate,
)
from firstexit.statistic import StatisticKind, first_exit, path
from firstexit.streams import stream

from conftest import DESK, REPS
from reference_values import CUSUM_A, CUSUM_FO, CUSUM_HO, CUSUM_MC, SR_A, SR_APPROX, SR_MC
from test_qsd import TWO_CELL, random_monotone_chain

CUSUM = StatisticKind.CUSUM_EXP
SR = StatisticKind.SHIRYAEV_ROBERTS


def test_criterion_01_closed_form_rows(criterion):
    t0 = time.perf_counter()
    fo_err = max(abs(fo_arl_cusum(3.0, a) - v) for a, v in zip(CUSUM_A, CUSUM_FO))
    ho_err = max(abs(ho_arl_cusum(3.0, a) - v) for a, v in zip(CUSUM_A, CUSUM_HO))
    sr_exact = all(arl_sr_approx(3.0, a) == v for a, v in zip(SR_A, SR_APPROX))
    elapsed = time.perf_counter() - t0
    criterion(f"max |FO err|={fo_err:.4f} max |HO err|={ho_err:.4f} SR exact={sr_exact} ({elapsed:.3f}s)")
    assert fo_err <= 0.01 and ho_err <= 0.01 and sr_exact and elapsed < 1


def test_criterion_02_mc_tables(reference_sample, criterion):
    k = 4.0 if DESK else 3.0
    worst = []
    for kind, thresholds, published in ((CUSUM, CUSUM_A, CUSUM_MC), (SR, SR_A, SR_MC)):
        for a, ref in zip(thresholds, published):
            s = summarize(reference_sample(kind, a))
            z = (s.mean - ref) / s.standard_error
            worst.append((abs(z), kind.value, a, s.mean, ref, z))
    misses = [w for w in worst if w[0] > k]
    top = max(worst)
    criterion(
        f"worst |z|={top[0]:.2f} at {top[1]} A={top[2]:g} (mean {top[3]:.2f} vs {top[4]}); "
        f"{len(misses)}/{len(worst)} beyond {k:g} SE"
        + "".join(f" [{m[1]} A={m[2]:g}: {m[3]:.2f} vs {m[4]}, z={m[5]:+.2f}]" for m in misses)
    )
    assert not misses


def test_criterion_03_moment_ratio(reference_sample, criterion):
    ratios = {}
    for kind, a in ((CUSUM, 41.0), (SR, 100.0)):
        s = summarize(reference_sample(kind, a))
        ratios[f"{kind.value} A={a:g}"] = s.sd / s.mean
    criterion(" ".join(f"{k}: {v:.4f}" for k, v in ratios.items()))
    assert all(0.98 <= v <= 1.01 for v in ratios.values())


def test_criterion_04_exponentiality(reference_sample, criterion):
    results = {}
    for kind, a in ((CUSUM, 13.0), (SR, 40.0)):
        std = standardize(reference_sample(kind, a))
        results[f"{kind.value} A={a:g}"] = (ks_stat_exp1(std)[0], qq_slope(std))
    criterion(" ".join(f"{k}: KS={d:.4f} QQ={s:.4f}" for k, (d, s) in results.items()))
    assert all(d < 0.03 and 0.97 <= s <= 1.03 for d, s in results.values())


def test_criterion_05_geometric_exactness(criterion):
    t0 = time.perf_counter()
    tv = {}
    for name, p in (("2-cell", np.array(TWO_CELL)), ("50-cell", random_monotone_chain(50, 0))):
        res = qsd_power_iteration(GridKernel.from_matrix(p), tolerance=1e-15)
        pmf = exact_finite_chain_oracle(p, res.distribution, 1000)
        tv[name] = geometric_exactness(pmf, res.p_a)
    elapsed = time.perf_counter() - t0
    criterion(" ".join(f"{k}: TV={v:.2e}" for k, v in tv.items()) + f" ({elapsed:.3f}s)")
    assert all(v < 1e-9 for v in tv.values()) and elapsed < 1


def test_criterion_06_qsd_rate_times_arl(reference_sample, criterion):
    model = ExponentialScaleModel(3.0)
    p1 = qsd_power_iteration(build_grid_kernel(SR, model, 40.0, 4000)).p_a
    p2 = qsd_power_iteration(build_grid_kernel(SR, model, 40.0, 8000)).p_a
    mean = summarize(reference_sample(SR, 40.0)).mean
    product, change = p1 * mean, abs(p2 - p1) / p1
    criterion(f"p_a={p1:.6g} p_a*mean={product:.4f} refinement change={change:.2e}")
    assert 0.95 <= product <= 1.05 and change < 0.01


def test_criterion_07_dominance(criterion):
    m = 4000
    st = stationary_distribution(SR, ExponentialScaleModel(3.0), m, 2000.0, breakpoints=(20.0, 40.0))
    gaps = {a: dominance_gap(st, a) for a in (20.0, 40.0)}
    criterion(" ".join(f"A={a:g}: min gap={g:.2e}" for a, g in gaps.items()) + f" (bound -2/m={-2 / m:.1e})")
    assert all(g >= -2 / m for g in gaps.values())


def test_criterion_08_coupling(criterion):
    model = ExponentialScaleModel(3.0)
    counts = {}
    for kind in (SR, StatisticKind.CUSUM, CUSUM):
        path_v = exit_v = 0
        for i in range(1000):
            rng = stream(8, i)
            x = kind.floor + rng.exponential(3.0)
            y = x + rng.exponential(3.0)
            z = model.sample_llr(rng, Regime.PRE, 1000)
            path_v += int((path(kind, x, z) > path(kind, y, z)).sum())
            a = y + 1.0 + rng.exponential(5.0)
            nx, ny = first_exit(kind, a, x, z), first_exit(kind, a, y, z)
            exit_v += int((nx or math.inf) < (ny or math.inf))
        counts[kind.value] = (path_v, exit_v)
    criterion(" ".join(f"{k}: {p}/{e}" for k, (p, e) in counts.items()) + " (path/exit violations)")
    assert all(c == (0, 0) for c in counts.values())


def test_criterion_09_kesten_tail(criterion):
    st = stationary_distribution(SR, ExponentialScaleModel(3.0), 4000, 2000.0, breakpoints=(20.0, 40.0))
    fit = tail_exponent_estimate(st.distribution, (20.0, 200.0))
    criterion(f"slope={fit.slope:.4f} r2={fit.r_squared:.5f} leakage={st.leakage:.2e}")
    assert -1.15 <= fit.slope <= -0.85 and fit.r_squared >= 0.98


def test_criterion_10_mgf(reference_sample, criterion):
    t = (-1.0, 0.25, 0.45)
    rows = {a: empirical_mgf(standardize(reference_sample(SR, a)), t) for a in (20.0, 100.0)}
    rel = {a: np.abs(r[:, 1] / r[:, 2] - 1) for a, r in rows.items()}
    criterion(
        "rel err A=100: " + ", ".join(f"t={ti:g}:{e:.4f}" for ti, e in zip(t, rel[100.0]))
        + f"; t=0.45 A=20:{rel[20.0][2]:.4f}"
    )
    assert (rel[100.0] <= 0.05).all() and rel[100.0][2] < rel[20.0][2]


def _data_files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.name != "manifest.json"}


def test_criterion_11_determinism(tmp_path, criterion):
    cfg_run = tmp_path / "run.cfg"
    cfg_run.write_text("statistic = sr\nmodel.q = 3\nthreshold = 10\nreplications = 10000\nseed = 5\n"
                       "outputs = samples, qq, survival, mgf\n")
    cfg_qsd = tmp_path / "qsd.cfg"
    cfg_qsd.write_text("statistic = sr\nmodel.q = 3\nthreshold = 20\ngrid_cells = 500\ncompare = true\n"
                       "replications = 10000\nseed = 5\n")
    commands = {
        "run": ["run", str(cfg_run)],
        "table": ["table", "--which", "2", "--reps", "5000"],
        "qsd": ["qsd", str(cfg_qsd)],
        "figures": ["figures", "--desk"],
    }
    identical = {}
    for name, argv in commands.items():
        outputs = []
        for run, workers in enumerate((1, 8, 1)):
            d = tmp_path / f"{name}-{run}"
            assert main([*argv, "--workers", str(workers), "--out-dir", str(d)]) == 0
            outputs.append(_data_files(d))
        identical[name] = bool(outputs[0]) and all(o == outputs[0] for o in outputs)
    criterion(" ".join(f"{k}={'identical' if v else 'DIFFERENT'}" for k, v in identical.items()))
    assert all(identical.values())
