"""Command-line runner: ``firstexit {run,table,qsd,figures}``.

Configs are flat ``key = value`` text files; ``#`` starts a comment. Exit codes:
0 success, 2 configuration error, 3 numerical non-convergence, 4 precondition
violation.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .approx import arl_sr_approx, fo_arl_cusum, ho_arl_cusum
from .engine import DEFAULT_SEED, ExperimentConfig, run_experiment, summarize
from .errors import ConfigError, FirstExitError
from .model import ExponentialScaleModel, Regime
from .output import write_csv, write_json, write_manifest
from .qsd import GridKernel, build_grid_kernel, qsd_power_iteration
from .reproduce import DESK_REPS, FULL_REPS, TABLE_COLUMNS, experiment, table
from .statistic import DEFAULT_CAP, StatisticKind

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
_ALIASES = {"sr": "shiryaev-roberts", "cusum": "cusum-log", "cusum-exp": "cusum-exp-scale"}


def _bool(s):
    try:
        return _BOOL[s.lower()]
    except KeyError:
        raise ValueError(f"expected true/false, got {s!r}") from None


def _str_list(s):
    return [p.strip() for p in s.split(",") if p.strip()]


def _float_list(s):
    return [float(p) for p in _str_list(s)]


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


_COMMON = {
    "statistic": (str, None),
    "model.kind": (str, "exponential-scale"),
    "model.q": (float, None),
    "threshold": (float, None),
    "initial_state": (float, None),
    "regime": (str, "pre"),
    "replications": (_int, None),
    "seed": (_int, DEFAULT_SEED),
    "workers": (_int, 1),
}
RUN_KEYS = {
    **_COMMON,
    "censor_cap": (_int, DEFAULT_CAP),
    "outputs": (_str_list, []),
    "literal_wst": (_bool, False),
    "qq_points": (_int, 1000),
    "survival_step": (float, 0.25),
    "survival_max": (float, 5.0),
    "mgf_t": (_float_list, list(dg.DEFAULT_MGF_T)),
}
QSD_KEYS = {
    **_COMMON,
    "grid_cells": (_int, 2000),
    "scheme": (str, "midpoint"),
    "spacing": (str, "auto"),
    "tolerance": (float, 1e-10),
    "max_iter": (_int, 10**6),
    "compare": (_bool, False),
    "refine": (_bool, False),
    "matrix": (str, None),
}
FIGURE_KEYS = {
    "model.q": (float, 3.0),
    "cusum_threshold": (float, 13.0),
    "sr_threshold": (float, 40.0),
    "replications": (_int, None),
    "seed": (_int, DEFAULT_SEED),
    "workers": (_int, 1),
    "qq_points": (_int, 1000),
    "survival_step": (float, 0.25),
    "survival_max": (float, 5.0),
}
RUN_OUTPUTS = {"samples", "qq", "survival", "mgf"}


def parse_config(text: str, schema: dict) -> dict:
    """Parse ``key = value`` lines against ``schema`` (key -> (converter, default))."""
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r} (allowed: {', '.join(sorted(schema))})")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            seen[key] = schema[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: key {key!r}: {exc}") from None
    return {k: seen.get(k, default) for k, (_, default) in schema.items()}


def load_config(path, schema) -> dict:
    if path is None:
        return parse_config("", schema)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, schema)


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ConfigError(f"missing required key {k!r}")


def _statistic(cfg):
    name = _ALIASES.get(cfg["statistic"], cfg["statistic"])
    try:
        kind = StatisticKind(name)
    except ValueError:
        raise ConfigError(f"key 'statistic': unknown statistic {cfg['statistic']!r}") from None
    if cfg.get("literal_wst") and kind is StatisticKind.CUSUM_EXP:
        kind = StatisticKind.CUSUM_EXP_ADDITIVE
    return kind


def _model(cfg):
    if cfg["model.kind"] != "exponential-scale":
        raise ConfigError(f"key 'model.kind': unknown model {cfg['model.kind']!r} (built-in: exponential-scale)")
    _require(cfg, "model.q")
    return ExponentialScaleModel(cfg["model.q"])


def _apply_flags(cfg, args):
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.reps is not None:
        cfg["replications"] = args.reps
    elif cfg.get("replications") is None:
        cfg["replications"] = DESK_REPS if args.desk else FULL_REPS
    return cfg


def _experiment_config(cfg):
    _require(cfg, "statistic", "threshold")
    return ExperimentConfig(
        statistic=_statistic(cfg),
        model=_model(cfg),
        threshold=cfg["threshold"],
        initial_state=cfg["initial_state"],
        regime=cfg["regime"],
        replications=cfg["replications"],
        master_seed=cfg["seed"],
        workers=cfg["workers"],
        censor_cap=cfg.get("censor_cap", DEFAULT_CAP),
    )


def _echo(config: ExperimentConfig):
    d = config.to_dict()
    del d["workers"]
    return d


def _approximations(config: ExperimentConfig):
    model = config.model
    if not isinstance(model, ExponentialScaleModel) or config.regime is not Regime.PRE:
        return {}
    kind, a, q = config.statistic, config.threshold, model.q
    if kind is StatisticKind.SHIRYAEV_ROBERTS:
        return {"arl_sr": arl_sr_approx(q, a)}
    if kind is StatisticKind.CUSUM_EXP:
        return {"fo_arl_cusum": fo_arl_cusum(q, a), "ho_arl_cusum": ho_arl_cusum(q, a)}
    if kind is StatisticKind.CUSUM:
        return {"fo_arl_cusum": fo_arl_cusum(q, math.exp(a)), "ho_arl_cusum": ho_arl_cusum(q, math.exp(a))}
    return {}


def _survival_grid(cfg):
    n = int(round(cfg["survival_max"] / cfg["survival_step"]))
    return np.arange(n + 1) * cfg["survival_step"]


def _qq_rows(sample, std, k):
    pairs = dg.qq_data(std, min(k, std.values.size))
    raw = dg.qq_data(sample.values.astype(float), len(pairs))
    return [(t, s, r) for (t, s), (_, r) in zip(pairs, raw)]


def cmd_run(args) -> int:
    cfg = _apply_flags(load_config(args.config, RUN_KEYS), args)
    unknown = set(cfg["outputs"]) - RUN_OUTPUTS
    if unknown:
        raise ConfigError(f"key 'outputs': unknown output(s) {sorted(unknown)} (allowed: {sorted(RUN_OUTPUTS)})")
    config = _experiment_config(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sample = run_experiment(config)
    stats = summarize(sample)
    std = dg.standardize(sample)
    meta = {"fingerprint": config.fingerprint(), "statistic": config.statistic.value,
            "threshold": config.threshold, "seed": config.master_seed}
    result = {
        "fingerprint": config.fingerprint(),
        "config": _echo(config),
        "summary": stats.to_dict(),
        "diagnostics": {
            "sd_over_mean": dg.moment_diagnostic(stats),
            "ks_distance": dg.ks_stat_exp1(std)[0],
            "qq_slope": dg.qq_slope(std, min(cfg["qq_points"], std.values.size)),
        },
        "approximations": _approximations(config),
    }
    files = [write_json(out / "summary.json", result)]
    if "samples" in cfg["outputs"]:
        rows = enumerate(sample.raw.tolist())
        files.append(write_csv(out / "samples.csv", ("replication", "exit_time"), rows,
                               {**meta, "censored_marker": 0}))
    if "qq" in cfg["outputs"]:
        files.append(write_csv(out / "qq.csv", ("exp1_quantile", "standardized_quantile", "raw_quantile"),
                               _qq_rows(sample, std, cfg["qq_points"]), meta))
    if "survival" in cfg["outputs"]:
        files.append(write_csv(out / "survival.csv", ("y", "log_survival", "survivors"),
                               dg.survival_curve(std, _survival_grid(cfg)).tolist(), meta))
    if "mgf" in cfg["outputs"]:
        files.append(write_csv(out / "mgf.csv", ("t", "empirical", "exp1"),
                               dg.empirical_mgf(std, cfg["mgf_t"]).tolist(), meta))
    write_manifest(out, "run", {**cfg, "workers": config.workers}, config.master_seed,
                   time.perf_counter() - t0, files)
    print(
        f"{config.statistic.value} A={config.threshold:g} R={config.replications}: "
        f"mean={stats.mean:.2f} sd={stats.sd:.2f} se={stats.standard_error:.2f} "
        f"p_hat={stats.p_hat:.6g} censored={sample.censored_count}"
    )
    return 0


def cmd_table(args) -> int:
    which = int(args.which)
    reps = args.reps if args.reps is not None else (DESK_REPS if args.desk else FULL_REPS)
    if reps < 1000:
        raise ConfigError(f"table reproduction needs at least 1000 replications, got {reps}")
    seed = DEFAULT_SEED if args.seed is None else args.seed
    workers = args.workers or 1
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = table(which, reps, seed, workers)
    meta = {"table": which, "q": 3.0, "replications": reps, "seed": seed}
    f = write_csv(out / f"table{which}.csv", TABLE_COLUMNS[which], rows, meta)
    write_manifest(out, "table", {**meta, "workers": workers}, seed, time.perf_counter() - t0, [f])
    for row in rows:
        print("  ".join(f"{v:10.2f}" for v in row))
    return 0


def _parse_matrix(text):
    try:
        return np.array([[float(v) for v in row.split()] for row in text.split(";")])
    except ValueError as exc:
        raise ConfigError(f"key 'matrix': {exc}") from None


def cmd_qsd(args) -> int:
    cfg = _apply_flags(load_config(args.config, QSD_KEYS), args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    report = {"tolerance": cfg["tolerance"]}
    if cfg["matrix"] is not None:
        if cfg["compare"] or cfg["refine"]:
            raise ConfigError("compare/refine need a model-based kernel, not an explicit matrix")
        kernel = GridKernel.from_matrix(_parse_matrix(cfg["matrix"]))
        report["source"] = "matrix"
    else:
        _require(cfg, "statistic", "threshold")
        kind, model = _statistic(cfg), _model(cfg)
        kernel = build_grid_kernel(kind, model, cfg["threshold"], cfg["grid_cells"], cfg["scheme"],
                                   cfg["regime"], spacing=cfg["spacing"])
        report.update(source="model", statistic=kind.value, model=model.to_dict(),
                      threshold=cfg["threshold"], grid_cells=kernel.m, scheme=cfg["scheme"])
    res = qsd_power_iteration(kernel, tolerance=cfg["tolerance"], max_iter=cfg["max_iter"])
    report.update(p_a=res.p_a, iterations=res.iterations, residual=res.residual)
    if cfg["refine"]:
        fine = build_grid_kernel(kind, model, cfg["threshold"], 2 * cfg["grid_cells"], cfg["scheme"],
                                 cfg["regime"], spacing=cfg["spacing"])
        p2 = qsd_power_iteration(fine, tolerance=cfg["tolerance"], max_iter=cfg["max_iter"]).p_a
        report.update(p_a_refined=p2, refine_relative_change=abs(p2 - res.p_a) / res.p_a)
    if cfg["compare"]:
        config = _experiment_config(cfg)
        stats = summarize(run_experiment(config))
        report.update(mc_replications=config.replications, mc_seed=config.master_seed, mc_mean=stats.mean,
                      mc_standard_error=stats.standard_error, p_a_times_mean=res.p_a * stats.mean)
    files = [
        write_csv(out / "qsd.csv", ("cell_upper_edge", "mass"),
                  zip(kernel.cell_edges[1:].tolist(), res.distribution.masses.tolist()),
                  {"p_a": res.p_a, "iterations": res.iterations}),
        write_json(out / "qsd.json", report),
    ]
    write_manifest(out, "qsd", cfg, cfg["seed"], time.perf_counter() - t0, files)
    line = f"p_a={res.p_a:.8g} iterations={res.iterations} residual={res.residual:.3g}"
    if "p_a_times_mean" in report:
        line += f" p_a*mean={report['p_a_times_mean']:.4f}"
    print(line)
    return 0


def cmd_figures(args) -> int:
    cfg = _apply_flags(load_config(args.config, FIGURE_KEYS), args)
    if cfg["replications"] < 10_000:
        raise ConfigError(f"figure data needs at least 10000 replications, got {cfg['replications']}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = []
    grid = _survival_grid(cfg)
    for name, kind, a in (("cusum", StatisticKind.CUSUM_EXP, cfg["cusum_threshold"]),
                          ("sr", StatisticKind.SHIRYAEV_ROBERTS, cfg["sr_threshold"])):
        config = experiment(kind, a, cfg["replications"], cfg["seed"], cfg["workers"], cfg["model.q"])
        sample = run_experiment(config)
        std = dg.standardize(sample)
        meta = {"fingerprint": config.fingerprint(), "statistic": kind.value, "threshold": a,
                "seed": config.master_seed, "replications": config.replications}
        files.append(write_csv(out / f"qq_{name}.csv", ("exp1_quantile", "standardized_quantile", "raw_quantile"),
                               _qq_rows(sample, std, cfg["qq_points"]), meta))
        curve = dg.survival_curve(std, grid)
        files.append(write_csv(out / f"survival_{name}.csv", ("y", "log_survival", "survivors"),
                               curve.tolist(), meta))
        print(f"{name}: A={a:g} ks={dg.ks_stat_exp1(std)[0]:.4f} qq_slope={dg.qq_slope(std):.4f} "
              f"survival_slope={dg.survival_slope(curve):.4f}")
    write_manifest(out, "figures", cfg, cfg["seed"], time.perf_counter() - t0, files)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")
    common.add_argument("--reps", type=int, default=None, help="replications per experiment")
    common.add_argument("--desk", action="store_true", help=f"desk scale: {DESK_REPS} replications")
    common.add_argument("--out-dir", default=".", help="directory for data files")
    common.add_argument("--workers", type=int, default=None, help="worker processes")

    parser = argparse.ArgumentParser(prog="firstexit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="single exit-time experiment")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("table", parents=[common], help="ARL-versus-threshold table (q = 3)")
    p.add_argument("--which", choices=["1", "2"], required=True, help="1: CUSUM, 2: Shiryaev-Roberts")
    p.set_defaults(func=cmd_table)
    p = sub.add_parser("qsd", parents=[common], help="quasi-stationary distribution on a grid")
    p.add_argument("config")
    p.set_defaults(func=cmd_qsd)
    p = sub.add_parser("figures", parents=[common], help="QQ and log-survival data at the reference settings")
    p.add_argument("config", nargs="?")
    p.set_defaults(func=cmd_figures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FirstExitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
