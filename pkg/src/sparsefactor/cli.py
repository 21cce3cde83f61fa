"""Command-line front end: estimate panels, reproduce the simulation tables, export curves.

Exit codes: 0 success, 2 input error, 3 numerical/solver failure, 4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as sfio
from .exceptions import ConfigError, FactorModelError, InvalidInputError
from .jointpml import dml_estimate, joint_estimate
from .panel import PanelData
from .pca import pca_estimate
from .poet import min_eigen_curve, _max_killing_constant
from .simharness import (
    DEFAULT_COEFF_SIGMA,
    EstimatorConfig,
    generate_dgp,
    monte_carlo,
    table_grid,
)
from .twostep import twostep_estimate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4

_ESTIMATOR_KEYS = (
    "method",
    "r",
    "C",
    "kernel",
    "adaptive",
    "scad_a",
    "max_outer",
    "penalty",
    "gamma",
    "mu_T",
    "delta_T",
    "weights",
    "max_iter",
    "tol",
)

_ESTIMATOR_DEFAULTS = {
    "method": "pca",
    "r": 2,
    "C": 1.0,
    "kernel": "scad",
    "adaptive": "correlation",
    "scad_a": 3.7,
    "max_outer": 10,
    "penalty": "adaptive_lasso",
    "gamma": 1.0,
    "mu_T": 0.08,
    "delta_T": 0.0,
    "weights": "fixed",
    "max_iter": 500,
    "tol": 1e-6,
}

DEFAULTS = {
    "estimate": {
        "input": None,
        "header": False,
        "out": "fit",
        **_ESTIMATOR_DEFAULTS,
    },
    "simulate": {
        "t": 100,
        "n": 150,
        "reps": 1,
        "seed": 0,
        "jobs": 0,
        "out": "report",
        "coeff_sigma": DEFAULT_COEFF_SIGMA,
        "fixed_design": False,
        **_ESTIMATOR_DEFAULTS,
    },
    "replicate-tables": {
        "reps": 200,
        "seed": 0,
        "jobs": 0,
        "out": "tables",
        "cells": "",
        "coeff_sigma": DEFAULT_COEFF_SIGMA,
    },
    "eigen-curve": {
        "input": None,
        "header": False,
        "dgp_t": 100,
        "dgp_n": 150,
        "dgp_seed": 0,
        "coeff_sigma": DEFAULT_COEFF_SIGMA,
        "r": 2,
        "kernels": "hard,scad",
        "adaptive": "correlation",
        "scad_a": 3.7,
        "c_grid": "0:0.05:auto",
        "out": "curves",
    },
}


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=["pca", "dml", "twostep", "jointpml"])
    p.add_argument("--r", type=int, help="number of factors")
    p.add_argument("--C", type=float, help="threshold constant (twostep)")
    p.add_argument("--kernel", choices=["hard", "soft", "scad"])
    p.add_argument("--adaptive", choices=["universal", "correlation"])
    p.add_argument("--scad-a", dest="scad_a", type=float, help="SCAD shape parameter")
    p.add_argument("--max-outer", dest="max_outer", type=int, help="outer refinement passes (twostep)")
    p.add_argument("--penalty", choices=["lasso", "adaptive_lasso", "scad"])
    p.add_argument("--gamma", type=float, help="adaptive-lasso exponent")
    p.add_argument("--mu-T", dest="mu_T", type=float, help="penalty tuning constant")
    p.add_argument("--delta-T", dest="delta_T", type=float, help="adaptive-lasso offset")
    p.add_argument("--weights", choices=["fixed", "iterative"])
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsefactor",
        description="Regularized maximum-likelihood estimation of approximate factor models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("estimate", help="fit an estimator to a CSV panel")
    pe.add_argument("--config", help="JSON config file; flags override its keys")
    pe.add_argument("--input", help="panel CSV (rows = time points, columns = series)")
    pe.add_argument("--header", action=argparse.BooleanOptionalAction, default=None)
    pe.add_argument("--out", help="output directory for the fitted estimate")
    _add_estimator_flags(pe)

    ps = sub.add_parser("simulate", help="Monte Carlo cells on the banded-noise design")
    ps.add_argument("--config", help="JSON config file; flags override its keys")
    ps.add_argument("--t", type=int, help="time periods")
    ps.add_argument("--n", type=int, help="series count")
    ps.add_argument("--reps", type=int)
    ps.add_argument("--seed", type=int)
    ps.add_argument("--jobs", type=int, help="parallel workers (0 = all cores)")
    ps.add_argument("--out", help="output directory")
    ps.add_argument("--coeff-sigma", dest="coeff_sigma", type=float)
    ps.add_argument("--fixed-design", dest="fixed_design", action=argparse.BooleanOptionalAction, default=None)
    _add_estimator_flags(ps)

    pt = sub.add_parser("replicate-tables", help="reproduce the simulation tables")
    pt.add_argument("--config", help="JSON config file; flags override its keys")
    pt.add_argument("--reps", type=int)
    pt.add_argument("--seed", type=int)
    pt.add_argument("--jobs", type=int)
    pt.add_argument("--out")
    pt.add_argument("--cells", help='subset filter like "100x150,50x100" (TxN); empty = full grid')
    pt.add_argument("--coeff-sigma", dest="coeff_sigma", type=float)

    pc = sub.add_parser("eigen-curve", help="minimum eigenvalue of the thresholded covariance vs C")
    pc.add_argument("--config", help="JSON config file; flags override its keys")
    pc.add_argument("--input", help="panel CSV; omit to simulate a panel")
    pc.add_argument("--header", action=argparse.BooleanOptionalAction, default=None)
    pc.add_argument("--dgp-t", dest="dgp_t", type=int)
    pc.add_argument("--dgp-n", dest="dgp_n", type=int)
    pc.add_argument("--dgp-seed", dest="dgp_seed", type=int)
    pc.add_argument("--coeff-sigma", dest="coeff_sigma", type=float)
    pc.add_argument("--r", type=int)
    pc.add_argument("--kernels", help="comma-separated kernels, e.g. hard,scad")
    pc.add_argument("--adaptive", choices=["universal", "correlation"])
    pc.add_argument("--scad-a", dest="scad_a", type=float)
    pc.add_argument("--c-grid", dest="c_grid", help='grid "start:step:stop"; stop may be "auto"')
    pc.add_argument("--out")

    return parser


def merge_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(file_cfg)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _estimator_config(cfg: dict) -> EstimatorConfig:
    try:
        return EstimatorConfig(**{k: cfg[k] for k in _ESTIMATOR_KEYS})
    except FactorModelError:
        raise
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _dump_effective_config(outdir: str, command: str, cfg: dict) -> None:
    os.makedirs(outdir, exist_ok=True)
    sfio.write_json(os.path.join(outdir, "effective_config.json"), {"command": command, **cfg})


def cmd_estimate(cfg: dict) -> int:
    if not cfg["input"]:
        print("estimate: --input is required", file=sys.stderr)
        return EXIT_CONFIG
    config = _estimator_config(cfg)
    try:
        panel = sfio.read_panel_csv(cfg["input"], header=bool(cfg["header"]))
    except (OSError, InvalidInputError) as exc:
        print(f"estimate: cannot read panel: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        if config.method == "pca":
            fit = pca_estimate(panel, config.r)
            loadings, factors, sigma_u = fit.loadings, fit.factors, fit.residual_cov
            iters, objective, extra = 1, float("nan"), {}
        else:
            if config.method == "dml":
                est = dml_estimate(panel, config.r, max_iter=config.max_iter, tol=config.tol)
            elif config.method == "twostep":
                est = twostep_estimate(
                    panel, config.r, config.threshold_rule(), max_outer=config.max_outer, tol=config.tol
                )
            else:
                est = joint_estimate(
                    panel, config.r, config.penalty_spec(), max_iter=config.max_iter, tol=config.tol
                )
            loadings, factors, sigma_u = est.loadings, est.factors, est.Sigma_u
            iters, objective = est.iterations, est.objective
            extra = {
                "objective_trace": list(est.objective_trace),
                "trace_breaks": list(est.trace_breaks),
                "converged": est.converged,
                "diagnostics": est.diagnostics,
            }
    except FactorModelError as exc:
        print(f"estimate: {config.method} failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    outdir = cfg["out"]
    metadata = {
        "method": config.method,
        "r": config.r,
        "iterations": iters,
        "objective": objective,
        "T": panel.T,
        "N": panel.N,
        **extra,
    }
    sfio.write_estimate_dir(outdir, loadings, factors, sigma_u, metadata)
    if config.method == "jointpml":
        sfio.write_support_csv(os.path.join(outdir, "support.csv"), sigma_u)
    _dump_effective_config(outdir, "estimate", cfg)
    obj_str = sfio.format_float(objective) if np.isfinite(objective) else "nan"
    print(f"method={config.method} r={config.r} iterations={iters} objective={obj_str} out={outdir}")
    return EXIT_OK


def _write_report(outdir: str, report) -> None:
    os.makedirs(outdir, exist_ok=True)
    sfio.write_report_csv(os.path.join(outdir, "report.csv"), report)
    sfio.write_report_json(os.path.join(outdir, "report.json"), report)


def cmd_simulate(cfg: dict) -> int:
    if cfg["reps"] < 1:
        print("simulate: need --reps >= 1", file=sys.stderr)
        return EXIT_CONFIG
    config = _estimator_config(cfg)
    try:
        report = monte_carlo(
            [(cfg["t"], cfg["n"], config)],
            reps=cfg["reps"],
            master_seed=cfg["seed"],
            jobs=cfg["jobs"] or None,
            coeff_sigma=cfg["coeff_sigma"],
            fixed_design=bool(cfg["fixed_design"]),
        )
    except FactorModelError as exc:
        print(f"simulate: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _write_report(cfg["out"], report)
    _dump_effective_config(cfg["out"], "simulate", cfg)
    for row in report.rows:
        print(
            f"T={row.t} N={row.n} {row.estimator}: loadings={sfio.format_float(row.loadings_mean)} "
            f"factors={sfio.format_float(row.factors_mean)} failed={row.n_failed}/{row.n_reps}"
        )
    return EXIT_OK


def _parse_cells(spec: str):
    cells = set()
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            t_str, n_str = chunk.lower().split("x")
            cells.add((int(t_str), int(n_str)))
        except ValueError as exc:
            raise ConfigError(f'bad cell "{chunk}"; expected TxN like 100x150') from exc
    return cells


def cmd_replicate_tables(cfg: dict) -> int:
    if cfg["reps"] < 1:
        print("replicate-tables: need --reps >= 1", file=sys.stderr)
        return EXIT_CONFIG
    grid = table_grid()
    wanted = _parse_cells(cfg["cells"]) if cfg["cells"] else None
    if wanted is not None:
        grid = [cell for cell in grid if (cell[0], cell[1]) in wanted]
        if not grid:
            print(f'replicate-tables: no grid cells match "{cfg["cells"]}"', file=sys.stderr)
            return EXIT_CONFIG
    try:
        report = monte_carlo(
            grid,
            reps=cfg["reps"],
            master_seed=cfg["seed"],
            jobs=cfg["jobs"] or None,
            coeff_sigma=cfg["coeff_sigma"],
        )
    except FactorModelError as exc:
        print(f"replicate-tables: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _write_report(cfg["out"], report)
    _dump_effective_config(cfg["out"], "replicate-tables", cfg)
    print(sfio.report_to_csv(report), end="")
    return EXIT_OK


def _parse_c_grid(spec: str, c_max: float) -> np.ndarray:
    try:
        start_s, step_s, stop_s = spec.split(":")
        start, step = float(start_s), float(step_s)
        stop = c_max if stop_s.strip().lower() == "auto" else float(stop_s)
    except ValueError as exc:
        raise ConfigError(f'bad C grid "{spec}"; expected "start:step:stop"') from exc
    if step <= 0 or stop < start:
        raise ConfigError(f'bad C grid "{spec}": need step > 0 and stop >= start')
    return np.arange(start, stop + 0.5 * step, step)


def cmd_eigen_curve(cfg: dict) -> int:
    if cfg["input"]:
        try:
            panel = sfio.read_panel_csv(cfg["input"], header=bool(cfg["header"]))
        except (OSError, InvalidInputError) as exc:
            print(f"eigen-curve: cannot read panel: {exc}", file=sys.stderr)
            return EXIT_INPUT
    else:
        panel = generate_dgp(
            cfg["dgp_n"], cfg["dgp_t"], cfg["dgp_seed"], coeff_sigma=cfg["coeff_sigma"]
        ).panel
    kernels = [k.strip() for k in cfg["kernels"].split(",") if k.strip()]
    if not kernels:
        print("eigen-curve: no kernels requested", file=sys.stderr)
        return EXIT_CONFIG
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    try:
        R = pca_estimate(panel, cfg["r"]).residual_cov
        c_max = _max_killing_constant(R, cfg["adaptive"], panel.N, panel.T)
        grid = _parse_c_grid(cfg["c_grid"], c_max)
        for kernel in kernels:
            pairs = min_eigen_curve(panel, cfg["r"], kernel, cfg["adaptive"], grid, a=cfg["scad_a"])
            sfio.write_curve_csv(os.path.join(outdir, f"eigen_curve_{kernel}.csv"), pairs)
            print(f"{kernel}: {len(pairs)} grid points -> eigen_curve_{kernel}.csv")
    except FactorModelError as exc:
        print(f"eigen-curve: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _dump_effective_config(outdir, "eigen-curve", cfg)
    return EXIT_OK


_COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "replicate-tables": cmd_replicate_tables,
    "eigen-curve": cmd_eigen_curve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_config(args.command, args)
    except ConfigError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FactorModelError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
