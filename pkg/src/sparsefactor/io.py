"""CSV / JSON input and output: panels, matrices, fitted estimates and reports."""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from .exceptions import InvalidInputError
from .panel import PanelData
from .simharness import MonteCarloReport

#: All numeric output uses 12 significant digits, locale independent.
FLOAT_FMT = "%.12g"


def format_float(x: float) -> str:
    return FLOAT_FMT % float(x)


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in M:
            fh.write(",".join(format_float(v) for v in row))
            fh.write("\n")


def read_matrix_csv(path, skip_header: bool = False) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1 if skip_header else 0, ndmin=2)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read matrix from {path}: {exc}") from exc
    return data


def read_panel_csv(path, header: bool = False) -> PanelData:
    """Panel CSV: rows are time points, columns are series; optional header row."""
    return PanelData(read_matrix_csv(path, skip_header=header))


def write_panel_csv(path, panel: PanelData) -> None:
    write_matrix_csv(path, panel.Y)


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_estimate_dir(outdir, loadings, factors, sigma_u, metadata: dict) -> None:
    """Serialize a fit as loadings.csv / factors.csv / sigma_u.csv plus metadata.json."""
    os.makedirs(outdir, exist_ok=True)
    write_matrix_csv(os.path.join(outdir, "loadings.csv"), loadings)
    write_matrix_csv(os.path.join(outdir, "factors.csv"), factors)
    write_matrix_csv(os.path.join(outdir, "sigma_u.csv"), sigma_u)
    write_json(os.path.join(outdir, "metadata.json"), _jsonable(metadata))


def read_estimate_dir(outdir):
    loadings = read_matrix_csv(os.path.join(outdir, "loadings.csv"))
    factors = read_matrix_csv(os.path.join(outdir, "factors.csv"))
    sigma_u = read_matrix_csv(os.path.join(outdir, "sigma_u.csv"))
    with open(os.path.join(outdir, "metadata.json")) as fh:
        metadata = json.load(fh)
    return loadings, factors, sigma_u, metadata


def write_support_csv(path, sigma_u) -> None:
    """0/1 pattern of the off-diagonal support of a sparse covariance."""
    S = np.asarray(sigma_u, dtype=float)
    pattern = (np.abs(S) > 0).astype(int)
    np.fill_diagonal(pattern, 1)
    with open(path, "w", newline="") as fh:
        for row in pattern:
            fh.write(",".join(str(v) for v in row))
            fh.write("\n")


def write_curve_csv(path, pairs) -> None:
    """Two-column CSV of (C, lambda_min) pairs."""
    with open(path, "w", newline="") as fh:
        fh.write("C,lambda_min\n")
        for c, lam in pairs:
            fh.write(f"{format_float(c)},{format_float(lam)}\n")


REPORT_COLUMNS = (
    "T",
    "N",
    "estimator",
    "reps",
    "failed",
    "loadings_mean",
    "loadings_se",
    "factors_mean",
    "factors_se",
)


def report_to_csv(report: MonteCarloReport) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for row in report.rows:
        lines.append(
            ",".join(
                [
                    str(row.t),
                    str(row.n),
                    row.estimator,
                    str(row.n_reps),
                    str(row.n_failed),
                    format_float(row.loadings_mean),
                    format_float(row.loadings_se),
                    format_float(row.factors_mean),
                    format_float(row.factors_se),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def write_report_csv(path, report: MonteCarloReport) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(report_to_csv(report))


def write_report_json(path, report: MonteCarloReport) -> None:
    payload = {
        "master_seed": report.master_seed,
        "reps": report.reps,
        "cells": [
            {
                "T": row.t,
                "N": row.n,
                "estimator": row.estimator,
                "config": _jsonable(asdict(row.config)),
                "n_reps": row.n_reps,
                "n_failed": row.n_failed,
                "failed": row.failed,
                "loadings_mean": _jsonable(row.loadings_mean),
                "loadings_se": _jsonable(row.loadings_se),
                "factors_mean": _jsonable(row.factors_mean),
                "factors_se": _jsonable(row.factors_se),
                "replications": [_jsonable(asdict(rec)) for rec in row.replications],
            }
            for row in report.rows
        ],
    }
    write_json(path, payload)
