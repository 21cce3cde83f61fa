"""Entry-adaptive thresholding of the residual covariance (POET-style estimator)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DefinitenessError,
    InvalidInputError,
    ParameterError,
    SearchFailureError,
)
from .panel import PanelData
from .pca import pca_estimate

KERNELS = ("hard", "soft", "scad")
ADAPTIVE_KINDS = ("universal", "correlation")


@dataclass(frozen=True)
class ThresholdRule:
    """Thresholding kernel + adaptive threshold form + universal constant C.

    ``a`` is the SCAD shape parameter, only used when kernel == "scad".
    C = 0 disables thresholding entirely (useful on eigenvalue-curve grids);
    estimation normally requires C above the positive-definiteness constant.
    """

    kernel: str = "scad"
    adaptive: str = "correlation"
    C: float = 1.0
    a: float = 3.7

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ParameterError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.adaptive not in ADAPTIVE_KINDS:
            raise ParameterError(f"adaptive must be one of {ADAPTIVE_KINDS}, got {self.adaptive!r}")
        if not self.C >= 0:
            raise ParameterError(f"threshold constant C must be >= 0, got {self.C}")
        if self.kernel == "scad" and not self.a > 2:
            raise ParameterError(f"SCAD parameter a must exceed 2, got {self.a}")


@dataclass(frozen=True)
class SparseCovEstimate:
    """Thresholded covariance with the rule that produced it and PD/support diagnostics."""

    Sigma: np.ndarray
    rule: ThresholdRule
    min_eigenvalue: float
    support_size: int


def threshold_value(z, tau, kernel: str = "scad", a: float = 3.7):
    """Apply a thresholding kernel entrywise; scalars or arrays broadcast.

    hard: z 1{|z| > tau};  soft: sign(z)(|z| - tau)_+;
    scad: soft for |z| <= 2 tau, linear interpolation on (2 tau, a tau],
    identity beyond a tau.
    """
    z = np.asarray(z, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ParameterError("threshold tau must be nonnegative")
    if kernel == "hard":
        out = np.where(np.abs(z) > tau, z, 0.0)
    elif kernel == "soft":
        out = np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
    elif kernel == "scad":
        if not a > 2:
            raise ParameterError(f"SCAD parameter a must exceed 2, got {a}")
        az = np.abs(z)
        soft = np.sign(z) * np.maximum(az - tau, 0.0)
        mid = ((a - 1.0) * z - np.sign(z) * a * tau) / (a - 2.0)
        out = np.where(az <= 2.0 * tau, soft, np.where(az <= a * tau, mid, z))
    else:
        raise ParameterError(f"unknown kernel {kernel!r}")
    return out if out.ndim else float(out)


def adaptive_tau(R: np.ndarray, rule: ThresholdRule, n: int, t: int) -> np.ndarray:
    """Entry thresholds tau_ij = C alpha_ij (1/sqrt(N) + sqrt(log N / T)).

    universal: alpha_ij = 1; correlation: alpha_ij = sqrt(R_ii R_jj).
    Diagonal thresholds are zero: the diagonal is never shrunk.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (n, n):
        raise InvalidInputError(f"R must be {n}x{n}, got {R.shape}")
    omega = 1.0 / np.sqrt(n) + np.sqrt(np.log(n) / t)
    if rule.adaptive == "universal":
        tau = np.full((n, n), rule.C * omega)
    else:
        d = np.diag(R)
        if np.any(d <= 0):
            raise InvalidInputError("correlation-adaptive thresholds need a positive diagonal")
        sd = np.sqrt(d)
        tau = rule.C * np.outer(sd, sd) * omega
    np.fill_diagonal(tau, 0.0)
    return tau


def _threshold_residual_cov(R: np.ndarray, rule: ThresholdRule, n: int, t: int) -> np.ndarray:
    """Threshold off-diagonals of R, keep its diagonal, mirror the upper triangle."""
    tau = adaptive_tau(R, rule, n, t)
    S = threshold_value(R, tau, rule.kernel, rule.a)
    upper = np.triu(S, 1)
    S = upper + upper.T
    np.fill_diagonal(S, np.diag(R))
    return S


def poet_estimate(panel: PanelData, r: int, rule: ThresholdRule) -> SparseCovEstimate:
    """Threshold the rank-r PCA residual covariance entry by entry."""
    R = pca_estimate(panel, r).residual_cov
    S = _threshold_residual_cov(R, rule, panel.N, panel.T)
    lam_min = float(np.linalg.eigvalsh(S)[0])
    off = S.copy()
    np.fill_diagonal(off, 0.0)
    support = int(np.count_nonzero(off))
    return SparseCovEstimate(S, rule, lam_min, support)


def _max_killing_constant(R: np.ndarray, adaptive: str, n: int, t: int) -> float:
    """Smallest C for which every off-diagonal entry falls below its threshold."""
    omega = 1.0 / np.sqrt(n) + np.sqrt(np.log(n) / t)
    absR = np.abs(R).copy()
    np.fill_diagonal(absR, 0.0)
    if adaptive == "universal":
        ratio = absR / omega
    else:
        sd = np.sqrt(np.diag(R))
        ratio = absR / (np.outer(sd, sd) * omega)
    return float(ratio.max())


def find_min_positive_C(
    panel: PanelData,
    r: int,
    kernel: str = "scad",
    adaptive: str = "correlation",
    grid=None,
    a: float = 3.7,
    resolution: float = 1e-3,
) -> float:
    """Smallest threshold constant beyond which the thresholded covariance stays PD.

    Scans a coarse C grid (default: 0 to just past the all-killing constant
    in steps of 0.05), takes the smallest grid point from which every larger
    sampled point has a positive minimum eigenvalue, and refines the
    crossing by bisection down to ``resolution``.  Positive definiteness is
    not guaranteed to be monotone in C; sign changes beyond the first
    crossing are reported as a warning.
    """
    R = pca_estimate(panel, r).residual_cov
    n, t = panel.N, panel.T
    c_max = _max_killing_constant(R, adaptive, n, t)
    if grid is None:
        grid = np.arange(0.0, c_max + 0.05, 0.05)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or grid.min() > 0 or grid.max() < c_max:
        raise ParameterError(
            f"grid must start at 0 and reach the all-killing constant {c_max:.4f}"
        )
    grid = np.sort(grid)

    def lam_min_at(c):
        rule = ThresholdRule(kernel=kernel, adaptive=adaptive, C=float(c), a=a)
        return float(np.linalg.eigvalsh(_threshold_residual_cov(R, rule, n, t))[0])

    pd_flags = np.array([lam_min_at(c) > 0 for c in grid])
    if not pd_flags[-1]:
        raise SearchFailureError(
            "no positive-definite threshold constant found on the grid "
            f"(lambda_min at C={grid[-1]:.4f} is still nonpositive)"
        )
    not_pd = np.where(~pd_flags)[0]
    if not_pd.size == 0:
        return float(grid[0])
    first_stable = not_pd[-1] + 1
    if not np.all(pd_flags[first_stable:]):  # pragma: no cover - defensive
        raise SearchFailureError("inconsistent positive-definiteness scan")
    changes = int(np.count_nonzero(np.diff(pd_flags.astype(int))))
    if changes > 1:
        warnings.warn(
            f"lambda_min(C) changes sign {changes} times on the grid; "
            "the positive region is not a single interval",
            RuntimeWarning,
            stacklevel=2,
        )
    lo = float(grid[first_stable - 1])
    hi = float(grid[first_stable])
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if lam_min_at(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def min_eigen_curve(panel: PanelData, r: int, kernel: str, adaptive: str, Cs, a: float = 3.7):
    """(C, lambda_min) pairs of the thresholded covariance over the requested constants."""
    Cs = np.asarray(Cs, dtype=float)
    if Cs.size == 0:
        raise ParameterError("need at least one threshold constant")
    if np.any(Cs < 0):
        raise ParameterError("threshold constants must be nonnegative")
    R = pca_estimate(panel, r).residual_cov
    n, t = panel.N, panel.T
    out = []
    for c in Cs:
        rule = ThresholdRule(kernel=kernel, adaptive=adaptive, C=float(c), a=a)
        lam = float(np.linalg.eigvalsh(_threshold_residual_cov(R, rule, n, t))[0])
        out.append((float(c), lam))
    return out


def require_positive_definite(S: np.ndarray, context: str) -> None:
    """Raise DefinitenessError naming ``context`` if S has no Cholesky factor."""
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        lam = float(np.linalg.eigvalsh(S)[0])
        raise DefinitenessError(
            f"covariance lost positive definiteness in {context} (lambda_min={lam:.3e})"
        ) from None
