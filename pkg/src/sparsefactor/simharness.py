"""Banded-noise data generating process and the seeded Monte Carlo replication engine.

Random streams
--------------
Every random draw comes from a counter-based Philox generator.  A scalar
seed s maps to ``np.random.Generator(np.random.Philox(np.random.SeedSequence(s)))``.
Replication seeds are derived as the first 64-bit word of
``SeedSequence((master_seed, cell_index, rep_index))``, so per-replication
results depend only on (master seed, cell, replication index), never on the
execution order or the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - threadpoolctl is a declared dependency
    from contextlib import nullcontext

    def threadpool_limits(limits=None):
        return nullcontext()

from .exceptions import FactorModelError, ParameterError
from .jointpml import PenaltySpec, dml_estimate, joint_estimate
from .panel import PanelData, canonical_correlations
from .pca import fix_column_signs, pca_estimate
from .poet import ThresholdRule, find_min_positive_C, poet_estimate
from .twostep import twostep_estimate

#: Scale of the N(0, sigma^2) moving-average coefficients of the banded noise.
DEFAULT_COEFF_SIGMA = 0.6

ESTIMATOR_METHODS = ("pca", "dml", "twostep", "jointpml")


def _generator(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def derive_rep_seed(master_seed: int, cell_index: int, rep_index: int) -> int:
    """Deterministic, order-independent per-replication seed."""
    ss = np.random.SeedSequence((int(master_seed), int(cell_index), int(rep_index)))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class DGPTruth:
    """One draw of the banded-noise two-factor design with its generating truth."""

    panel: PanelData
    loadings0: np.ndarray
    factors0: np.ndarray
    sigma_u0: np.ndarray
    seed: int
    coeff_a: np.ndarray = field(default=None, repr=False)
    coeff_b: np.ndarray = field(default=None, repr=False)
    coeff_c: np.ndarray = field(default=None, repr=False)


def _band_mixing_matrix(n: int, a, b, c) -> np.ndarray:
    """Unit lower-triangular mixing of the innovations: three sub-diagonals."""
    L = np.eye(n)
    idx = np.arange(1, n)
    L[idx, idx - 1] = a[: n - 1]
    idx = np.arange(2, n)
    L[idx, idx - 2] = b[: n - 2]
    idx = np.arange(3, n)
    L[idx, idx - 3] = c[: n - 3]
    return L


def generate_dgp(
    n: int,
    t: int,
    seed: int,
    coeff_sigma: float = DEFAULT_COEFF_SIGMA,
    coeffs=None,
    idio_scale: float = 1.0,
    design_seed: int | None = None,
) -> DGPTruth:
    """Two-factor panel with cross-sectionally banded moving-average noise.

    The noise stacks each innovation with up to three of its predecessors:
    u_1 = e_1, u_2 = e_2 + a_1 e_1, u_3 = e_3 + a_2 e_2 + b_1 e_1 and
    u_{i+1} = e_{i+1} + a_i e_i + b_{i-1} e_{i-1} + c_{i-2} e_{i-2}, with
    coefficients drawn i.i.d. N(0, coeff_sigma^2), factors i.i.d. standard
    normal and loadings uniform on [0, 1].  The noise covariance is the
    exact L L' of the mixing matrix, banded with bandwidth 3.

    ``coeffs`` injects fixed (a, b, c) arrays instead of drawing them;
    ``idio_scale`` rescales the noise (0 gives a noiseless panel);
    ``design_seed`` draws (a, b, c, loadings) from a separate stream so a
    design can be held fixed across replications.
    """
    if n < 4:
        raise ParameterError(f"banded noise recursion needs at least 4 series, got {n}")
    if t < 2:
        raise ParameterError(f"need at least 2 time periods, got {t}")
    rng = _generator(seed)
    rng_design = rng if design_seed is None else _generator((design_seed, 1))
    if coeffs is not None:
        a, b, c = (np.asarray(x, dtype=float) for x in coeffs)
        if min(a.size, b.size, c.size) < n - 1:
            raise ParameterError("injected coefficient arrays are too short")
    else:
        a = rng_design.normal(0.0, coeff_sigma, size=n)
        b = rng_design.normal(0.0, coeff_sigma, size=n)
        c = rng_design.normal(0.0, coeff_sigma, size=n)
    loadings = rng_design.uniform(0.0, 1.0, size=(n, 2))
    factors = rng.normal(0.0, 1.0, size=(t, 2))
    innovations = rng.normal(0.0, 1.0, size=(t, n))
    L = _band_mixing_matrix(n, a, b, c)
    sigma_u0 = (L @ L.T) * idio_scale**2
    Y = factors @ loadings.T + idio_scale * (innovations @ L.T)
    return DGPTruth(
        panel=PanelData(Y),
        loadings0=loadings,
        factors0=factors,
        sigma_u0=sigma_u0,
        seed=int(seed) if np.isscalar(seed) else -1,
        coeff_a=a,
        coeff_b=b,
        coeff_c=c,
    )


def generate_identity_noise_dgp(
    n: int,
    t: int,
    seed: int,
    scales: tuple = (2.0, 0.5),
) -> DGPTruth:
    """Identity-covariance design satisfying the ML identification exactly.

    Factors are demeaned and orthonormalized so their sample second moment
    is the identity; loadings have orthogonal columns with squared norms
    ``scales[j] * n`` (distinct, decreasing) and the largest-absolute-entry
    sign convention; the noise is i.i.d. standard normal.  Used for the
    limiting-distribution desk checks, where the error covariance of each
    estimated loading row should approach the identity.
    """
    rng = _generator((seed, 3))
    F = rng.normal(size=(t, 2))
    F = F - F.mean(axis=0)
    vals, vecs = np.linalg.eigh(F.T @ F / t)
    F = F @ vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
    G = rng.normal(size=(n, 2))
    Q, _ = np.linalg.qr(G)
    lam = fix_column_signs(Q @ np.diag([math.sqrt(scales[0] * n), math.sqrt(scales[1] * n)]))
    U = rng.normal(size=(t, n))
    return DGPTruth(
        panel=PanelData(F @ lam.T + U),
        loadings0=lam,
        factors0=F,
        sigma_u0=np.eye(n),
        seed=int(seed),
        coeff_a=np.zeros(n),
        coeff_b=np.zeros(n),
        coeff_c=np.zeros(n),
    )


@dataclass(frozen=True)
class EstimatorConfig:
    """Which estimator to run on each replication, with its hyperparameters."""

    method: str
    r: int = 2
    # two-step thresholding
    C: float = 1.0
    kernel: str = "scad"
    adaptive: str = "correlation"
    scad_a: float = 3.7
    max_outer: int = 10
    # joint penalized ML
    penalty: str = "adaptive_lasso"
    gamma: float = 1.0
    mu_T: float = 0.08
    delta_T: float = 0.0
    weights: str = "fixed"
    # shared solver controls
    max_iter: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if self.method not in ESTIMATOR_METHODS:
            raise ParameterError(f"method must be one of {ESTIMATOR_METHODS}, got {self.method!r}")

    def threshold_rule(self) -> ThresholdRule:
        return ThresholdRule(kernel=self.kernel, adaptive=self.adaptive, C=self.C, a=self.scad_a)

    def penalty_spec(self) -> PenaltySpec:
        return PenaltySpec(
            kind=self.penalty,
            mu_T=self.mu_T,
            gamma=self.gamma,
            delta_T=self.delta_T,
            a=self.scad_a,
            weights=self.weights,
        )

    def label(self) -> str:
        if self.method == "pca":
            return "pca"
        if self.method == "dml":
            return "dml"
        if self.method == "twostep":
            return f"twostep[{self.kernel},{self.adaptive},C={self.C:g}]"
        return f"jointpml[{self.penalty},gamma={self.gamma:g},mu={self.mu_T:g}]"


@dataclass(frozen=True)
class ReplicationRecord:
    """Metrics of a single seeded replication."""

    seed: int
    loadings_cc: float = float("nan")
    factors_cc: float = float("nan")
    iterations: int = 0
    objective: float = float("nan")
    failed: bool = False
    error: str = ""


def _fit_estimator(dgp: DGPTruth, config: EstimatorConfig):
    """Return (loadings, factors, iterations, objective) for the configured method."""
    if config.method == "pca":
        fit = pca_estimate(dgp.panel, config.r)
        return fit.loadings, fit.factors, 1, float("nan")
    if config.method == "dml":
        est = dml_estimate(dgp.panel, config.r, max_iter=config.max_iter, tol=config.tol)
    elif config.method == "twostep":
        est = twostep_estimate(
            dgp.panel,
            config.r,
            config.threshold_rule(),
            max_outer=config.max_outer,
            tol=config.tol,
        )
    else:
        est = joint_estimate(
            dgp.panel,
            config.r,
            config.penalty_spec(),
            max_iter=config.max_iter,
            tol=config.tol,
        )
    return est.loadings, est.factors, est.iterations, est.objective


def run_replication(
    n: int,
    t: int,
    seed: int,
    config: EstimatorConfig,
    coeff_sigma: float = DEFAULT_COEFF_SIGMA,
    design_seed: int | None = None,
) -> ReplicationRecord:
    """One DGP draw, one fit, smallest canonical correlations against the truth.

    Estimator failures come back as failed records rather than exceptions.
    BLAS threading is pinned to one thread so results do not depend on the
    worker layout.
    """
    with threadpool_limits(limits=1):
        dgp = generate_dgp(n, t, seed, coeff_sigma=coeff_sigma, design_seed=design_seed)
        try:
            loadings, factors, iters, objective = _fit_estimator(dgp, config)
            l_cc = float(canonical_correlations(loadings, dgp.loadings0)[-1])
            f_cc = float(canonical_correlations(factors, dgp.factors0)[-1])
        except FactorModelError as exc:
            return ReplicationRecord(seed=seed, failed=True, error=str(exc))
    return ReplicationRecord(
        seed=seed,
        loadings_cc=l_cc,
        factors_cc=f_cc,
        iterations=iters,
        objective=objective,
    )


@dataclass(frozen=True)
class CellResult:
    """Aggregated metrics of one (T, N, estimator) Monte Carlo cell."""

    t: int
    n: int
    estimator: str
    config: EstimatorConfig
    n_reps: int
    n_failed: int
    loadings_mean: float
    loadings_se: float
    factors_mean: float
    factors_se: float
    replications: tuple = field(default=(), repr=False)

    @property
    def failed(self) -> bool:
        return self.n_failed >= self.n_reps


@dataclass(frozen=True)
class MonteCarloReport:
    """All cells of a Monte Carlo run plus the master seed that produced them."""

    rows: tuple
    reps: int
    master_seed: int


def _mean_se(values):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def _run_cell_rep(args):
    n, t, seed, config, coeff_sigma, design_seed = args
    return run_replication(n, t, seed, config, coeff_sigma, design_seed)


def monte_carlo(
    table_spec,
    reps: int,
    master_seed: int,
    jobs: int | None = None,
    coeff_sigma: float = DEFAULT_COEFF_SIGMA,
    fixed_design: bool = False,
) -> MonteCarloReport:
    """Run every (t, n, config) cell of ``table_spec`` for ``reps`` seeded replications.

    Replication seeds derive from (master_seed, cell index, rep index), so
    the report is identical for any ``jobs`` value and doubling ``reps``
    extends rather than reshuffles the replication set.  ``fixed_design``
    holds the noise coefficients and loadings fixed (per cell) across
    replications instead of redrawing everything.
    """
    if reps < 1:
        raise ParameterError(f"need at least one replication, got {reps}")
    tasks = []
    index = []
    for ci, (t, n, config) in enumerate(table_spec):
        design_seed = derive_rep_seed(master_seed, ci, 2**32) if fixed_design else None
        for k in range(reps):
            seed = derive_rep_seed(master_seed, ci, k)
            tasks.append((n, t, seed, config, coeff_sigma, design_seed))
            index.append((ci, k))

    results: dict = {}
    if jobs is not None and jobs <= 1:
        for key, task in zip(index, tasks):
            results[key] = _run_cell_rep(task)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, rec in zip(index, pool.map(_run_cell_rep, tasks, chunksize=4)):
                results[key] = rec

    rows = []
    for ci, (t, n, config) in enumerate(table_spec):
        recs = tuple(results[(ci, k)] for k in range(reps))
        good = [rec for rec in recs if not rec.failed]
        l_mean, l_se = _mean_se([rec.loadings_cc for rec in good])
        f_mean, f_se = _mean_se([rec.factors_cc for rec in good])
        rows.append(
            CellResult(
                t=t,
                n=n,
                estimator=config.label(),
                config=config,
                n_reps=reps,
                n_failed=reps - len(good),
                loadings_mean=l_mean,
                loadings_se=l_se,
                factors_mean=f_mean,
                factors_se=f_se,
                replications=recs,
            )
        )
    return MonteCarloReport(rows=tuple(rows), reps=reps, master_seed=int(master_seed))


@dataclass(frozen=True)
class SparsistencyRecord:
    """Support-recovery fractions of the thresholded covariance, averaged over replications."""

    n: int
    t: int
    n_reps: int
    zero_recovery: float
    band_recovery: float
    strong_band_recovery: float
    strong_lag1_recovery: float
    strong_cut: float
    mean_c: float
    mean_c_min: float


def sparsistency_report(
    n: int,
    t: int,
    reps: int,
    rule: ThresholdRule,
    master_seed: int = 0,
    r: int = 2,
    coeff_sigma: float = DEFAULT_COEFF_SIGMA,
    strong_cut: float = 0.3,
    floor_at_c_min: bool = False,
    c_min_margin: float = 0.05,
) -> SparsistencyRecord:
    """Zero and band recovery of the thresholded covariance on the banded design.

    Reports, averaged over replications: the fraction of truly zero
    off-diagonals estimated exactly zero; the fraction of nonzero band
    entries estimated nonzero; the same restricted to band entries of
    true magnitude at least ``strong_cut``; and the fraction of first
    sub-diagonal entries whose generating coefficient exceeds
    ``strong_cut`` in magnitude that are estimated nonzero.  With
    ``floor_at_c_min`` the constant is raised per replication to stay
    above the computed positive-definiteness constant.
    """
    if reps < 1:
        raise ParameterError(f"need at least one replication, got {reps}")
    zero_frac = band_frac = strong_frac = lag1_frac = 0.0
    c_used = c_min_sum = 0.0
    iu = np.triu_indices(n, 1)
    with threadpool_limits(limits=1):
        for k in range(reps):
            seed = derive_rep_seed(master_seed, 0, k)
            dgp = generate_dgp(n, t, seed, coeff_sigma=coeff_sigma)
            c_min = find_min_positive_C(dgp.panel, r, rule.kernel, rule.adaptive, a=rule.a)
            c = max(rule.C, c_min + c_min_margin) if floor_at_c_min else rule.C
            est = poet_estimate(dgp.panel, r, replace(rule, C=c))
            truth = dgp.sigma_u0[iu]
            est_off = est.Sigma[iu]
            true_zero = np.abs(truth) < 1e-14
            band = (iu[1] - iu[0] <= 3) & ~true_zero
            strong = band & (np.abs(truth) >= strong_cut)
            lag1 = (iu[1] - iu[0] == 1) & (np.abs(dgp.coeff_a[iu[0]]) >= strong_cut)
            est_zero = est_off == 0.0
            zero_frac += np.mean(est_zero[true_zero]) / reps
            band_frac += np.mean(~est_zero[band]) / reps
            strong_frac += np.mean(~est_zero[strong]) / reps
            lag1_frac += np.mean(~est_zero[lag1]) / reps
            c_used += c / reps
            c_min_sum += c_min / reps
    return SparsistencyRecord(
        n=n,
        t=t,
        n_reps=reps,
        zero_recovery=float(zero_frac),
        band_recovery=float(band_frac),
        strong_band_recovery=float(strong_frac),
        strong_lag1_recovery=float(lag1_frac),
        strong_cut=float(strong_cut),
        mean_c=float(c_used),
        mean_c_min=float(c_min_sum),
    )


def table_grid():
    """The (T, N) grid and estimator set of the reproduction tables."""
    cells = []
    configs = [
        EstimatorConfig(method="pca"),
        EstimatorConfig(method="dml"),
        EstimatorConfig(method="twostep", kernel="scad", adaptive="correlation", C=1.0),
        EstimatorConfig(method="jointpml", gamma=1.0, mu_T=0.08),
        EstimatorConfig(method="jointpml", gamma=1.0, mu_T=0.3),
        EstimatorConfig(method="jointpml", gamma=5.0, mu_T=0.08),
        EstimatorConfig(method="jointpml", gamma=5.0, mu_T=0.3),
    ]
    for t, n in [(50, 50), (50, 100), (50, 150), (100, 50), (100, 100), (100, 150)]:
        for config in configs:
            cells.append((t, n, config))
    return cells
