"""Two-step quasi-ML estimation: thresholded covariance, EM loadings, GLS factors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .exceptions import (
    DefinitenessError,
    InvalidInputError,
    NumericalError,
    ParameterError,
    SingularMatrixError,
)
from .panel import PanelData, SampleCovariance
from .pca import fix_column_signs, pca_estimate
from .poet import ThresholdRule, _threshold_residual_cov

# Relative eigengap below which the identification rotation is treated as tied.
_TIE_RTOL = 1e-10


def _as_cov_matrix(S_y) -> np.ndarray:
    if isinstance(S_y, SampleCovariance):
        return S_y.S
    return np.asarray(S_y, dtype=float)


class _CovFactor:
    """Cholesky factorization of a PD covariance with cached log-determinant."""

    def __init__(self, sigma_u: np.ndarray, context: str = "covariance"):
        sigma_u = np.asarray(sigma_u, dtype=float)
        try:
            self.cho = sla.cho_factor(sigma_u, lower=True)
        except (sla.LinAlgError, ValueError) as exc:
            lam = float(np.linalg.eigvalsh(sigma_u)[0]) if np.all(np.isfinite(sigma_u)) else np.nan
            raise DefinitenessError(
                f"covariance is not positive definite in {context} (lambda_min={lam:.3e})"
            ) from exc
        self.matrix = sigma_u
        self.n = sigma_u.shape[0]
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.cho[0]))))

    def solve(self, B: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self.cho, B)

    def trace_solve(self, B: np.ndarray) -> float:
        """tr(Sigma_u^{-1} B)."""
        return float(np.trace(self.solve(B)))


def _loglik_terms(factor: _CovFactor, Lam: np.ndarray):
    """P = Sigma_u^{-1} Lambda, G = Lambda' P, and I_r + G for Woodbury algebra."""
    P = factor.solve(Lam)
    G = Lam.T @ P
    G = 0.5 * (G + G.T)
    IG = np.eye(Lam.shape[1]) + G
    return P, G, IG


def _neg_loglik_cached(factor: _CovFactor, tr_s_su: float, Lam: np.ndarray, S: np.ndarray) -> float:
    P, _, IG = _loglik_terms(factor, Lam)
    sign, logdet_ig = np.linalg.slogdet(IG)
    if sign <= 0:
        raise NumericalError("I + Lambda' Sigma_u^{-1} Lambda is not positive definite")
    PSP = P.T @ S @ P
    try:
        correction = float(np.trace(np.linalg.solve(IG, PSP)))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular Woodbury core in likelihood evaluation: {exc}") from exc
    return (factor.logdet + logdet_ig + tr_s_su - correction) / factor.n


def neg_loglik(Lam: np.ndarray, Sigma_u: np.ndarray, S_y) -> float:
    """Average negative Gaussian quasi-log-likelihood of (Lambda, Sigma_u).

    (1/N) log det(Lambda Lambda' + Sigma_u) + (1/N) tr(S_y (Lambda Lambda' + Sigma_u)^{-1}),
    evaluated through the Woodbury identity and the matrix determinant lemma so
    only r x r solves and Sigma_u solves appear.
    """
    S = _as_cov_matrix(S_y)
    factor = _CovFactor(Sigma_u, "neg_loglik")
    return _neg_loglik_cached(factor, factor.trace_solve(S), np.asarray(Lam, dtype=float), S)


def neg_loglik_grad(Lam: np.ndarray, Sigma_u: np.ndarray, S_y) -> np.ndarray:
    """Gradient of neg_loglik with respect to Lambda: (2/N) Sigma_y^{-1}(Sigma_y - S_y) Sigma_y^{-1} Lambda."""
    S = _as_cov_matrix(S_y)
    Lam = np.asarray(Lam, dtype=float)
    factor = _CovFactor(Sigma_u, "neg_loglik_grad")
    P, _, IG = _loglik_terms(factor, Lam)
    W = np.linalg.solve(IG, P.T).T          # Sigma_y^{-1} Lambda
    X = S @ W
    SyinvX = factor.solve(X) - P @ np.linalg.solve(IG, P.T @ X)
    return (2.0 / factor.n) * (W - SyinvX)


def _em_update_cached(factor: _CovFactor, Lam: np.ndarray, S: np.ndarray) -> np.ndarray:
    P, _, IG = _loglik_terms(factor, Lam)
    W = np.linalg.solve(IG, P.T).T
    A = S @ W
    M = W.T @ A + np.eye(Lam.shape[1]) - Lam.T @ W
    M = 0.5 * (M + M.T)
    try:
        return np.linalg.solve(M.T, A.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular M matrix in EM loadings update: {exc}") from exc


def em_update_loadings(Lam_k: np.ndarray, Sigma_u: np.ndarray, S_y) -> np.ndarray:
    """One EM update of the loadings with Sigma_u held fixed.

    Lambda_{k+1} = A M^{-1} with A = S_y Sigma_y^{-1} Lambda_k and
    M = Lambda_k' Sigma_y^{-1} S_y Sigma_y^{-1} Lambda_k + I_r
        - Lambda_k' Sigma_y^{-1} Lambda_k,
    where Sigma_y = Lambda_k Lambda_k' + Sigma_u.  The update never
    increases the negative log-likelihood.
    """
    S = _as_cov_matrix(S_y)
    factor = _CovFactor(Sigma_u, "em_update_loadings")
    return _em_update_cached(factor, np.asarray(Lam_k, dtype=float), S)


def _identify_with_factor(factor: _CovFactor, Lam: np.ndarray):
    B = Lam.T @ factor.solve(Lam)
    B = 0.5 * (B + B.T)
    vals, vecs = np.linalg.eigh(B)
    if vals[0] <= 0:
        raise SingularMatrixError(
            "Lambda' Sigma_u^{-1} Lambda is singular; loadings are rank deficient"
        )
    order = np.argsort(vals, kind="stable")[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    gaps = -np.diff(vals)
    tie = bool(np.any(gaps <= _TIE_RTOL * max(vals[0], 1e-300)))
    return fix_column_signs(Lam @ vecs), tie


def identify_rotate(Lam: np.ndarray, Sigma_u: np.ndarray) -> np.ndarray:
    """Rotate Lambda so Lambda' Sigma_u^{-1} Lambda is diagonal with decreasing entries.

    The rotation is orthogonal, so Lambda Lambda' and the likelihood are
    unchanged.  Column signs follow the largest-absolute-entry convention.
    Exactly tied eigenvalues keep the eigensolver's deterministic order.
    """
    Lam = np.asarray(Lam, dtype=float)
    factor = _CovFactor(Sigma_u, "identify_rotate")
    rotated, _ = _identify_with_factor(factor, Lam)
    return rotated


def gls_factors(Lam: np.ndarray, Sigma_u: np.ndarray, panel: PanelData) -> np.ndarray:
    """GLS factor scores f_t = (Lambda' Sigma_u^{-1} Lambda)^{-1} Lambda' Sigma_u^{-1} (y_t - ybar)."""
    Lam = np.asarray(Lam, dtype=float)
    factor = _CovFactor(Sigma_u, "gls_factors")
    Yc = panel.Y - panel.Y.mean(axis=0)
    P = factor.solve(Lam)
    G = Lam.T @ P
    G = 0.5 * (G + G.T)
    try:
        return np.linalg.solve(G, P.T @ Yc.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"singular Lambda' Sigma_u^{-1} Lambda in GLS: {exc}") from exc


@dataclass(frozen=True)
class FactorEstimate:
    """Fitted loadings/factors/idiosyncratic covariance under the ML identification.

    ``objective_trace`` concatenates the per-iteration objective values;
    ``trace_breaks`` holds the start offset of each optimization segment
    (outer re-thresholding restarts the inner objective), and the trace is
    non-increasing within every segment.
    """

    loadings: np.ndarray
    factors: np.ndarray
    Sigma_u: np.ndarray
    r: int
    objective_trace: tuple
    iterations: int
    method: str = ""
    converged: bool = True
    trace_breaks: tuple = (0,)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.asarray(self.loadings, dtype=float)
        fac = np.asarray(self.factors, dtype=float)
        sig = np.asarray(self.Sigma_u, dtype=float)
        if lam.shape[1] != self.r or fac.shape[1] != self.r:
            raise InvalidInputError("loadings/factors column count must equal r")
        if sig.shape != (lam.shape[0], lam.shape[0]):
            raise InvalidInputError("Sigma_u shape does not match the loadings")
        factor = _CovFactor(sig, "FactorEstimate")
        B = lam.T @ factor.solve(lam)
        diag = np.diag(B)
        off = np.max(np.abs(B - np.diag(diag))) if self.r > 1 else 0.0
        if off > 1e-6 * max(float(np.max(np.abs(diag))), 1e-300):
            raise InvalidInputError(
                f"loadings violate the identification: off-diagonal magnitude {off:.3e}"
            )
        if np.any(np.diff(diag) > 1e-8 * max(float(diag[0]), 1e-300)):
            raise InvalidInputError("identification diagonal is not decreasing")
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "factors", fac)
        object.__setattr__(self, "Sigma_u", sig)
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))
        object.__setattr__(self, "trace_breaks", tuple(int(v) for v in self.trace_breaks))

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    def trace_segments(self):
        """Per-segment views of the objective trace."""
        breaks = list(self.trace_breaks) + [len(self.objective_trace)]
        return [self.objective_trace[a:b] for a, b in zip(breaks[:-1], breaks[1:])]


def twostep_estimate(
    panel: PanelData,
    r: int,
    rule: ThresholdRule,
    max_outer: int = 10,
    tol: float = 1e-6,
    inner_tol: float = 1e-8,
    inner_max_iter: int = 500,
) -> FactorEstimate:
    """Two-step estimator with optional threshold/estimate refinement cycles.

    Each outer pass thresholds the current residual covariance (the PCA
    residual covariance on the first pass), runs the monotone EM loadings
    loop to ``inner_tol``, applies the identification rotation, recovers
    GLS factors and updates the residuals.  Outer cycling stops when the
    relative objective change falls below ``tol`` or after ``max_outer``
    passes.  The threshold constant must exceed the positive-definiteness
    constant of the residual covariance; otherwise a DefinitenessError
    names the failing pass.
    """
    if max_outer < 1:
        raise ParameterError(f"max_outer must be >= 1, got {max_outer}")
    fit = pca_estimate(panel, r)
    Yc = panel.Y - panel.Y.mean(axis=0)
    S = Yc.T @ Yc / panel.T
    S = 0.5 * (S + S.T)
    Lam = fit.loadings
    R = fit.residual_cov

    trace: list[float] = []
    breaks: list[int] = []
    outer_objectives: list[float] = []
    tie_seen = False
    converged = False
    Sigma = None
    factors = fit.factors
    prev_outer = None

    for outer in range(max_outer):
        Sigma = _threshold_residual_cov(R, rule, panel.N, panel.T)
        factor = _CovFactor(Sigma, f"two-step outer pass {outer + 1}")
        tr_s_su = factor.trace_solve(S)
        breaks.append(len(trace))
        cur = _neg_loglik_cached(factor, tr_s_su, Lam, S)
        trace.append(cur)
        for _ in range(inner_max_iter):
            Lam = _em_update_cached(factor, Lam, S)
            prev, cur = cur, _neg_loglik_cached(factor, tr_s_su, Lam, S)
            trace.append(cur)
            if abs(prev - cur) <= inner_tol * max(1.0, abs(prev)):
                break
        Lam, tie = _identify_with_factor(factor, Lam)
        tie_seen = tie_seen or tie
        P = factor.solve(Lam)
        G = Lam.T @ P
        factors = np.linalg.solve(0.5 * (G + G.T), P.T @ Yc.T).T
        resid = Yc - factors @ Lam.T
        R = resid.T @ resid / panel.T
        R = 0.5 * (R + R.T)
        outer_objectives.append(cur)
        if prev_outer is not None and abs(prev_outer - cur) <= tol * max(1.0, abs(prev_outer)):
            converged = True
            break
        prev_outer = cur

    return FactorEstimate(
        loadings=Lam,
        factors=factors,
        Sigma_u=Sigma,
        r=r,
        objective_trace=tuple(trace),
        iterations=len(trace) - len(breaks),
        method="twostep",
        converged=converged or max_outer == 1,
        trace_breaks=tuple(breaks),
        diagnostics={
            "outer_passes": len(outer_objectives),
            "outer_objectives": outer_objectives,
            "rotation_tie": tie_seen,
            "rule": {
                "kernel": rule.kernel,
                "adaptive": rule.adaptive,
                "C": rule.C,
                "a": rule.a,
            },
        },
    )
