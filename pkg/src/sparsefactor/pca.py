"""Principal components estimation of factors, loadings and residual covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError, ParameterError
from .panel import PanelData

# Eigenvalues this small relative to the leading one mean the requested rank
# is not identified from the data.
_RANK_RTOL = 1e-12


def fix_column_signs(M: np.ndarray) -> np.ndarray:
    """Flip columns so the entry of largest absolute value is positive."""
    M = M.copy()
    for j in range(M.shape[1]):
        k = int(np.argmax(np.abs(M[:, j])))
        if M[k, j] < 0:
            M[:, j] = -M[:, j]
    return M


@dataclass(frozen=True)
class PcaFit:
    """PCA estimates: loadings (N x r), factors (T x r, F'F/T = I), residuals and their covariance."""

    loadings: np.ndarray
    factors: np.ndarray
    residuals: np.ndarray
    residual_cov: np.ndarray


def pca_estimate(panel: PanelData, r: int) -> PcaFit:
    """Rank-r principal components fit of a (centered) panel.

    Factors are sqrt(T) times the top-r eigenvectors of the T x T product
    of the centered panel with itself; loadings follow by cross-moments.
    The eigenproblem is solved on whichever of the T x T or N x N product
    is smaller; the two routes are equivalent through the singular value
    decomposition.  Column signs are fixed so the largest-absolute entry
    of each factor column is positive.
    """
    t, n = panel.T, panel.N
    if not 1 <= r < min(n, t):
        raise ParameterError(f"rank must satisfy 1 <= r < min(N, T) = {min(n, t)}, got {r}")
    Yc = panel.Y - panel.Y.mean(axis=0)
    if t <= n:
        w, V = np.linalg.eigh(Yc @ Yc.T)
    else:
        w, V = np.linalg.eigh(Yc.T @ Yc)
    order = np.argsort(w, kind="stable")[::-1][:r]
    w = w[order]
    if w[-1] <= _RANK_RTOL * max(float(w[0]), 1e-300):
        raise NumericalError(f"panel has numerical rank below r={r}")
    if t <= n:
        factors = np.sqrt(t) * V[:, order]
    else:
        factors = np.sqrt(t) * (Yc @ V[:, order]) / np.sqrt(w)
    factors = fix_column_signs(factors)
    loadings = Yc.T @ factors / t
    residuals = Yc - factors @ loadings.T
    residual_cov = residuals.T @ residuals / t
    residual_cov = 0.5 * (residual_cov + residual_cov.T)
    return PcaFit(loadings, factors, residuals, residual_cov)


def pca_residual_covariance(panel: PanelData, r: int) -> np.ndarray:
    """Covariance of the rank-r PCA residuals; equals the spectral remainder of S_y."""
    return pca_estimate(panel, r).residual_cov
