"""Panel data containers, sample covariance, spectral tools and shared diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimensionError,
    InvalidInputError,
    ParameterError,
    SingularMatrixError,
)

SYMMETRY_RTOL = 1e-12
PSD_SLACK = 1e-10
ZERO_CUTOFF = 1e-14


def _as_float_matrix(x, name="matrix"):
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-dimensional, got shape {a.shape}")
    return a


def _check_symmetric(S, name="matrix", rtol=SYMMETRY_RTOL):
    scale = max(1.0, float(np.max(np.abs(S))) if S.size else 0.0)
    asym = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    if asym > rtol * scale:
        raise InvalidInputError(
            f"{name} is not symmetric: max asymmetry {asym:.3e} exceeds {rtol:.1e} relative tolerance"
        )


@dataclass(frozen=True)
class PanelData:
    """Observed T x N panel; row t holds the cross-section observed at time t."""

    Y: np.ndarray
    T: int = field(init=False)
    N: int = field(init=False)

    def __post_init__(self):
        Y = _as_float_matrix(self.Y, "panel")
        if not np.all(np.isfinite(Y)):
            raise InvalidInputError("panel contains non-finite entries")
        t, n = Y.shape
        if t < 2:
            raise DimensionError(f"panel needs at least 2 time periods, got T={t}")
        if n < 1:
            raise DimensionError("panel needs at least 1 series")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "T", t)
        object.__setattr__(self, "N", n)


@dataclass(frozen=True)
class SampleCovariance:
    """N x N sample covariance with divisor T."""

    S: np.ndarray
    N: int = field(init=False)

    def __post_init__(self):
        S = _as_float_matrix(self.S, "covariance")
        if S.shape[0] != S.shape[1]:
            raise DimensionError(f"covariance must be square, got {S.shape}")
        _check_symmetric(S, "covariance")
        n = S.shape[0]
        # PSD up to round-off: smallest eigenvalue may only be slightly negative
        lam_min = float(np.linalg.eigvalsh(S)[0])
        if lam_min < -PSD_SLACK * max(np.trace(S) / n, 1e-300):
            raise InvalidInputError(
                f"covariance is not positive semi-definite: lambda_min={lam_min:.3e}"
            )
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "N", n)


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigenvalues (descending) and matching orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=float)
        vecs = _as_float_matrix(self.eigenvectors, "eigenvectors")
        if np.any(np.diff(vals) > 0):
            raise InvalidInputError("eigenvalues must be sorted in descending order")
        gram = vecs.T @ vecs
        if np.max(np.abs(gram - np.eye(vecs.shape[1]))) > 1e-10:
            raise InvalidInputError("eigenvector matrix is not orthonormal")
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "eigenvectors", vecs)


@dataclass(frozen=True)
class RateDiagnostics:
    """Benchmark rate omega_T and row-wise sparsity mass m_N for a given q."""

    omega_T: float
    m_N: float
    q: float


def center_panel(panel: PanelData) -> PanelData:
    """Remove the time average of every series (absorbs the intercept)."""
    Y = panel.Y
    return PanelData(Y - Y.mean(axis=0))


def sample_covariance(panel: PanelData) -> SampleCovariance:
    """Sample covariance with divisor T, demeaning each series internally."""
    if panel.T < 2:
        raise DimensionError("sample covariance needs at least 2 time periods")
    Yc = panel.Y - panel.Y.mean(axis=0)
    S = Yc.T @ Yc / panel.T
    S = 0.5 * (S + S.T)
    return SampleCovariance(S)


def spectral_decompose(S) -> SpectralDecomp:
    """Full symmetric eigendecomposition, eigenvalues sorted descending.

    Eigenvector signs are fixed so that the first component larger than
    1e-12 in absolute value is positive, making repeated runs identical.
    """
    mat = S.S if isinstance(S, SampleCovariance) else _as_float_matrix(S, "matrix")
    if mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"matrix must be square, got {mat.shape}")
    _check_symmetric(mat, "matrix", rtol=1e-8)
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    order = np.argsort(vals, kind="stable")[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        nz = np.nonzero(np.abs(vecs[:, j]) > 1e-12)[0]
        if nz.size and vecs[nz[0], j] < 0:
            vecs[:, j] = -vecs[:, j]
    return SpectralDecomp(vals, vecs)


def canonical_correlations(A, B) -> np.ndarray:
    """Canonical correlations between the column spaces of A and B, descending.

    Square roots of the eigenvalues of (A'A)^{-1} A'B (B'B)^{-1} B'A; the
    product is symmetrized through Cholesky whitening of A'A so the
    eigenproblem is numerically symmetric.  The smallest entry is the
    accuracy metric used by the Monte Carlo harness.
    """
    A = _as_float_matrix(A, "A")
    B = _as_float_matrix(B, "B")
    if A.shape != B.shape:
        raise DimensionError(f"A and B must have the same shape, got {A.shape} vs {B.shape}")
    try:
        La = np.linalg.cholesky(A.T @ A)
        gb_inv_ba = np.linalg.solve(B.T @ B, B.T @ A)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"rank-deficient input to canonical correlations: {exc}") from exc
    half = np.linalg.solve(La, A.T @ B)
    M = half @ gb_inv_ba @ np.linalg.inv(La).T
    M = 0.5 * (M + M.T)
    ev = np.linalg.eigvalsh(M)
    ev = np.clip(ev, 0.0, 1.0)
    return np.sqrt(ev[::-1])


def rate_diagnostics(sigma, q: float, n: int, t: int) -> RateDiagnostics:
    """omega_T = 1/sqrt(N) + sqrt(log N / T) and the max row mass sum_j |sigma_ij|^q.

    q = 0 counts nonzero entries per row, with |entry| <= 1e-14 treated as zero.
    """
    if not 0.0 <= q < 1.0:
        raise ParameterError(f"q must lie in [0, 1), got {q}")
    if n < 1 or t < 1:
        raise ParameterError(f"need n, t >= 1, got n={n}, t={t}")
    mat = _as_float_matrix(sigma, "sigma")
    if mat.shape != (n, n):
        raise DimensionError(f"sigma must be {n}x{n}, got {mat.shape}")
    omega = 1.0 / np.sqrt(n) + np.sqrt(np.log(n) / t)
    if q == 0.0:
        m = np.max(np.sum(np.abs(mat) > ZERO_CUTOFF, axis=1))
    else:
        m = np.max(np.sum(np.abs(mat) ** q, axis=1))
    return RateDiagnostics(float(omega), float(m), float(q))
