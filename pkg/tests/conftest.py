import numpy as np
import pytest


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def random_pd(n: int, rng: np.random.Generator, jitter: float = 0.5) -> np.ndarray:
    """Random symmetric positive definite matrix with eigenvalues bounded away from 0."""
    A = rng.normal(size=(n, n))
    return A @ A.T / n + jitter * np.eye(n)


def random_exact_model(n: int, r: int, rng: np.random.Generator):
    """(Lambda, Sigma_u, S_y) with S_y = Lambda Lambda' + Sigma_u exactly."""
    lam = rng.normal(size=(n, r))
    sigma = random_pd(n, rng)
    return lam, sigma, lam @ lam.T + sigma


@pytest.fixture
def rng():
    return rng_for(20240810)
