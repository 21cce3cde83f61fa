import numpy as np
import pytest

from sparsefactor import (
    PanelData,
    ParameterError,
    PenaltySpec,
    canonical_correlations,
    dml_estimate,
    em_covariance_target,
    generate_dgp,
    joint_estimate,
    matrix_soft_threshold,
    mm_covariance_step,
    neg_loglik,
    penalized_objective,
    penalty_weights,
)

from conftest import random_exact_model, random_pd, rng_for


class TestPenaltyWeights:
    def test_lasso_all_ones(self):
        W = penalty_weights(PenaltySpec(kind="lasso", mu_T=0.1), np.eye(5)).W
        off = ~np.eye(5, dtype=bool)
        assert np.all(W[off] == 1.0)
        assert np.all(np.diag(W) == 0.0)

    def test_adaptive_lasso_formula(self):
        prelim = np.zeros((3, 3))
        spec = PenaltySpec(kind="adaptive_lasso", mu_T=0.1, gamma=1.0, delta_T=0.1)
        W = penalty_weights(spec, prelim).W
        assert W[0, 1] == pytest.approx(10.0, abs=1e-12)

    def test_adaptive_lasso_zero_division_guard(self):
        prelim = np.eye(3)
        spec = PenaltySpec(kind="adaptive_lasso", mu_T=0.1, gamma=1.0, delta_T=0.0)
        with pytest.raises(ParameterError, match=r"\(0, 1\)"):
            penalty_weights(spec, prelim)

    def test_scad_large_entry_branch(self):
        spec = PenaltySpec(kind="scad", mu_T=0.1, a=3.7)
        prelim = np.full((2, 2), 10.0)  # |prelim| > a mu_T
        W = penalty_weights(spec, prelim).W
        assert W[0, 1] == 0.0

    def test_scad_small_entry_branch(self):
        spec = PenaltySpec(kind="scad", mu_T=0.5, a=3.7)
        prelim = np.full((2, 2), 0.2)
        W = penalty_weights(spec, prelim).W
        assert W[0, 1] == 1.0


class TestPenalizedObjective:
    def test_zero_mu_equals_neg_loglik(self):
        rng = rng_for(70)
        lam, sigma, S = random_exact_model(5, 2, rng)
        spec = PenaltySpec(kind="lasso", mu_T=0.0)
        W = penalty_weights(spec, sigma)
        assert penalized_objective(lam, sigma, S, spec, W) == neg_loglik(lam, sigma, S)

    def test_diagonal_sigma_no_penalty(self):
        rng = rng_for(71)
        lam = rng.normal(size=(4, 1))
        sigma = np.diag([1.0, 2.0, 0.5, 1.5])
        S = random_pd(4, rng)
        spec = PenaltySpec(kind="lasso", mu_T=5.0)
        W = penalty_weights(spec, sigma)
        assert penalized_objective(lam, sigma, S, spec, W) == neg_loglik(lam, sigma, S)

    def test_hand_instance(self):
        # oracle: dense formula plus an explicitly summed penalty
        rng = rng_for(72)
        lam = rng.normal(size=(3, 1))
        sigma = random_pd(3, rng)
        S = random_pd(3, rng)
        spec = PenaltySpec(kind="lasso", mu_T=0.37)
        W = penalty_weights(spec, sigma)
        sigma_y = lam @ lam.T + sigma
        plain = (np.linalg.slogdet(sigma_y)[1] + np.trace(S @ np.linalg.inv(sigma_y))) / 3
        pen = 0.0
        for i in range(3):
            for j in range(3):
                if i != j:
                    pen += 0.37 * abs(sigma[i, j]) / 3
        assert penalized_objective(lam, sigma, S, spec, W) == pytest.approx(plain + pen, abs=1e-10)


class TestMatrixSoftThreshold:
    def test_zero_threshold_returns_symmetrized(self, rng):
        B = rng.normal(size=(5, 5))
        out = matrix_soft_threshold(B, np.zeros((5, 5)))
        np.testing.assert_allclose(out, 0.5 * (B + B.T), atol=1e-15)

    def test_opposite_signs_cancel_after_symmetrizing(self):
        B = np.array([[1.0, 0.5], [-0.5, 1.0]])
        theta = np.array([[0.0, 0.2], [0.2, 0.0]])
        np.testing.assert_allclose(matrix_soft_threshold(B, theta), np.eye(2), atol=1e-15)

    def test_signed_shrinkage(self):
        B = np.array([[1.0, 0.5], [0.5, 1.0]])
        out = matrix_soft_threshold(B, np.array([[0.0, 0.2], [0.2, 0.0]]))
        assert out[0, 1] == pytest.approx(0.3, abs=1e-15)
        out = matrix_soft_threshold(-B, np.array([[0.0, 0.2], [0.2, 0.0]]))
        assert out[0, 1] == pytest.approx(-0.3, abs=1e-15)

    def test_full_shrinkage_to_diagonal(self, rng):
        B = rng.normal(size=(4, 4))
        theta = np.full((4, 4), 100.0)
        np.fill_diagonal(theta, 0.0)
        np.testing.assert_allclose(matrix_soft_threshold(B, theta), np.diag(np.diag(B)), atol=1e-15)

    def test_negative_theta_rejected(self):
        with pytest.raises(ParameterError):
            matrix_soft_threshold(np.eye(3), np.full((3, 3), -1.0))


class TestMmCovarianceStep:
    def test_stationary_point(self):
        rng = rng_for(73)
        sigma = random_pd(6, rng)
        spec = PenaltySpec(kind="lasso", mu_T=0.0, step_t=0.05)
        W = penalty_weights(spec, sigma)
        out = mm_covariance_step(sigma, sigma.copy(), spec, W)
        np.testing.assert_allclose(out, sigma, atol=1e-10)

    def test_two_by_two_hand_computation(self):
        # oracle: scalar arithmetic of one gradient step plus soft threshold
        sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
        s_uk = np.array([[1.5, 0.6], [0.6, 1.2]])
        t, mu = 0.1, 0.5
        spec = PenaltySpec(kind="lasso", mu_T=mu, step_t=t)
        W = penalty_weights(spec, sigma)
        inv = np.linalg.inv(sigma)
        B = sigma - t * (inv - inv @ s_uk @ inv)
        expected = B.copy()
        shrink = abs(B[0, 1]) - mu * t
        expected[0, 1] = expected[1, 0] = np.sign(B[0, 1]) * max(shrink, 0.0)
        out = mm_covariance_step(sigma, s_uk, spec, W)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_symmetric_positive_diagonal_property(self):
        rng = rng_for(74)
        spec = PenaltySpec(kind="lasso", mu_T=0.2)
        for _ in range(100):
            n = int(rng.integers(3, 12))
            sigma = random_pd(n, rng)
            s_uk = random_pd(n, rng)
            W = penalty_weights(spec, sigma)
            out = mm_covariance_step(sigma, s_uk, spec, W)
            np.testing.assert_array_equal(out, out.T)
            assert np.all(np.diag(out) > 0)


class TestEmCovarianceTarget:
    def test_fixed_point(self):
        rng = rng_for(75)
        lam, sigma, S = random_exact_model(7, 2, rng)
        lam_next, s_uk = em_covariance_target(lam, sigma, S)
        np.testing.assert_allclose(lam_next, lam, atol=1e-10)
        np.testing.assert_allclose(s_uk, sigma, atol=1e-10)

    def test_symmetric_output(self):
        rng = rng_for(76)
        lam = rng.normal(size=(8, 2))
        sigma = random_pd(8, rng)
        S = random_pd(8, rng)
        _, s_uk = em_covariance_target(lam, sigma, S)
        assert np.max(np.abs(s_uk - s_uk.T)) < 1e-12

    def test_scalar_hand_instance(self):
        # oracle: r = 1, N = 2 evaluated with explicit dense inverses
        lam = np.array([[1.0], [0.5]])
        sigma = np.array([[1.0, 0.2], [0.2, 2.0]])
        S = np.array([[2.0, 0.4], [0.4, 2.5]])
        sigma_y = lam @ lam.T + sigma
        syi = np.linalg.inv(sigma_y)
        M = lam.T @ syi @ S @ syi @ lam + np.eye(1) - lam.T @ syi @ lam
        A = S @ syi @ lam
        lam_expected = A @ np.linalg.inv(M)
        s_expected = S - A @ lam_expected.T - lam_expected @ A.T + lam_expected @ M @ lam_expected.T
        lam_next, s_uk = em_covariance_target(lam, sigma, S)
        np.testing.assert_allclose(lam_next, lam_expected, atol=1e-10)
        np.testing.assert_allclose(s_uk, s_expected, atol=1e-10)


class TestJointEstimate:
    def test_objective_trace_monotone(self):
        dgp = generate_dgp(20, 35, seed=80)
        spec = PenaltySpec(kind="adaptive_lasso", mu_T=0.08, gamma=1.0)
        est = joint_estimate(dgp.panel, 2, spec)
        trace = np.array(est.objective_trace)
        assert np.all(np.diff(trace) <= 1e-8 * np.maximum(1.0, np.abs(trace[:-1])))

    def test_final_covariance_pd_symmetric(self):
        dgp = generate_dgp(25, 40, seed=81)
        est = joint_estimate(dgp.panel, 2, PenaltySpec(kind="adaptive_lasso", mu_T=0.08))
        np.testing.assert_array_equal(est.Sigma_u, est.Sigma_u.T)
        assert np.linalg.eigvalsh(est.Sigma_u)[0] > 0

    def test_support_monotone_in_mu(self):
        # single proximal step from an identical state, lasso weights, same step size
        rng = rng_for(82)
        sigma = random_pd(10, rng)
        s_uk = random_pd(10, rng)
        supports = []
        for mu in [0.05, 0.2, 0.8]:
            spec = PenaltySpec(kind="lasso", mu_T=mu, step_t=0.05)
            W = penalty_weights(spec, sigma)
            out = mm_covariance_step(sigma, s_uk, spec, W)
            off = out - np.diag(np.diag(out))
            supports.append(set(zip(*np.nonzero(off))))
        assert supports[2] <= supports[1] <= supports[0]

    def test_lasso_permutation_equivariance(self):
        dgp = generate_dgp(12, 30, seed=83)
        spec = PenaltySpec(kind="lasso", mu_T=0.1)
        est = joint_estimate(dgp.panel, 2, spec, max_iter=5, tol=0.0)
        rng = rng_for(84)
        perm = rng.permutation(12)
        est_p = joint_estimate(PanelData(dgp.panel.Y[:, perm]), 2, spec, max_iter=5, tol=0.0)
        assert est.iterations == est_p.iterations
        np.testing.assert_allclose(est_p.Sigma_u, est.Sigma_u[np.ix_(perm, perm)], atol=1e-8)

    def test_huge_penalty_matches_dml_support(self):
        dgp = generate_dgp(15, 40, seed=85)
        spec = PenaltySpec(kind="lasso", mu_T=1e6)
        est = joint_estimate(dgp.panel, 2, spec)
        # dominant penalty zeroes the entire off-diagonal support, as for DML
        off = est.Sigma_u - np.diag(np.diag(est.Sigma_u))
        assert np.max(np.abs(off)) == 0.0
        dml = dml_estimate(dgp.panel, 2)
        assert canonical_correlations(est.loadings, dml.loadings)[-1] > 1 - 1e-3

    def test_iterative_weights_mode_runs(self):
        dgp = generate_dgp(12, 30, seed=86)
        spec = PenaltySpec(kind="adaptive_lasso", mu_T=0.08, gamma=1.0, weights="iterative")
        est = joint_estimate(dgp.panel, 2, spec, max_iter=50)
        assert np.linalg.eigvalsh(est.Sigma_u)[0] > 0

    def test_iterative_weights_require_adaptive_lasso(self):
        with pytest.raises(ParameterError):
            PenaltySpec(kind="lasso", mu_T=0.1, weights="iterative")


class TestDmlEstimate:
    def test_exactly_diagonal(self):
        dgp = generate_dgp(14, 30, seed=87)
        est = dml_estimate(dgp.panel, 2)
        off = est.Sigma_u - np.diag(np.diag(est.Sigma_u))
        assert np.max(np.abs(off)) == 0.0

    def test_objective_monotone(self):
        dgp = generate_dgp(16, 32, seed=88)
        est = dml_estimate(dgp.panel, 2)
        trace = np.array(est.objective_trace)
        assert np.all(np.diff(trace) <= 1e-8 * np.maximum(1.0, np.abs(trace[:-1])))

    def test_deterministic(self):
        dgp = generate_dgp(10, 26, seed=89)
        a = dml_estimate(dgp.panel, 2)
        b = dml_estimate(dgp.panel, 2)
        np.testing.assert_array_equal(a.loadings, b.loadings)
        assert a.objective_trace == b.objective_trace
