import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsefactor import (
    InvalidInputError,
    ParameterError,
    ThresholdRule,
    adaptive_tau,
    find_min_positive_C,
    generate_dgp,
    min_eigen_curve,
    pca_residual_covariance,
    poet_estimate,
    threshold_value,
)

from conftest import rng_for


class TestThresholdValue:
    def test_hard_below_and_above(self):
        assert threshold_value(0.05, 0.1, "hard") == 0.0
        assert threshold_value(0.5, 0.1, "hard") == 0.5

    def test_soft(self):
        assert threshold_value(0.5, 0.2, "soft") == pytest.approx(0.3, abs=1e-15)
        assert threshold_value(-0.5, 0.2, "soft") == pytest.approx(-0.3, abs=1e-15)

    def test_scad_identity_region(self):
        # beyond a*tau the SCAD kernel is the identity
        for tau in [0.1, 1.0, 2.5]:
            assert threshold_value(5 * tau, tau, "scad", a=3.7) == pytest.approx(5 * tau, abs=1e-15)

    def test_scad_piecewise_oracle(self):
        # oracle: evaluate each printed branch directly
        a, tau = 3.7, 0.4
        z = 1.5 * tau
        assert threshold_value(z, tau, "scad", a=a) == pytest.approx(np.sign(z) * (abs(z) - tau))
        z = 3.0 * tau
        expected = ((a - 1) * z - np.sign(z) * a * tau) / (a - 2)
        assert threshold_value(z, tau, "scad", a=a) == pytest.approx(expected, rel=1e-14)

    def test_negative_tau_rejected(self):
        with pytest.raises(ParameterError):
            threshold_value(1.0, -0.1, "hard")

    @settings(max_examples=300, deadline=None)
    @given(
        z=st.floats(-50, 50, allow_nan=False),
        tau=st.floats(0, 10, allow_nan=False),
        kernel=st.sampled_from(["hard", "soft", "scad"]),
    )
    def test_kill_and_proximity_axioms(self, z, tau, kernel):
        s = threshold_value(z, tau, kernel, a=3.7)
        if abs(z) < tau:
            assert s == 0.0
        assert abs(s - z) <= tau + 1e-12 * max(1.0, tau)

    @settings(max_examples=300, deadline=None)
    @given(z=st.floats(-50, 50, allow_nan=False), tau=st.floats(1e-6, 10, allow_nan=False))
    def test_near_unbiasedness_axiom(self, z, tau):
        # |s(z) - z| <= a tau^2 whenever |z| > b tau, with b = a for SCAD
        a = 3.7
        if abs(z) > a * tau:
            assert abs(threshold_value(z, tau, "scad", a=a) - z) <= a * tau**2
            assert threshold_value(z, tau, "hard") == z


class TestAdaptiveTau:
    def test_correlation_identity_arithmetic(self):
        # oracle: the rate evaluated by hand for N = T = 100
        rule = ThresholdRule("hard", "correlation", C=1.0)
        tau = adaptive_tau(np.eye(100), rule, 100, 100)
        off = tau[0, 1]
        assert abs(off - (0.1 + np.sqrt(np.log(100) / 100))) < 1e-14
        assert np.all(np.diag(tau) == 0)

    def test_linear_in_C(self, rng):
        A = rng.normal(size=(6, 6))
        R = A @ A.T + np.eye(6)
        t1 = adaptive_tau(R, ThresholdRule("hard", "correlation", C=0.7), 6, 40)
        t2 = adaptive_tau(R, ThresholdRule("hard", "correlation", C=1.4), 6, 40)
        np.testing.assert_allclose(t2, 2 * t1, atol=1e-14)

    def test_universal_ignores_R(self, rng):
        rule = ThresholdRule("hard", "universal", C=1.0)
        A = rng.normal(size=(5, 5))
        R1 = A @ A.T + np.eye(5)
        R2 = 3.0 * R1 + np.eye(5)
        np.testing.assert_array_equal(adaptive_tau(R1, rule, 5, 30), adaptive_tau(R2, rule, 5, 30))

    def test_nonpositive_diagonal_rejected(self):
        R = np.eye(4)
        R[2, 2] = 0.0
        with pytest.raises(InvalidInputError):
            adaptive_tau(R, ThresholdRule("hard", "correlation", C=1.0), 4, 20)


class TestPoetEstimate:
    def test_giant_C_keeps_only_diagonal(self):
        dgp = generate_dgp(12, 30, seed=5)
        R = pca_residual_covariance(dgp.panel, 2)
        est = poet_estimate(dgp.panel, 2, ThresholdRule("hard", "correlation", C=1e6))
        np.testing.assert_allclose(est.Sigma, np.diag(np.diag(R)), atol=1e-15)
        assert est.support_size == 0
        assert est.min_eigenvalue == pytest.approx(np.min(np.diag(R)))

    def test_zero_C_returns_R(self):
        dgp = generate_dgp(10, 25, seed=6)
        R = pca_residual_covariance(dgp.panel, 2)
        est = poet_estimate(dgp.panel, 2, ThresholdRule("scad", "correlation", C=0.0))
        np.testing.assert_allclose(est.Sigma, R, atol=1e-12)

    def test_hand_thresholded_matrix(self):
        # oracle: threshold a known 4x4 matrix entry by entry by hand
        dgp = generate_dgp(4, 12, seed=9)
        R = pca_residual_covariance(dgp.panel, 2)
        rule = ThresholdRule("hard", "correlation", C=0.5)
        omega = 1 / np.sqrt(4) + np.sqrt(np.log(4) / 12)
        expected = R.copy()
        for i in range(4):
            for j in range(4):
                if i != j:
                    tau = 0.5 * np.sqrt(R[i, i] * R[j, j]) * omega
                    expected[i, j] = R[i, j] if abs(R[i, j]) > tau else 0.0
        est = poet_estimate(dgp.panel, 2, rule)
        np.testing.assert_allclose(est.Sigma, expected, atol=1e-14)

    def test_support_shrinks_with_C(self):
        dgp = generate_dgp(20, 40, seed=10)
        supports = []
        for C in [0.2, 0.5, 0.9, 1.4]:
            est = poet_estimate(dgp.panel, 2, ThresholdRule("hard", "correlation", C=C))
            supports.append(set(zip(*np.nonzero(est.Sigma - np.diag(np.diag(est.Sigma))))))
        for small, large in zip(supports[1:], supports[:-1]):
            assert small <= large

    def test_exact_symmetry(self):
        dgp = generate_dgp(15, 30, seed=11)
        est = poet_estimate(dgp.panel, 2, ThresholdRule("scad", "correlation", C=0.6))
        np.testing.assert_array_equal(est.Sigma, est.Sigma.T)

    def test_rule_validation(self):
        with pytest.raises(ParameterError):
            ThresholdRule("hard", "correlation", C=-0.1)
        with pytest.raises(ParameterError):
            ThresholdRule("scad", "correlation", C=1.0, a=2.0)
        with pytest.raises(ParameterError):
            ThresholdRule("banana", "correlation", C=1.0)


class TestMinPositiveC:
    def test_diagonal_truth_large_T_needs_no_thresholding(self):
        zeros = np.zeros(20)
        dgp = generate_dgp(20, 300, seed=3, coeffs=(zeros, zeros, zeros))
        c_min = find_min_positive_C(dgp.panel, 2, "scad", "correlation")
        assert c_min == 0.0

    def test_positive_beyond_returned_constant(self):
        dgp = generate_dgp(60, 40, seed=21)  # N > T: rank-deficient residual covariance
        c_min = find_min_positive_C(dgp.panel, 2, "scad", "correlation")
        assert c_min > 0
        R = pca_residual_covariance(dgp.panel, 2)
        for c in [c_min + 0.01, c_min + 0.3, 2 * c_min + 1.0]:
            pairs = min_eigen_curve(dgp.panel, 2, "scad", "correlation", [c])
            assert pairs[0][1] > 0

    def test_grid_validation(self):
        dgp = generate_dgp(10, 20, seed=2)
        with pytest.raises(ParameterError):
            find_min_positive_C(dgp.panel, 2, "scad", "correlation", grid=[0.0, 0.1])


class TestMinEigenCurve:
    def test_single_point_matches_poet(self):
        dgp = generate_dgp(12, 26, seed=13)
        rule = ThresholdRule("scad", "correlation", C=0.8)
        est = poet_estimate(dgp.panel, 2, rule)
        pairs = min_eigen_curve(dgp.panel, 2, "scad", "correlation", [0.8])
        assert pairs[0] == (0.8, pytest.approx(est.min_eigenvalue, abs=1e-12))

    def test_right_end_is_min_diagonal(self):
        dgp = generate_dgp(12, 26, seed=14)
        R = pca_residual_covariance(dgp.panel, 2)
        pairs = min_eigen_curve(dgp.panel, 2, "hard", "correlation", [0.0, 1e6])
        assert pairs[-1][1] == pytest.approx(np.min(np.diag(R)), rel=1e-12)

    def test_order_preserved(self):
        dgp = generate_dgp(10, 22, seed=15)
        cs = [1.0, 0.2, 0.6]
        pairs = min_eigen_curve(dgp.panel, 2, "hard", "correlation", cs)
        assert [p[0] for p in pairs] == cs

    def test_rejects_empty_or_negative(self):
        dgp = generate_dgp(10, 22, seed=16)
        with pytest.raises(ParameterError):
            min_eigen_curve(dgp.panel, 2, "hard", "correlation", [])
        with pytest.raises(ParameterError):
            min_eigen_curve(dgp.panel, 2, "hard", "correlation", [-0.5])
