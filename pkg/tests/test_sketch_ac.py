import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchkf.errors import ConfigurationError, ContractError
from sketchkf.kalman import correct_batch
from sketchkf.sketch_ac import (
    BlockDecision, CensorConfig, ThresholdController, ac_kf_step, ac_lms_sketch,
    block_censor, calibrate_threshold, default_mu, entry_censor, tune_threshold,
)
from sketchkf.statespace import GaussianBelief, MeasurementBatch

from conftest import random_belief


def _batch(rng, D, p, scale=1.0):
    return MeasurementBatch(0, scale * rng.standard_normal(D), rng.standard_normal((D, p)), noise_var=rng.uniform(0.5, 2.0, D))


class TestBlockCensor:
    def test_zero_threshold(self, rng):
        prior = random_belief(rng, 2)
        assert block_censor(prior, _batch(rng, 3, 2), 0.0) is BlockDecision.ALL

    def test_zero_innovation(self, rng):
        prior = random_belief(rng, 2)
        X = rng.standard_normal((4, 2))
        b = MeasurementBatch(0, X @ prior.mean, X, noise_var=np.ones(4))
        assert block_censor(prior, b, 1e-9) is BlockDecision.NONE

    def test_dense_whitening_oracle(self):
        prior = GaussianBelief([0.5], [[2.0]])
        X = np.array([[1.0], [-1.0]])
        b = MeasurementBatch(0, np.array([2.0, 1.0]), X, noise_var=np.array([1.0, 3.0]))
        S = X @ prior.cov @ X.T + np.diag([1.0, 3.0])
        w, V = np.linalg.eigh(S)
        norm = np.linalg.norm(V @ np.diag(w**-0.5) @ V.T @ (b.y - X @ prior.mean))
        for tau in (0.5 * norm, 0.999 * norm, 1.001 * norm, 2 * norm):
            expect = BlockDecision.ALL if norm > tau else BlockDecision.NONE
            assert block_censor(prior, b, tau) is expect


class TestEntryCensor:
    def test_direct_rule(self):
        X = np.eye(3)
        b = MeasurementBatch(0, np.array([0.5, 1.5, 3.0]), X, noise_var=np.ones(3))
        np.testing.assert_array_equal(entry_censor(np.zeros(3), b, 1.0), [1, 2])

    def test_zero_threshold_keeps_nonzero_innovations(self):
        b = MeasurementBatch(0, np.array([0.0, 1.0, -2.0]), np.eye(3), noise_var=np.ones(3))
        np.testing.assert_array_equal(entry_censor(np.zeros(3), b, 0.0), [1, 2])

    def test_huge_threshold(self, rng):
        assert entry_censor(np.zeros(2), _batch(rng, 10, 2), 1e12).size == 0

    def test_zero_sigma_rejected(self):
        with pytest.raises(ContractError):
            entry_censor(np.zeros(2), MeasurementBatch(0, np.ones(2), np.eye(2), noise_var=np.array([1.0, 0.0])), 1.0)


class TestAcLms:
    def test_mu_zero_is_entry_censoring(self, rng):
        prior = random_belief(rng, 3)
        b = _batch(rng, 40, 3, scale=3.0)
        sig = np.sqrt(b.noise_var)
        for tau in (0.3, 1.0, 2.5):
            rep = ac_lms_sketch(prior, b, CensorConfig(tau, mu=0.0))
            innov = np.abs(b.y - b.X @ prior.mean)
            np.testing.assert_array_equal(rep.selected, np.flatnonzero(innov > tau / sig))
            np.testing.assert_array_equal(rep.final_inner_estimate, prior.mean)
            norm = ac_lms_sketch(prior, b, CensorConfig(tau, mu=0.0, normalize_innovation=True))
            np.testing.assert_array_equal(norm.selected, entry_censor(prior.mean, b, tau))

    def test_zero_threshold_selects_all(self, rng):
        b = _batch(rng, 25, 3)
        for mu in (0.0, 0.01, None):
            assert ac_lms_sketch(random_belief(rng, 3), b, CensorConfig(0.0, mu=mu)).selected.size == 25

    def test_duplicate_row_residual_shrinks(self):
        x = np.array([1.0, 2.0])
        b = MeasurementBatch(0, np.array([3.0, 3.0]), np.vstack([x, x]), noise_var=np.ones(2))
        mu = 0.1
        rep = ac_lms_sketch(GaussianBelief(np.zeros(2), np.eye(2)), b, CensorConfig(0.1, mu=mu))
        np.testing.assert_array_equal(rep.selected, [0, 1])
        r1 = 3.0
        r2 = 3.0 - x @ (mu * x * r1)
        assert abs(r2) < abs(r1)
        np.testing.assert_allclose(rep.final_inner_estimate, mu * x * r1 + mu * x * r2, atol=1e-14)

    def test_hand_pass(self):
        # rows: kept, censored (residual after step below threshold), kept
        X = np.array([[1.0], [1.0], [1.0]])
        b = MeasurementBatch(0, np.array([2.0, 1.2, -1.0]), X, noise_var=np.ones(3))
        rep = ac_lms_sketch(GaussianBelief([0.0], [[1.0]]), b, CensorConfig(0.5, mu=0.5))
        np.testing.assert_array_equal(rep.selected, [0, 2])
        np.testing.assert_allclose(rep.final_inner_estimate, [1.0 + 0.5 * (-2.0)])

    def test_keeps_full_covariance_block(self, rng):
        from sketchkf.statespace import ar1_covariance
        R = ar1_covariance(6, 0.5)
        b = MeasurementBatch(0, 5 * rng.standard_normal(6), rng.standard_normal((6, 2)), R=R)
        rep = ac_lms_sketch(GaussianBelief(np.zeros(2), np.eye(2)), b, CensorConfig(0.5, mu=0.0))
        S = rep.selected
        np.testing.assert_array_equal(rep.sketched.R, R[np.ix_(S, S)])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 4), st.floats(0, 3), st.floats(0, 0.2), st.booleans(), st.integers(0, 2**31))
    def test_retained_rows_clear_threshold(self, D, p, tau, mu, normalize, seed):
        r = np.random.default_rng(seed)
        prior = random_belief(r, p)
        b = _batch(r, D, p, scale=2.0)
        rep = ac_lms_sketch(prior, b, CensorConfig(tau, mu=mu, normalize_innovation=normalize))
        S = rep.selected
        assert np.all(np.diff(S) > 0) and rep.sketched.size == S.size
        np.testing.assert_array_equal(rep.sketched.X, b.X[S])
        # replay the pass to recover each row's residual
        sig = np.sqrt(b.noise_var)
        theta = prior.mean.copy()
        for i in range(D):
            e = b.y[i] - b.X[i] @ theta
            bound = tau * sig[i] if normalize else tau / sig[i]
            if i in set(S.tolist()):
                assert abs(e) > bound
                theta = theta + mu * b.X[i] * e
            else:
                assert abs(e) <= bound

    def test_linear_cost(self):
        rng = np.random.default_rng(0)
        prior = GaussianBelief(np.zeros(8), np.eye(8))

        def cost(D):
            b = _batch(rng, D, 8)
            cfg = CensorConfig(1.0, mu=0.001)
            ac_lms_sketch(prior, b, cfg)
            best = np.inf
            for _ in range(15):
                t = time.perf_counter()
                ac_lms_sketch(prior, b, cfg)
                best = min(best, time.perf_counter() - t)
            return best

        assert cost(40000) < 3.0 * cost(20000)


class TestAcKfStep:
    def test_all_selected_is_full(self, rng):
        prior = random_belief(rng, 3)
        b = _batch(rng, 12, 3)
        post = ac_kf_step(prior, b, CensorConfig(0.0))
        ref = correct_batch(prior, b)
        np.testing.assert_allclose(post.mean, ref.mean, atol=1e-12)
        np.testing.assert_allclose(post.cov, ref.cov, atol=1e-12)

    def test_empty_selection_returns_prior(self, rng):
        prior = random_belief(rng, 3)
        assert ac_kf_step(prior, _batch(rng, 12, 3), CensorConfig(1e12)) is prior


class TestController:
    def test_fixed_point(self):
        assert tune_threshold(1.3, 10, 10) == 1.3

    def test_quadruple_count_doubles(self):
        assert tune_threshold(1.5, 40, 10, gain=0.5) == pytest.approx(3.0)

    def test_floor(self):
        assert tune_threshold(1e-8, 0, 10) == 1e-8

    def test_step_clipped(self):
        assert tune_threshold(1.0, 0, 10) == 0.5
        assert tune_threshold(1.0, 1000, 10) == 2.0
        assert tune_threshold(1.0, 1000, 10, max_step=100.0) == pytest.approx(10.0)

    def test_negative_target(self):
        with pytest.raises(ConfigurationError):
            tune_threshold(1.0, 3, -1)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            CensorConfig(-1.0)
        with pytest.raises(ConfigurationError):
            CensorConfig(1.0, mu=-0.1)

    def test_default_mu(self):
        assert default_mu(np.array([[1.0, 1.0], [0.0, 2.0]])) == pytest.approx(0.125)

    def test_stationary_stream(self):
        rng = np.random.default_rng(7)
        p, D, d = 5, 200, 20
        prior = GaussianBelief(np.zeros(p), np.eye(p))
        ctrl = ThresholdController(1.0, d)
        for _ in range(100):
            b = MeasurementBatch(0, rng.standard_normal(D) * 2, rng.standard_normal((D, p)), noise_var=np.ones(D))
            ctrl.update(ac_lms_sketch(prior, b, CensorConfig(ctrl.tau, mu=0.0)).selected.size)
        assert abs(np.mean(ctrl.history[19:]) - d) <= 0.2 * d

    def test_calibration_hits_target(self, rng):
        prior = GaussianBelief(np.zeros(3), np.eye(3))
        b = _batch(rng, 300, 3, scale=2.0)
        count = lambda t: ac_lms_sketch(prior, b, CensorConfig(t, mu=0.0)).selected.size
        assert abs(count(calibrate_threshold(count, 30)) - 30) <= 1
