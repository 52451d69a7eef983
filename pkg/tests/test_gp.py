import math

import numpy as np
import pytest

from fnbo import gp
from fnbo.errors import DuplicateInputs, SingularCovariance

# ---------------------------------------------------------------------------
# Independent textbook oracle: own kernel formulas, dense solves, no caching.
# ---------------------------------------------------------------------------

def oracle_kernel(family, ls, os_, A, B):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for d in range(A.shape[1]):
        d2 += ((A[:, d, None] - B[None, :, d]) / ls[d]) ** 2
    if family == "rbf":
        return os_ * np.exp(-0.5 * d2)
    r = np.sqrt(d2)
    return os_ * (1 + math.sqrt(5) * r + 5 * d2 / 3) * np.exp(-math.sqrt(5) * r)


def oracle_posterior(state, Z):
    """Direct-solve GP conditional from the fitted state's hyperparameters."""
    cfg = state.config
    X = state.train_inputs
    y = (state.train_targets - state.y_mean) / state.y_scale
    K = oracle_kernel(cfg.family, cfg.lengthscales, cfg.outputscale, X, X)
    K += cfg.jitter * np.eye(len(X))
    kzx = oracle_kernel(cfg.family, cfg.lengthscales, cfg.outputscale, Z, X)
    kzz = oracle_kernel(cfg.family, cfg.lengthscales, cfg.outputscale, Z, Z)
    sol = np.linalg.solve(K, (y - state.mean))
    mean = state.mean + kzx @ sol
    cov = kzz - kzx @ np.linalg.solve(K, kzx.T)
    return state.y_mean + state.y_scale * mean, state.y_scale ** 2 * cov


def fit_random_state(rng, dim, n, family="matern52"):
    X = rng.uniform(size=(n, dim))
    y = np.sin(3 * X[:, 0]) + X @ rng.normal(size=dim) + rng.normal(scale=0.3, size=n)
    return gp.fit(X, y, family=family)


class TestFit:
    def test_single_point_interpolates(self):
        st = gp.fit(np.array([[0.4]]), np.array([3.0]))
        mu, var = gp.posterior_diag(st, np.array([[0.4]]))
        assert mu[0] == pytest.approx(3.0, abs=1e-6)

    def test_constant_targets(self):
        X = np.linspace(0, 1, 5)[:, None]
        st = gp.fit(X, np.full(5, 5.0))
        assert st.prior_mean == pytest.approx(5.0, abs=1e-6)
        mu, var = gp.posterior_diag(st, X)
        np.testing.assert_allclose(mu, 5.0, atol=1e-6)
        assert np.all(var < 1e-4)

    def test_recovers_lml_of_true_hyperparameters(self):
        # Oracle lower bound: the fitted LML must dominate the LML evaluated
        # at the generating hyperparameters.
        rng = np.random.default_rng(42)
        X = rng.uniform(size=(10, 2))
        true_ls = np.array([0.4, 0.7])
        K = oracle_kernel("matern52", true_ls, 1.5, X, X) + 1e-6 * np.eye(10)
        y = np.linalg.cholesky(K) @ rng.standard_normal(10)
        st = gp.fit(X, y)
        y_std = (y - st.y_mean) / st.y_scale
        fitted_lml, _ = gp.log_marginal_likelihood(
            X, y_std, "matern52", st.config.lengthscales, st.config.outputscale, st.mean
        )
        # True hyperparameters expressed on the same standardized scale.
        true_lml, _ = gp.log_marginal_likelihood(
            X, y_std, "matern52", true_ls, 1.5 / st.y_scale ** 2, -st.y_mean / st.y_scale
        )
        assert fitted_lml >= true_lml - 1e-3

    def test_duplicate_inputs_rejected(self):
        X = np.array([[0.1], [0.1], [0.5]])
        with pytest.raises(DuplicateInputs):
            gp.fit(X, np.array([1.0, 2.0, 3.0]))

    def test_cached_factorization_invariants(self):
        rng = np.random.default_rng(3)
        st = fit_random_state(rng, 3, 12)
        K = gp.kernel(st.config, st.train_inputs, st.train_inputs)
        K += st.config.jitter * np.eye(st.n)
        rel = np.linalg.norm(st.chol @ st.chol.T - K) / np.linalg.norm(K)
        assert rel < 1e-10
        # alpha reproduces the (standardized) targets through the jittered kernel
        recon = st.mean + K @ st.alpha
        resid = recon - st.standardized_targets()
        assert np.max(np.abs(resid)) < 1e-8


class TestPosterior:
    def test_training_point_reproduction(self):
        rng = np.random.default_rng(0)
        st = fit_random_state(rng, 2, 8)
        mu, var = gp.posterior_diag(st, st.train_inputs)
        np.testing.assert_allclose(mu, st.train_targets, atol=1e-4)
        assert np.all(var <= st.config.jitter * st.prior_variance * 10 + 1e-10)

    def test_prior_reversion_far_away(self):
        X = 0.02 * np.random.default_rng(1).uniform(size=(6, 1))
        y = np.array([0.5, 1.0, 1.5, 0.2, 0.9, 1.1])
        st = gp.fit(X, y)
        far = np.array([[0.02 + 20.0 * st.config.lengthscales[0]]])
        mu, var = gp.posterior_diag(st, far)
        assert abs(mu[0] - st.prior_mean) < 0.01 * math.sqrt(st.prior_variance)
        assert abs(var[0] - st.prior_variance) < 0.01 * st.prior_variance

    def test_matches_dense_oracle_small(self):
        rng = np.random.default_rng(7)
        st = fit_random_state(rng, 2, 3)
        Z = rng.uniform(size=(2, 2))
        mu, cov = gp.posterior(st, Z)
        omu, ocov = oracle_posterior(st, Z)
        np.testing.assert_allclose(mu, omu, atol=1e-8)
        np.testing.assert_allclose(cov, ocov, atol=1e-8)

    def test_oracle_equivalence_sweep(self):
        # 50 random instances across dims 1..7, both kernel families.
        rng = np.random.default_rng(123)
        for i in range(50):
            dim = int(rng.integers(1, 8))
            n = int(rng.integers(2, 26))
            family = "rbf" if i % 2 else "matern52"
            st = fit_random_state(rng, dim, n, family=family)
            Z = rng.uniform(size=(4, dim))
            mu, cov = gp.posterior(st, Z)
            omu, ocov = oracle_posterior(st, Z)
            scale = max(1.0, np.max(np.abs(omu)))
            np.testing.assert_allclose(mu, omu, atol=1e-8 * scale, rtol=1e-8)
            np.testing.assert_allclose(cov, ocov, atol=1e-8 * max(1.0, st.prior_variance))
            w = np.linalg.eigvalsh(cov)
            assert w.min() > -1e-8

    def test_dimension_mismatch(self):
        st = gp.fit(np.array([[0.1, 0.2]]), np.array([1.0]))
        with pytest.raises(Exception):
            gp.posterior(st, np.array([[0.1]]))


class TestLogMarginalLikelihood:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(size=(9, 2))
        y = rng.normal(size=9)
        for trial in range(20):
            family = "rbf" if trial % 2 else "matern52"
            ls = rng.uniform(0.2, 2.0, size=2)
            os_ = rng.uniform(0.3, 3.0)
            mean = rng.normal()
            val, grad = gp.log_marginal_likelihood(X, y, family, ls, os_, mean)
            theta = np.concatenate([ls, [os_, mean]])
            for j in range(4):
                h = 1e-5 * max(abs(theta[j]), 1.0)
                tp, tm = theta.copy(), theta.copy()
                tp[j] += h
                tm[j] -= h
                vp, _ = gp.log_marginal_likelihood(X, y, family, tp[:2], tp[2], tp[3])
                vm, _ = gp.log_marginal_likelihood(X, y, family, tm[:2], tm[2], tm[3])
                fd = (vp - vm) / (2 * h)
                assert abs(grad[j] - fd) <= 1e-4 * max(1.0, abs(fd))


class TestFantasize:
    def test_posterior_pins_fantasy_value(self):
        rng = np.random.default_rng(2)
        st = fit_random_state(rng, 2, 6)
        z = np.array([0.42, 0.58])
        st2 = gp.fantasize(st, z, 1.234)
        mu, var = gp.posterior_diag(st2, z[None, :])
        assert mu[0] == pytest.approx(1.234, abs=1e-5)
        assert var[0] <= 1e-6 * max(1.0, st.prior_variance)

    def test_mean_fantasy_leaves_uncorrelated_points_alone(self):
        X = np.array([[0.1], [0.2]])
        y = np.array([0.0, 0.5])
        st = gp.fit(X, y)
        z = np.array([0.15])
        mu_z, _ = gp.posterior_diag(st, z[None, :])
        st2 = gp.fantasize(st, z, float(mu_z[0]))
        # points ~20 lengthscales away have (numerically) zero covariance to z
        far = np.array([[0.15 + 25.0 * st.config.lengthscales[0]]])
        m1, _ = gp.posterior_diag(st, far)
        m2, _ = gp.posterior_diag(st2, far)
        assert abs(m1[0] - m2[0]) < 1e-8

    def test_matches_refit_oracle(self):
        # Conditioning via rank-1 update == rebuilding the GP on the augmented
        # data with identical hyperparameters.
        rng = np.random.default_rng(9)
        st = fit_random_state(rng, 2, 10)
        z = rng.uniform(size=2)
        y_new = 0.7
        st2 = gp.fantasize(st, z, y_new)
        aug = gp.GPState(
            config=st.config,
            train_inputs=np.vstack([st.train_inputs, z[None, :]]),
            train_targets=np.concatenate([st.train_targets, [y_new]]),
            y_mean=st.y_mean,
            y_scale=st.y_scale,
            mean=st.mean,
            chol=None,
            alpha=None,
        )
        K = gp.kernel(st.config, aug.train_inputs, aug.train_inputs)
        aug.chol = np.linalg.cholesky(K + st.config.jitter * np.eye(st.n + 1))
        resid = aug.standardized_targets() - st.mean
        aug.alpha = np.linalg.solve(K + st.config.jitter * np.eye(st.n + 1), resid)
        probe = rng.uniform(size=(20, 2))
        m1, v1 = gp.posterior_diag(st2, probe)
        m2, v2 = gp.posterior_diag(aug, probe)
        np.testing.assert_allclose(m1, m2, atol=1e-8)
        np.testing.assert_allclose(v1, v2, atol=1e-8)

    def test_duplicate_consistent_and_inconsistent(self):
        rng = np.random.default_rng(4)
        st = fit_random_state(rng, 1, 5)
        z = st.train_inputs[2]
        ok = gp.fantasize(st, z, st.train_targets[2])
        mu, var = gp.posterior_diag(ok, z[None, :])
        assert mu[0] == pytest.approx(st.train_targets[2], abs=1e-5)
        with pytest.raises(SingularCovariance):
            gp.fantasize(st, z, st.train_targets[2] + 10.0)

    def test_tower_property(self):
        # Averaging the fantasized mean over fantasy draws recovers the
        # current posterior mean (one-step marginalization).
        rng = np.random.default_rng(21)
        st = fit_random_state(rng, 1, 7)
        z = np.array([0.45])
        probe = np.array([[0.5], [0.3], [0.9]])
        mu_z, var_z = gp.posterior_diag(st, z[None, :])
        draws = mu_z[0] + math.sqrt(var_z[0]) * rng.standard_normal(4000)
        acc = np.zeros(3)
        ens = gp.FantasyEnsemble(st, z, draws)
        means, _ = ens.posterior_diag(probe)
        acc = means.mean(axis=1)
        mu_p, var_p = gp.posterior_diag(st, probe)
        # fantasized means are linear in the fantasy draw, so the error is
        # pure MC noise of the draws
        se = np.sqrt(var_p) / math.sqrt(len(draws))
        assert np.all(np.abs(acc - mu_p) <= np.maximum(3 * se, 1e-3))

    def test_ensemble_columns_match_individual_fantasies(self):
        rng = np.random.default_rng(30)
        st = fit_random_state(rng, 2, 8)
        z = rng.uniform(size=2)
        ys = np.array([0.1, 0.9, -0.4])
        ens = gp.FantasyEnsemble(st, z, ys)
        probe = rng.uniform(size=(5, 2))
        means, var = ens.posterior_diag(probe)
        for i, yv in enumerate(ys):
            sti = gp.fantasize(st, z, yv)
            mi, vi = gp.posterior_diag(sti, probe)
            np.testing.assert_allclose(means[:, i], mi, atol=1e-10)
            np.testing.assert_allclose(var, vi, atol=1e-10)


class TestSamplePath:
    def test_interpolates_training_data(self):
        rng = np.random.default_rng(5)
        st = fit_random_state(rng, 2, 10)
        for seed in range(5):
            f = gp.sample_path(st, seed=seed)
            vals = f(st.train_inputs)
            tol = 0.05 * math.sqrt(st.prior_variance)
            np.testing.assert_allclose(vals, st.train_targets, atol=tol)

    def test_mean_of_many_paths_matches_posterior(self):
        rng = np.random.default_rng(6)
        st = fit_random_state(rng, 1, 6)
        probe = np.array([[0.35], [0.77]])
        vals = np.array([gp.sample_path(st, seed=s)(probe) for s in range(2000)])
        mu, var = gp.posterior_diag(st, probe)
        se = np.sqrt(vals.var(axis=0) / vals.shape[0])
        np.testing.assert_array_less(np.abs(vals.mean(axis=0) - mu), 3 * se + 1e-9)

    def test_seed_determinism(self):
        rng = np.random.default_rng(8)
        st = fit_random_state(rng, 2, 5)
        probe = rng.uniform(size=(7, 2))
        a = gp.sample_path(st, seed=123)(probe)
        b = gp.sample_path(st, seed=123)(probe)
        np.testing.assert_array_equal(a, b)

    def test_scalar_input(self):
        st = gp.fit(np.array([[0.5]]), np.array([2.0]))
        f = gp.sample_path(st, seed=0)
        assert isinstance(f(np.array([0.5])), float)
