import math

import numpy as np
import pytest
from scipy import special

from glik.bayes_linear import (
    ADFDiagnostics,
    FeatureMap,
    adf_update,
    fit_batch,
    init_posterior,
    mc_class_probs,
    predict_proba,
    sgd_momentum_fit,
    update_many,
    update_one,
)
from glik.data import separable_binary
from glik.errors import DomainError
from glik.likelihood_approx import BinaryPseudoObs, ClassPseudoObs

from oracles import gaussian_kl


def _random_instance(rng, N, D, K):
    Phi = rng.normal(size=(N, D))
    Y = rng.normal(size=(N, K))
    V = rng.uniform(0.2, 3.0, size=(N, K))
    return Phi, Y, V


def _sequential(state, Phi, Y, V, order):
    for n in order:
        state = update_one(state, Phi[n], (Y[n], V[n]))
    return state


class TestFeatureMap:
    def test_identity(self):
        X = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(FeatureMap.identity()(X), X)

    def test_random_relu_reconstructible(self):
        a, b = FeatureMap.random_relu(5, 32, seed=7), FeatureMap.random_relu(5, 32, seed=7)
        X = np.random.default_rng(0).normal(size=(4, 5))
        np.testing.assert_array_equal(a(X), b(X))
        assert np.all(a(X) >= 0) and a(X).shape == (4, 32)

    def test_random_relu_weight_scale(self):
        fm = FeatureMap.random_relu(400, 2000, seed=1)
        assert fm.weights.var() == pytest.approx(1 / 400, rel=0.02)

    def test_dimension_check(self):
        with pytest.raises(DomainError):
            FeatureMap.random_relu(3, 8)(np.zeros((2, 4)))


class TestInitAndUpdate:
    def test_init(self):
        s = init_posterior(2, 1, 1.0)
        np.testing.assert_array_equal(s.means, np.zeros((1, 2)))
        np.testing.assert_array_equal(s.covs[0], np.eye(2))
        _, var = s.logit_moments([1.0, 0.0])
        assert var[0, 0] == 1.0
        s3 = init_posterior(1, 3, 4.0)
        np.testing.assert_array_equal(s3.covs[:, 0, 0], [4.0, 4.0, 4.0])

    def test_conjugate_1d(self):
        s = update_one(init_posterior(1, 1), [1.0], BinaryPseudoObs(2.0, 1.0))
        assert s.means[0, 0] == pytest.approx(1.0, abs=1e-14)
        assert s.covs[0, 0, 0] == pytest.approx(0.5, abs=1e-14)
        s = update_one(s, [1.0], BinaryPseudoObs(2.0, 1.0))
        assert s.means[0, 0] == pytest.approx(4 / 3, abs=1e-14)
        assert s.covs[0, 0, 0] == pytest.approx(1 / 3, abs=1e-14)

    def test_order_invariance_pair(self):
        rng = np.random.default_rng(0)
        Phi, Y, V = _random_instance(rng, 2, 3, 2)
        s0 = init_posterior(3, 2)
        ab, ba = _sequential(s0, Phi, Y, V, [0, 1]), _sequential(s0, Phi, Y, V, [1, 0])
        np.testing.assert_allclose(ab.means, ba.means, atol=1e-10)
        np.testing.assert_allclose(ab.covs, ba.covs, atol=1e-10)

    def test_class_pseudo_obs_input(self):
        obs = ClassPseudoObs(np.array([1.0, -1.0]), np.array([0.5, 2.0]))
        s = update_one(init_posterior(2, 2), [1.0, 0.0], obs)
        assert s.means[0, 0] == pytest.approx(1.0 / 1.5)
        assert s.means[1, 0] == pytest.approx(-1.0 / 3.0)

    def test_mismatched_outputs(self):
        with pytest.raises(DomainError):
            update_one(init_posterior(2, 3), [1.0, 0.0], BinaryPseudoObs(0.0, 1.0))

    def test_contraction_and_symmetry(self):
        rng = np.random.default_rng(1)
        Phi, Y, V = _random_instance(rng, 60, 6, 3)
        s = init_posterior(6, 3, 2.0)
        for n in range(60):
            new = update_one(s, Phi[n], (Y[n], V[n]))
            assert np.all(np.trace(new.covs, axis1=1, axis2=2) < np.trace(s.covs, axis1=1, axis2=2))
            s = new
        for S in s.covs:
            assert np.max(np.abs(S - S.T)) <= 1e-10
            np.linalg.cholesky(S)
            assert np.max(np.linalg.eigvalsh(S)) <= 2.0 + 1e-8

    def test_many_updates_stay_spd(self):
        rng = np.random.default_rng(2)
        s = init_posterior(3, 1)
        Phi = rng.normal(size=(20_000, 3))
        for phi in Phi:
            s = update_one(s, phi, (np.zeros(1), np.array([0.05])))
        np.linalg.cholesky(s.covs[0])
        assert np.max(np.abs(s.covs[0] - s.covs[0].T)) <= 1e-10


class TestBatchEquivalence:
    def test_empty_batch(self):
        s0 = init_posterior(3, 2)
        assert fit_batch(s0, np.zeros((0, 3)), (np.zeros((0, 2)), np.ones((0, 2)))) is s0
        assert update_many(s0, np.zeros((0, 3)), np.zeros((0, 2)), np.ones((0, 2))) is s0

    def test_single_observation(self):
        s0 = init_posterior(2, 2)
        obs = ClassPseudoObs(np.array([0.3, -0.7]), np.array([0.4, 1.2]))
        a, b = update_one(s0, [0.5, -1.0], obs), fit_batch(s0, [[0.5, -1.0]], [obs])
        np.testing.assert_allclose(a.means, b.means, atol=1e-12)
        np.testing.assert_allclose(a.covs, b.covs, atol=1e-12)

    def test_large_instance(self):
        rng = np.random.default_rng(3)
        Phi, Y, V = _random_instance(rng, 200, 20, 3)
        s0 = init_posterior(20, 3)
        seq = _sequential(s0, Phi, Y, V, range(200))
        batch = fit_batch(s0, Phi, (Y, V))
        assert np.max(np.abs(seq.means - batch.means)) <= 1e-8
        assert np.max(np.abs(seq.covs - batch.covs)) <= 1e-8

    @pytest.mark.parametrize("seed", range(20))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(100 + seed)
        N, D, K = int(rng.integers(1, 101)), int(rng.integers(1, 11)), int(rng.integers(1, 5))
        Phi, Y, V = _random_instance(rng, N, D, K)
        s0 = init_posterior(D, K, float(rng.uniform(0.5, 3)))
        batch = fit_batch(s0, Phi, (Y, V))
        for _ in range(5):
            seq = _sequential(s0, Phi, Y, V, rng.permutation(N))
            assert np.max(np.abs(seq.means - batch.means)) <= 1e-8
            assert np.max(np.abs(seq.covs - batch.covs)) <= 1e-8

    def test_block_updates_match_sequential(self):
        rng = np.random.default_rng(4)
        Phi, Y, V = _random_instance(rng, 90, 8, 2)
        s0 = init_posterior(8, 2)
        s = s0
        for start in range(0, 90, 25):
            sl = slice(start, start + 25)
            s = update_many(s, Phi[sl], Y[sl], V[sl])
        seq = _sequential(s0, Phi, Y, V, range(90))
        np.testing.assert_allclose(s.means, seq.means, atol=1e-9)
        np.testing.assert_allclose(s.covs, seq.covs, atol=1e-9)

    def test_ridge_solution(self):
        rng = np.random.default_rng(5)
        Phi = rng.normal(size=(150, 12))
        y = rng.normal(size=150)
        v, prior = 0.7, 2.0
        state = fit_batch(init_posterior(12, 1, prior), Phi, (y[:, None], np.full((150, 1), v)))
        ridge = np.linalg.solve(Phi.T @ Phi + (v / prior) * np.eye(12), Phi.T @ y)
        assert np.max(np.abs(state.means[0] - ridge)) <= 1e-9

    def test_posterior_matches_dense_gaussian_conditioning(self):
        # joint Gaussian over (w, f) and textbook conditioning
        rng = np.random.default_rng(6)
        Phi, Y, V = _random_instance(rng, 7, 4, 1)
        K_ff = Phi @ Phi.T + np.diag(V[:, 0])
        mean = Phi.T @ np.linalg.solve(K_ff, Y[:, 0])
        cov = np.eye(4) - Phi.T @ np.linalg.solve(K_ff, Phi)
        state = fit_batch(init_posterior(4, 1), Phi, (Y, V))
        assert gaussian_kl(state.means[0], state.covs[0], mean, cov) == pytest.approx(0.0, abs=1e-10)


class TestPredictProba:
    def test_symmetric_posteriors(self):
        s = init_posterior(2, 4)
        p = predict_proba(s, [0.6, 0.8], n_samples=10_000, rng_seed=0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        # per-sample softmax of iid logits: stderr bounded by the draws' spread
        draws = special.softmax(np.random.default_rng(1).normal(size=(10_000, 4)), axis=1)[:, 0]
        se = draws.std() / math.sqrt(10_000)
        assert np.max(np.abs(p - 0.25)) <= 3 * se

    def test_zero_variance(self):
        s = init_posterior(2, 3)
        means = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
        degenerate = type(s)(means, np.zeros_like(s.covs), 1.0)
        phi = np.array([0.3, -0.4])
        np.testing.assert_array_equal(predict_proba(degenerate, phi), special.softmax(means @ phi))

    def test_binary_head(self):
        s = type(init_posterior(1, 1))(np.array([[1.5]]), np.zeros((1, 1, 1)), 1.0)
        np.testing.assert_allclose(predict_proba(s, [2.0]), [special.expit(-3.0), special.expit(3.0)], atol=1e-15)
        s = init_posterior(1, 1)
        p = predict_proba(s, [1.0], n_samples=20_000)
        assert p[1] == pytest.approx(0.5, abs=0.01)

    def test_binary_head_matches_probit_integral(self):
        # E[sigmoid(f)] for f ~ N(m, v) by dense quadrature
        s = update_one(init_posterior(1, 1), [1.0], BinaryPseudoObs(1.2, 0.5))
        m, v = s.means[0, 0], s.covs[0, 0, 0]
        f = np.linspace(m - 12 * math.sqrt(v), m + 12 * math.sqrt(v), 200_001)
        dens = np.exp(-0.5 * (f - m) ** 2 / v) / math.sqrt(2 * math.pi * v)
        ref = np.trapezoid(special.expit(f) * dens, f)
        p = predict_proba(s, [1.0], n_samples=100_000, rng_seed=3)
        assert p[1] == pytest.approx(ref, abs=0.003)

    def test_convergence_rate(self):
        rng = np.random.default_rng(7)
        Phi, Y, V = _random_instance(rng, 30, 3, 3)
        s = fit_batch(init_posterior(3, 3), Phi, (Y, V))
        phi = rng.normal(size=3)
        p_small = predict_proba(s, phi, n_samples=1000, rng_seed=1)
        p_big = predict_proba(s, phi, n_samples=100_000, rng_seed=2)
        # theoretical stderr of the n=1000 estimate, from per-draw variance
        mean, var = s.logit_moments(phi)
        draws = special.softmax(mean + np.sqrt(var) * np.random.default_rng(9).normal(size=(100_000, 3)), axis=1)
        se = draws.std(axis=0) / math.sqrt(1000)
        assert np.all(np.abs(p_small - p_big) <= 5 * se)

    def test_two_class_shortcut_matches_direct_sampling(self):
        mean = np.array([[0.3, -0.5], [2.0, 1.0]])
        var = np.array([[1.0, 0.5], [0.2, 3.0]])
        p = mc_class_probs(mean, var, 200_000, np.random.default_rng(0))
        z = np.random.default_rng(1).normal(size=(200_000, 2, 2))
        ref = special.softmax(mean + np.sqrt(var) * z, axis=-1).mean(axis=0)
        np.testing.assert_allclose(p, ref, atol=0.005)

    def test_rows(self):
        s = init_posterior(2, 3)
        p = predict_proba(s, np.ones((5, 2)), n_samples=64)
        assert p.shape == (5, 3)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_invalid_samples(self):
        with pytest.raises(DomainError):
            predict_proba(init_posterior(1, 2), [1.0], n_samples=0)


class TestADF:
    def test_tiny_damping_leaves_state(self):
        s = init_posterior(2, 3)
        new = adf_update(s, [1.0, -0.5], 1, damping=1e-12)
        np.testing.assert_allclose(new.means, s.means, atol=1e-11)
        np.testing.assert_allclose(new.covs, s.covs, atol=1e-11)

    def test_uninformative_likelihood(self):
        s = init_posterior(3, 2)
        phi = np.array([0.5, 1.0, -0.2])
        n = 4000
        new = adf_update(s, phi, 0, n_mc=n, damping=1.0, log_likelihood=lambda f: np.zeros(len(f)))
        sd = math.sqrt(phi @ phi)
        # mean shift of the weights is the MC error of the logit mean, mapped back
        assert np.max(np.abs(new.means @ phi)) <= 4 * sd / math.sqrt(n)
        assert np.max(np.abs(new.covs - s.covs)) <= 0.15

    def test_logistic_tilted_moments_against_grid(self):
        m0, v0 = 0.4, 2.0
        prior = type(init_posterior(1, 1))(np.array([[m0]]), np.array([[[v0]]]), v0)
        n = 40_000
        new = adf_update(prior, [1.0], 1, n_mc=n, damping=1.0, rng_seed=11)
        theta = np.linspace(-10, 10, 100_000)
        tilt = np.exp(-0.5 * (theta - m0) ** 2 / v0) * special.expit(theta)
        z = np.trapezoid(tilt, theta)
        mean = np.trapezoid(theta * tilt, theta) / z
        var = np.trapezoid((theta - mean) ** 2 * tilt, theta) / z
        # SNIS stderr with the weights' effective sample size
        w = special.expit(m0 + math.sqrt(v0) * np.random.default_rng(0).normal(size=n))
        ess = w.sum() ** 2 / (w**2).sum()
        se_mean = math.sqrt(var / ess)
        se_var = var * math.sqrt(2 / ess)
        assert abs(new.means[0, 0] - mean) <= 3 * se_mean
        assert abs(new.covs[0, 0, 0] - var) <= 3 * se_var

    def test_inplace_matches_copy(self):
        rng = np.random.default_rng(8)
        s = fit_batch(init_posterior(4, 3), *(lambda P, Y, V: (P, (Y, V)))(*_random_instance(rng, 10, 4, 3)))
        phi = rng.normal(size=4)
        copied = adf_update(s, phi, 2, rng_seed=5)
        work = type(s)(s.means.copy(), s.covs.copy(), s.prior_variance)
        inplace = adf_update(work, phi, 2, rng_seed=5, inplace=True)
        assert inplace is work
        np.testing.assert_allclose(inplace.means, copied.means, atol=1e-14)
        np.testing.assert_allclose(inplace.covs, copied.covs, atol=1e-14)
        # the non-inplace call must not touch its input
        assert not np.allclose(s.means, copied.means)

    def test_covariance_stays_spd_over_stream(self):
        data = separable_binary(300, rng_seed=1)
        X = np.c_[data.features, np.ones(300)]
        s = init_posterior(3, 2)
        diag = ADFDiagnostics()
        for t, (x, y) in enumerate(zip(X, data.labels)):
            s = adf_update(s, x, int(y), rng_seed=t, diagnostics=diag)
        for S in s.covs:
            np.linalg.cholesky(S)
        assert diag.updates + diag.skipped == 300
        acc = np.mean(np.argmax(X @ s.means.T, axis=1) == data.labels)
        assert acc >= 0.95

    @pytest.mark.parametrize("kwargs", [{"damping": 0.0}, {"damping": 1.5}, {"n_mc": 50}])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            adf_update(init_posterior(1, 2), [1.0], 0, **kwargs)


class TestSGD:
    def test_zero_lr(self):
        W0 = np.random.default_rng(0).normal(size=(3, 2))
        res = sgd_momentum_fit(W0, np.ones((10, 2)), np.zeros(10, int), lr=0.0, momentum=0.9)
        np.testing.assert_array_equal(res.weights, W0)

    def test_repeated_observation_loss_decreases(self):
        phi, y = np.array([1.0, -2.0]), 1
        W = np.zeros((2, 2))
        losses = []
        for _ in range(20):
            losses.append(-special.log_softmax(W @ phi)[y])
            W = sgd_momentum_fit(W, phi[None], [y], lr=0.01, momentum=0.0).weights
        assert np.all(np.diff(losses) < 0)

    def test_separable_fixture(self):
        data = separable_binary(500, 0.3, rng_seed=0)
        X = np.c_[data.features, np.ones(500)]
        res = sgd_momentum_fit(np.zeros((2, 3)), X, data.labels, lr=0.1, momentum=0.9)
        assert np.mean(np.argmax(X @ res.weights.T, axis=1) == data.labels) == 1.0

    def test_trajectory_recording(self):
        res = sgd_momentum_fit(np.zeros((2, 2)), np.ones((10, 2)), np.zeros(10, int), 0.1, 0.5, record_every=3)
        assert len(res.trajectory) == 1 + 3 + 1 and res.steps == 10

    def test_divergence_aborts(self):
        X = np.full((5, 1), 1e200)
        res = sgd_momentum_fit(np.zeros((2, 1)), X, np.array([0, 1, 0, 1, 0]), lr=1e200, momentum=0.0)
        assert res.diverged and res.steps < 5

    @pytest.mark.parametrize("lr, momentum", [(-1.0, 0.5), (0.1, 1.0)])
    def test_invalid(self, lr, momentum):
        with pytest.raises(DomainError):
            sgd_momentum_fit(np.zeros((2, 1)), np.ones((1, 1)), [0], lr, momentum)
