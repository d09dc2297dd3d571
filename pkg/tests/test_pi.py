import numpy as np
import pytest
from scipy.stats import binomtest, norm

from sober.gp import Dataset, GpModel, empty_dataset
from sober.kernels import fit_nystrom, rbf
from sober.measures import DomainSpec, EmpiricalMeasure, GaussianPrior, PriorModel, uniform_prior
from sober.pi import (
    LFI,
    TS,
    PiState,
    _weigh,
    lfi_from_moments,
    lfi_likelihood,
    posterior_samples,
    ts_candidates,
    ts_measure,
    update_pi,
)


class _FixedSurrogate:
    """Surrogate returning prescribed mean and variance functions."""

    def __init__(self, mean_fn, var_fn):
        self.mean_fn, self.var_fn = mean_fn, var_fn

    def predict(self, X, full_cov=False):
        return self.mean_fn(X), self.var_fn(X)


def _peak(X, centre=(0.7, 0.3)):
    return np.exp(-np.sum((X - np.asarray(centre)) ** 2, axis=1) / (2 * 0.1**2))


class TestLfiLikelihood:
    def test_at_threshold_is_half(self):
        assert lfi_from_moments(np.array([2.0]), np.array([0.3]), 2.0)[0] == pytest.approx(0.5, abs=1e-15)

    def test_one_sd_above(self):
        v = 0.49
        val = lfi_from_moments(np.array([1.0 + np.sqrt(v)]), np.array([v]), 1.0)[0]
        assert val == pytest.approx(norm.cdf(1.0), rel=1e-12)
        assert val == pytest.approx(0.84134, abs=1e-5)

    def test_zero_variance_below_threshold(self):
        assert lfi_from_moments(np.array([-1.0]), np.array([0.0]), 0.0)[0] < 1e-100

    def test_shift_invariance_exact(self, rng):
        mean, var = rng.normal(size=20), rng.uniform(0.1, 1, 20)
        a = lfi_from_moments(mean, var, 0.3)
        b = lfi_from_moments(mean + 4.0, var, 4.3)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_monotone_in_mean(self):
        mean = np.linspace(-3, 3, 50)
        vals = lfi_from_moments(mean, np.full(50, 0.5), 0.0)
        assert np.all(np.diff(vals) > 0)
        assert np.all((vals > 0) & (vals < 1))

    def test_gp_surrogate_matches_moments(self, rng):
        X = rng.uniform(size=(6, 2))
        model = GpModel(Dataset(X, np.sin(3 * X[:, 0])), rbf(1.0, 0.4, 2))
        Q = rng.uniform(size=(10, 2))
        mean, var = model.predict(Q, full_cov=False)
        np.testing.assert_allclose(lfi_likelihood(model, Q, 0.2), norm.cdf((mean - 0.2) / np.sqrt(var)), rtol=1e-10)

    def test_log_form(self, rng):
        s = _FixedSurrogate(lambda X: X[:, 0], lambda X: np.full(len(X), 0.2))
        X = rng.normal(size=(8, 1))
        np.testing.assert_allclose(np.exp(lfi_likelihood(s, X, 0.0, log=True)), lfi_likelihood(s, X, 0.0))


class TestPiState:
    def test_unknown_variant(self, unit_square):
        with pytest.raises(ValueError):
            PiState.start(uniform_prior(unit_square), variant="gibbs")

    def test_reset_restores_snapshot(self, unit_square):
        initial = uniform_prior(unit_square)
        state = PiState.start(initial)
        state.prior = PriorModel(unit_square, GaussianPrior(np.full(2, 0.5), 0.01 * np.eye(2), np.zeros(2), np.ones(2)))
        state.reset()
        assert state.prior is initial and state.resets == 1

    def test_advance_adopts_pending(self, unit_square):
        state = PiState.start(uniform_prior(unit_square))
        new = uniform_prior(unit_square)
        state.pending = new
        state.advance()
        assert state.prior is new and state.pending is None and state.iteration == 1


class TestUpdatePi:
    def test_flat_posterior_weights_uniform_against_sampling_prior(self, unit_square):
        model = GpModel(empty_dataset(2), rbf(1.0, 0.3, 2))
        prior = uniform_prior(unit_square)
        X = np.random.default_rng(0).uniform(size=(2000, 2))
        w = _weigh(model, X, prior, 0.0)
        assert w.max() / w.min() <= 1.5

    def test_flat_posterior_measure_is_uniform(self, unit_square):
        model = GpModel(empty_dataset(2), rbf(1.0, 0.3, 2))
        state = PiState.start(uniform_prior(unit_square))
        m = update_pi(state, model, unit_square, 2000, 10, seed=0)
        mean = m.w @ m.X
        var = m.w @ (m.X - mean) ** 2
        np.testing.assert_allclose(mean, 0.5, atol=0.03)
        np.testing.assert_allclose(var, 1 / 12, rtol=0.1)

    def test_single_peak_concentrates(self, unit_square):
        s = _FixedSurrogate(_peak, lambda X: np.full(len(X), 0.01))
        state = PiState.start(uniform_prior(unit_square))
        state.eta = 0.8
        m = update_pi(state, s, unit_square, 2000, 10, seed=1)
        bw = state.pending.continuous.bandwidth
        assert np.all(np.abs(m.w @ m.X - [0.7, 0.3]) <= bw)

    def test_distance_to_maximiser_shrinks(self, unit_square):
        # each update refits the GP on points drawn from the previous measure,
        # with the threshold at the best posterior mean over observed inputs
        improved = 0
        for seed in range(20):
            r = np.random.default_rng(seed)
            X = r.uniform(size=(10, 2))
            state = PiState.start(uniform_prior(unit_square))
            dists = []
            for it in range(3):
                model = GpModel(Dataset(X, _peak(X)), rbf(0.3, 0.12, 2), noise=1e-6)
                state.eta = float(np.max(model.mean(X)))
                m = update_pi(state, model, unit_square, 1000, 5, seed=r)
                state.advance()
                dists.append(m.w @ np.linalg.norm(m.X - [0.7, 0.3], axis=1))
                X = np.vstack([X, m.X[r.choice(m.size, 5, p=m.w)]])
            improved += dists[-1] <= dists[0]
        assert binomtest(improved, 20, 0.5, alternative="greater").pvalue < 0.05

    def test_enumerable_domain_uses_candidates(self):
        cand = np.linspace(0, 1, 10)[:, None]
        dom = DomainSpec(np.array([[0.0, 1.0]]), candidates=cand)
        s = _FixedSurrogate(lambda X: X[:, 0], lambda X: np.full(len(X), 0.1))
        state = PiState.start(uniform_prior(dom))
        state.eta = 0.5
        m = update_pi(state, s, dom, 500, 3, seed=0)
        np.testing.assert_array_equal(m.X, cand)
        L = norm.cdf((cand[:, 0] - 0.5) / np.sqrt(0.1))
        np.testing.assert_allclose(m.w, L / L.sum(), rtol=1e-10)

    def test_overexploitation_resets_prior(self, unit_square):
        initial = uniform_prior(unit_square)
        state = PiState.start(initial)
        narrow = GaussianPrior(np.full(2, 0.1), 1e-4 * np.eye(2), np.zeros(2), np.ones(2))
        state.prior = PriorModel(unit_square, narrow)
        state.eta = 0.0
        # steep below x0 = 0.3 and flat above: under the narrow prior one sample
        # takes all the weight, while the initial prior keeps most samples alive
        s = _FixedSurrogate(lambda X: -1e3 * np.maximum(0.3 - X[:, 0], 0.0), lambda X: np.full(len(X), 1e-6))
        update_pi(state, s, unit_square, 200, 5, seed=0)
        assert state.resets == 1

    def test_pending_not_adopted_until_advance(self, unit_square):
        s = _FixedSurrogate(_peak, lambda X: np.full(len(X), 0.01))
        initial = uniform_prior(unit_square)
        state = PiState.start(initial)
        update_pi(state, s, unit_square, 500, 5, seed=0)
        assert state.prior is initial and state.pending is not None


class TestThompson:
    def test_zero_variance_returns_mean_argmax(self, rng):
        X = rng.uniform(size=(6, 1))
        y = np.sin(5 * X[:, 0])
        k = rbf(1.0, 0.3, 1)
        model = GpModel(Dataset(X, y), k, noise=0.0)
        nf = fit_nystrom(k, X, 6)
        idx = ts_candidates(model, nf, EmpiricalMeasure.uniform(X), 50, seed=0)
        np.testing.assert_array_equal(idx, np.argmax(y))

    def test_symmetric_two_points(self):
        X = np.array([[0.0], [1.0]])
        k = rbf(1.0, 0.5, 1)
        nf = fit_nystrom(k, X, 2)
        idx = ts_candidates(GpModel(empty_dataset(1), k), nf, EmpiricalMeasure.uniform(X), 1000, seed=3)
        assert abs(np.mean(idx == 0) - 0.5) <= 0.05

    def test_deterministic(self, rng):
        X = rng.uniform(size=(40, 2))
        k = rbf(1.0, 0.3, 2)
        model = GpModel(Dataset(X[:5], rng.normal(size=5)), k)
        nf = fit_nystrom(k, X, 20)
        m = EmpiricalMeasure.uniform(X)
        np.testing.assert_array_equal(ts_candidates(model, nf, m, 30, seed=4), ts_candidates(model, nf, m, 30, seed=4))

    def test_sample_moments_match_posterior(self, rng):
        X = rng.uniform(size=(5, 1))
        Z = np.linspace(0, 1, 30)[:, None]
        k = rbf(1.0, 0.3, 1)
        model = GpModel(Dataset(X, np.cos(4 * X[:, 0])), k, noise=1e-4)
        nf = fit_nystrom(k, np.vstack([X, Z]), 35)
        F = np.vstack([f for _, f in posterior_samples(model, nf, Z, 6000, seed=0)])
        mean, cov = model.predict(Z)
        np.testing.assert_allclose(F.mean(axis=0), mean, atol=0.05)
        np.testing.assert_allclose(F.var(axis=0), np.diag(cov), atol=0.05)

    def test_ts_measure_counts(self):
        X = np.arange(5.0)[:, None]
        m = ts_measure(X, np.array([1, 3, 3, 1, 3]))
        np.testing.assert_array_equal(m.X[:, 0], [1.0, 3.0])
        np.testing.assert_allclose(m.w, [0.4, 0.6])

    def test_variant_constants(self):
        assert {LFI, TS} == {"lfi", "ts"}
