import numpy as np
import pytest

from sober.benchmarks.objectives import make_ackley, make_gaussian_bq
from sober.measures import EmpiricalMeasure
from sober.recombination import BatchSelection, wce_estimate
from sober.solver import QUADRATURE, IterationRecord, Sober, SoberConfig, run_loop


def _branin_like(X):
    return -((X[:, 0] - 0.3) ** 2) - 2 * (X[:, 1] - 0.6) ** 2


def _small(**kw):
    base = dict(N=500, M=60, n=6, seed=0, restarts=2)
    base.update(kw)
    return SoberConfig(**base)


class TestConfig:
    def test_rejects_n_above_N(self):
        with pytest.raises(ValueError):
            SoberConfig(N=10, M=5, n=11)

    def test_rejects_M_above_N(self):
        with pytest.raises(ValueError):
            SoberConfig(N=10, M=20, n=2)

    def test_rejects_unknown_variant(self):
        with pytest.raises(ValueError):
            SoberConfig(variant="ei")

    def test_defaults(self):
        cfg = SoberConfig()
        assert (cfg.N, cfg.M) == (20000, 500)
        assert cfg.af_spec().kind == "lfi"
        assert SoberConfig(fbgp=True).af_spec().kind == "fitbo"
        assert SoberConfig(mode=QUADRATURE).af_spec().kind == "none"


class TestAsk:
    def test_first_batch_spread(self, unit_square):
        driver = Sober(unit_square, _small(n=10, N=1000, M=100))
        batch = driver.ask()
        d = np.linalg.norm(batch.X[:, None] - batch.X[None], axis=2)
        assert np.min(d[np.triu_indices(batch.size, 1)]) > 0
        _, _, m, kernel = driver._pending
        r = np.random.default_rng(0)
        rand = [
            wce_estimate(kernel, (m.X[idx], np.full(10, 0.1)), m, skip_const=True)
            for idx in (r.choice(m.size, 10, replace=False) for _ in range(100))
        ]
        assert batch.wce <= np.median(rand)

    def test_single_point_batch(self, unit_square):
        driver = Sober(unit_square, _small(n=1))
        batch = driver.ask()
        assert batch.size == 1 and batch.w[0] == pytest.approx(1.0)
        unit_square.validate(batch.X)

    def test_deterministic(self, unit_square):
        a = Sober(unit_square, _small()).ask()
        b = Sober(unit_square, _small()).ask()
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.w, b.w)

    def test_batch_feasible_after_data(self, unit_square):
        driver = Sober(unit_square, _small())
        for _ in range(2):
            b = driver.ask()
            driver.tell(b.X, _branin_like(b.X))
        b = driver.ask()
        assert isinstance(b, BatchSelection)
        assert b.size <= 6 and np.all(b.w >= 0) and b.w.sum() == pytest.approx(1.0)
        unit_square.validate(b.X)

    def test_ts_variant(self, unit_square):
        driver = Sober(unit_square, _small(variant="ts", ts_functions=200))
        b = driver.ask()
        driver.tell(b.X, _branin_like(b.X))
        b = driver.ask()
        assert 1 <= b.size <= 6

    def test_mixed_domain(self):
        p = make_ackley(n_cont=2, n_binary=4)
        driver = Sober(p.domain, _small(), p.prior)
        b = driver.ask()
        p.domain.validate(b.X)
        driver.tell(b.X, p(b.X))


class TestTell:
    def test_interpolates_noiseless(self, unit_square):
        driver = Sober(unit_square, _small())
        X = np.array([[0.2, 0.3], [0.7, 0.1], [0.5, 0.9]])
        y = _branin_like(X)
        driver.tell(X, y)
        mean = driver.surrogate.mean(X) * driver.y_scale + driver.y_shift
        np.testing.assert_allclose(mean, y, atol=0.02 * np.ptp(y))

    def test_duplicates(self, unit_square):
        driver = Sober(unit_square, _small())
        X = np.array([[0.4, 0.4], [0.4, 0.4], [0.1, 0.9]])
        driver.tell(X, np.array([1.0, 1.0, 0.0]))
        assert np.all(np.isfinite(driver.surrogate.mean(X)))

    def test_rejects_nan(self, unit_square):
        driver = Sober(unit_square, _small())
        with pytest.raises(ValueError):
            driver.tell(np.array([[0.1, 0.1]]), np.array([np.nan]))

    def test_rejects_shape_mismatch(self, unit_square):
        driver = Sober(unit_square, _small())
        with pytest.raises(ValueError):
            driver.tell(np.array([[0.1, 0.1]]), np.array([1.0, 2.0]))

    def test_eta_non_decreasing(self, unit_square):
        driver = Sober(unit_square, _small())
        etas = []
        for _ in range(4):
            b = driver.ask()
            etas.append(driver.eta_raw)
            driver.tell(b.X, _branin_like(b.X) + 0.01 * np.random.default_rng(len(etas)).normal(size=b.size))
        assert np.all(np.diff(etas[1:]) >= 0)

    def test_records_appended(self, unit_square):
        driver = Sober(unit_square, _small())
        b = driver.ask()
        driver.tell(b.X, _branin_like(b.X))
        rec = driver.records[-1]
        assert isinstance(rec, IterationRecord)
        assert rec.iteration == 0 and rec.y_batch.size == b.size
        np.testing.assert_array_equal(rec.w_batch, b.w)


class TestEvidence:
    def test_constant_integrand(self):
        p = make_gaussian_bq(2)
        driver = Sober(p.domain, _small(mode=QUADRATURE, N=400, n=5), p.prior)
        b = driver.ask()
        driver.tell(b.X, np.ones(b.size))
        assert driver.records[-1].evidence_mean == pytest.approx(1.0, abs=1e-12)

    def test_zero_variance_for_full_measure(self, unit_square):
        driver = Sober(unit_square, _small())
        X = np.random.default_rng(0).uniform(size=(30, 2))
        driver.tell(X[:5], _branin_like(X[:5]))
        m = EmpiricalMeasure.uniform(unit_square.encode(X))
        batch = BatchSelection(np.arange(30), X, m.w)
        _, var = driver.estimate_evidence((batch, EmpiricalMeasure.uniform(X), m, None))
        assert var == pytest.approx(0.0, abs=1e-10)

    def test_gaussian_integrand_200_points(self):
        p = make_gaussian_bq(2)
        driver = Sober(p.domain, SoberConfig(N=4000, M=200, n=50, seed=0, mode=QUADRATURE), p.prior)
        X = p.prior.continuous.sample(200, np.random.default_rng(1))
        driver.tell(X, p(X))
        b = driver.ask()
        mean, var = driver.estimate_evidence()
        assert mean == pytest.approx(p.evidence, rel=0.05)
        assert var >= 0

    def test_rule_integrates_mean_over_measure(self):
        # the batch rule reproduces the empirical-measure integral of the mean
        p = make_gaussian_bq(1)
        driver = Sober(p.domain, SoberConfig(N=2000, M=100, n=20, seed=0, mode=QUADRATURE), p.prior)
        X = p.prior.continuous.sample(80, np.random.default_rng(2))
        driver.tell(X, p(X))
        driver.ask()
        mean, _ = driver.estimate_evidence()
        m_raw = driver._pending[1]
        emp = m_raw.w @ driver.surrogate.mean(m_raw.X) * driver.y_scale + driver.y_shift
        assert mean == pytest.approx(emp, rel=1e-8)


class TestRunLoop:
    def test_zero_iterations(self, unit_square):
        driver = run_loop(_small(), _branin_like, 0, unit_square)
        assert driver.records == []

    def test_oracle_error_halts(self, unit_square):
        calls = []

        def oracle(X):
            calls.append(1)
            if len(calls) == 2:
                raise RuntimeError("lab offline")
            return _branin_like(X)

        driver = run_loop(_small(), oracle, 4, unit_square)
        assert len(driver.records) == 1
        assert isinstance(driver.error, RuntimeError)

    def test_records_monotone(self, unit_square):
        driver = run_loop(_small(), _branin_like, 4, unit_square)
        elapsed = [r.elapsed for r in driver.records]
        best = [r.best_y for r in driver.records]
        assert all(r.duration > 0 for r in driver.records)
        assert np.all(np.diff(elapsed) > 0) and elapsed[0] > 0
        assert np.all(np.diff(best) >= 0)
        assert [r.iteration for r in driver.records] == [0, 1, 2, 3]

    def test_ackley_improves(self):
        p = make_ackley(n_cont=3, n_binary=0)
        driver = run_loop(SoberConfig(N=2000, M=100, n=50, seed=0, restarts=2), p, 10, p.domain, p.prior)
        best = [r.best_y for r in driver.records]
        assert np.any(np.diff(best) > 0)

    def test_fbgp_loop(self, unit_square):
        cfg = _small(fbgp=True, H=5, qd_samples=100)
        driver = run_loop(cfg, _branin_like, 2, unit_square)
        assert len(driver.records) == 2
        assert driver.hyper is not None and driver.hyper.size <= 5

    def test_best(self, unit_square):
        driver = Sober(unit_square, _small())
        assert driver.best()[1] == -np.inf
        driver.tell(np.array([[0.3, 0.6], [0.0, 0.0]]), np.array([0.0, -1.0]))
        x, y = driver.best()
        np.testing.assert_array_equal(x, [0.3, 0.6])
        assert y == 0.0


def test_default_kernel_lengthscale():
    from sober.solver import default_kernel

    k = default_kernel("rbf", 3, 0.5)
    assert k.kind == "rbf" and k.variance == 1.0
    np.testing.assert_array_equal(k.lengthscales, [0.5, 0.5, 0.5])
