import csv
import io
import json

import numpy as np
import pytest
from scipy.optimize import minimize

from sober.benchmarks.fingerprints import load_fingerprints
from sober.benchmarks.harness import (
    CSV_COLUMNS,
    PLAIN_TS,
    RANDOM,
    BenchmarkSpec,
    baseline_step,
    repeat_seeds,
    rows_to_csv,
    run_all,
    run_benchmark,
)
from sober.benchmarks.metrics import batch_regret, compute_metrics, measure_distance, measure_variance
from sober.benchmarks.objectives import (
    HARTMANN_MAX,
    make_ackley,
    make_fingerprint,
    make_gaussian_bq,
    make_hartmann,
    make_problem,
    make_rosenbrock,
    make_shekel,
)
from sober.gp import Dataset, GpModel, empty_dataset
from sober.kernels import rbf
from sober.measures import DomainSpec, EmpiricalMeasure, sample_prior, uniform_prior
from sober.solver import Sober, SoberConfig


def _tiny_sober(**kw):
    base = dict(N=300, M=40, n=4, restarts=1)
    base.update(kw)
    return SoberConfig(**base)


class TestObjectives:
    def test_ackley_zero_at_origin(self):
        p = make_ackley(3, 20)
        assert p(np.zeros((1, 23)))[0] == pytest.approx(0.0, abs=1e-12)
        assert p.maximizer.shape == (23,)

    def test_ackley_negative_elsewhere(self, rng):
        p = make_ackley(3, 4)
        X = sample_prior(p.prior, 50, rng)
        assert np.all(p(X) <= 1e-12)

    def test_rosenbrock_zero_at_ones(self):
        p = make_rosenbrock()
        assert p(p.maximizer[None])[0] == pytest.approx(0.0, abs=1e-12)
        # categorical codes decode to the value 1
        np.testing.assert_array_equal(p.domain.decode_categories(p.maximizer[None]), np.ones((1, 7)))

    def test_hartmann_optimum_matches_search(self):
        p = make_hartmann()
        g = np.linspace(0.0, 1.0, 9)
        grid = np.stack(np.meshgrid(*[g] * 6, indexing="ij"), -1).reshape(-1, 6)
        vals = p(grid)
        best = -np.inf
        for x0 in grid[np.argsort(vals)[-30:]]:
            res = minimize(lambda x: -p.fn(x[None])[0], x0, method="L-BFGS-B", bounds=[(0, 1)] * 6)
            best = max(best, -res.fun)
        assert best == pytest.approx(HARTMANN_MAX, abs=1e-3)
        assert p(p.maximizer[None])[0] == pytest.approx(best, abs=1e-3)

    def test_shekel_forms(self):
        p = make_shekel()
        assert p(p.maximizer[None])[0] == pytest.approx(p.optimum)
        assert p.optimum == pytest.approx(10.5364, abs=1e-3)
        printed = make_shekel(as_printed=True)
        assert np.isfinite(printed.optimum)

    def test_out_of_domain(self):
        with pytest.raises(ValueError):
            make_hartmann()(np.full((1, 6), 1.5))

    def test_gaussian_bq_truth_by_monte_carlo(self):
        p = make_gaussian_bq(2)
        X = np.random.default_rng(0).normal(size=(400000, 2))
        assert p.fn(X).mean() == pytest.approx(p.evidence, rel=0.01)

    def test_unknown_problem(self):
        with pytest.raises(ValueError):
            make_problem("Branin")


class TestMetrics:
    def test_md_zero_at_maximiser(self):
        x = np.array([[0.3, -0.2]])
        assert measure_distance(EmpiricalMeasure(x, np.ones(1)), x[0]) == 0.0

    def test_br_zero_for_optimum(self):
        assert batch_regret(2.5, [1.0], [2.5]) == 0.0

    def test_mv_two_points(self):
        m = EmpiricalMeasure(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]))
        assert measure_variance(m) == pytest.approx(2.0)

    def test_mv_single_atom(self):
        assert measure_variance(EmpiricalMeasure(np.ones((1, 3)), np.ones(1))) == 0.0

    def test_compute_metrics_row(self):
        p = make_ackley(2, 0)
        X = np.array([[0.0, 0.0], [0.5, 0.5]])
        y = p(X)
        row = compute_metrics(p, y.max(), np.array([0.5, 0.5]), y, EmpiricalMeasure.uniform(X))
        assert row.simple_regret == pytest.approx(0.0, abs=1e-12)
        assert row.BR == pytest.approx(-0.5 * y[1])
        assert row.MD == pytest.approx(np.sqrt(0.5) / 2)

    def test_quadrature_problem_has_no_regret(self):
        p = make_gaussian_bq(1)
        row = compute_metrics(p, 0.1, np.ones(1), np.ones(1), None)
        assert np.isnan(row.BR) and np.isnan(row.simple_regret)


class TestBaselines:
    def test_random_distinct_on_enumerable(self):
        cand = np.eye(12)
        m = EmpiricalMeasure.uniform(cand)
        idx = baseline_step(RANDOM, None, m, 8, seed=0)
        assert len(set(idx.tolist())) == 8

    def test_random_takes_all_when_small(self):
        idx = baseline_step(RANDOM, None, EmpiricalMeasure.uniform(np.eye(3)), 8, seed=0)
        assert sorted(idx.tolist()) == [0, 1, 2]

    def test_plain_ts_zero_variance(self):
        X = np.linspace(0, 1, 8)[:, None]
        y = np.sin(6 * X[:, 0])
        model = GpModel(Dataset(X, y), rbf(1.0, 0.3, 1), noise=0.0)
        idx = baseline_step(PLAIN_TS, model, EmpiricalMeasure.uniform(X), 5, seed=0)
        np.testing.assert_array_equal(idx, np.full(5, np.argmax(y)))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            baseline_step("ucb", None, EmpiricalMeasure.uniform(np.eye(2)), 1)

    def test_ts_less_diverse_than_sober(self, unit_square):
        def bumps(X):
            return np.exp(-np.sum((X - 0.25) ** 2, 1) / 0.02) + np.exp(-np.sum((X - [0.75, 0.7]) ** 2, 1) / 0.02)

        ts_counts, sober_counts = [], []
        for seed in range(20):
            r = np.random.default_rng(seed)
            X = r.uniform(size=(8, 2))
            driver = Sober(unit_square, SoberConfig(N=800, M=80, n=10, seed=seed, restarts=1))
            driver.tell(X, bumps(X))
            sober_counts.append(driver.ask().size)
            pool = EmpiricalMeasure.uniform(sample_prior(driver.pi.initial, 800, r))
            idx = baseline_step(PLAIN_TS, driver.surrogate.models[0], pool, 10, r, unit_square, 80)
            ts_counts.append(len(set(idx.tolist())))
        assert np.median(ts_counts) <= np.median(sober_counts)


class TestFingerprints:
    def test_jsonl(self, tmp_path):
        path = tmp_path / "fp.jsonl"
        path.write_text('{"bits": [0, 1, 1], "y": 0.5, "label": "a"}\n\n{"bits": [1, 0, 0], "y": 1.5}\n')
        bits, y, labels = load_fingerprints(path)
        np.testing.assert_array_equal(bits, [[0, 1, 1], [1, 0, 0]])
        np.testing.assert_array_equal(y, [0.5, 1.5])
        assert labels == ["a", None]

    def test_csv(self, tmp_path):
        path = tmp_path / "fp.csv"
        path.write_text("bit_0,bit_1,y\n1,0,2.0\n0,1,3.0\n")
        bits, y, _ = load_fingerprints(path)
        np.testing.assert_array_equal(bits, [[1, 0], [0, 1]])
        np.testing.assert_array_equal(y, [2.0, 3.0])

    def test_rejects_ragged(self, tmp_path):
        path = tmp_path / "fp.jsonl"
        path.write_text('{"bits": [0, 1]}\n{"bits": [1]}\n')
        with pytest.raises(ValueError):
            load_fingerprints(path)

    def test_rejects_non_binary(self, tmp_path):
        path = tmp_path / "fp.jsonl"
        path.write_text('{"bits": [0, 2]}\n')
        with pytest.raises(ValueError):
            load_fingerprints(path)

    def test_problem_lookup(self, tmp_path):
        path = tmp_path / "fp.jsonl"
        r = np.random.default_rng(0)
        bits = np.unique(r.integers(0, 2, (30, 10)), axis=0)
        y = r.normal(size=len(bits))
        path.write_text("".join(json.dumps({"bits": b.tolist(), "y": float(v)}) + "\n" for b, v in zip(bits, y)))
        p = make_fingerprint(path)
        np.testing.assert_allclose(p(bits), y)
        assert p.optimum == y.max()
        assert p.domain.enumerable


class TestHarness:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            BenchmarkSpec(problem="Branin")
        with pytest.raises(ValueError):
            BenchmarkSpec(repeats=0)
        with pytest.raises(ValueError):
            BenchmarkSpec(baselines=("ei",))

    def test_spec_round_trip(self):
        spec = BenchmarkSpec(problem="Hartmann6", repeats=2, baselines=("random",), sober=_tiny_sober())
        assert BenchmarkSpec.from_dict(spec.to_dict()) == spec

    def test_repeat_seeds_distinct(self):
        s = repeat_seeds(0, 5)
        assert len(set(s)) == 5 and s == repeat_seeds(0, 5)

    def test_one_row_per_method(self):
        spec = BenchmarkSpec("Hartmann6", 1, 1, sober=_tiny_sober(), baselines=("random",))
        rows = run_all(spec)
        assert sorted(r.method for r in rows) == ["random", "sober-lfi"]

    def test_csv_schema(self):
        spec = BenchmarkSpec("Ackley23", 1, 2, sober=_tiny_sober(), baselines=("random", "plain_ts"),
                             problem_options={"n_binary": 2})
        text = rows_to_csv(run_all(spec))
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        assert tuple(header) == CSV_COLUMNS
        rows = list(reader)
        assert len(rows) == 6
        assert all(r[header.index("elapsed_s")] == "" for r in rows)
        assert all(r[header.index("evidence_mean")] == "" for r in rows)
        assert all(r[header.index("BR")] != "" for r in rows)

    def test_byte_identical(self, tmp_path):
        spec = BenchmarkSpec("Shekel4", 2, 2, sober=_tiny_sober(), baselines=("random", "plain_ts"))
        run_benchmark(spec, tmp_path / "a")
        run_benchmark(spec, tmp_path / "b")
        assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()

    def test_summary_and_timings(self, tmp_path):
        spec = BenchmarkSpec("GaussianBQ", 2, 2, sober=_tiny_sober(), problem_options={"dim": 1})
        assert run_benchmark(spec, tmp_path) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        final = summary["methods"]["sober-lfi"]["final"]
        assert summary["methods"]["sober-lfi"]["metric"] == "evidence_mean"
        assert np.isfinite(final["median"]) and final["stderr"] >= 0
        assert summary["evidence_truth"] == pytest.approx(make_gaussian_bq(1).evidence)
        lines = (tmp_path / "timings.csv").read_text().splitlines()
        assert len(lines) == 5 and all(float(line.split(",")[-1]) > 0 for line in lines[1:])


def test_empty_dataset_model_is_prior():
    model = GpModel(empty_dataset(1), rbf(2.0, 0.5, 1))
    mean, var = model.predict(np.zeros((3, 1)), full_cov=False)
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_allclose(var, 2.0)


def test_uniform_prior_on_enumerable_domain():
    dom = DomainSpec(np.zeros((0, 2)), (), 4, candidates=np.eye(4))
    X = sample_prior(uniform_prior(dom), 40, 0)
    assert {tuple(r) for r in X} <= {tuple(r) for r in np.eye(4)}
