"""Run SOBER and baselines over seeded repeats and write CSV / JSON results."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..kernels import fit_nystrom
from ..measures import EmpiricalMeasure, as_rng, sample_prior
from ..pi import ts_candidates
from ..solver import QUADRATURE, Sober, SoberConfig
from .metrics import compute_metrics
from .objectives import PROBLEMS, Problem, make_problem

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "repeat", "iteration", "best_y", "simple_regret", "BR", "MV", "MD",
               "wce", "evidence_mean", "evidence_var", "elapsed_s")
RANDOM = "random"
PLAIN_TS = "plain_ts"
BASELINES = (RANDOM, PLAIN_TS)


@dataclass
class BenchmarkSpec:
    """What to run. ``problem_options`` is passed to the problem constructor."""

    problem: str = "Ackley23"
    repeats: int = 1
    iterations: int = 10
    seed: int = 0
    sober: SoberConfig = field(default_factory=SoberConfig)
    baselines: tuple = ()
    problem_options: dict = field(default_factory=dict)
    shekel_as_printed: bool = False
    run_sober: bool = True
    timing_in_csv: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.repeats < 1 or self.iterations < 0:
            raise ValueError("need repeats >= 1 and iterations >= 0")
        bad = set(self.baselines) - set(BASELINES)
        if bad:
            raise ValueError(f"unknown baselines {sorted(bad)}")
        self.baselines = tuple(self.baselines)

    def make_problem(self) -> Problem:
        return make_problem(self.problem, self.shekel_as_printed, **self.problem_options)

    @property
    def sober_label(self) -> str:
        return f"sober-{self.sober.variant}"

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkSpec":
        d = dict(d)
        sober = SoberConfig(**d.pop("sober", {}))
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(sober=sober, **d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["baselines"] = list(self.baselines)
        return out


@dataclass
class Row:
    method: str
    repeat: int
    iteration: int
    best_y: float
    simple_regret: float = math.nan
    BR: float = math.nan
    MV: float = math.nan
    MD: float = math.nan
    wce: float = math.nan
    evidence_mean: float = math.nan
    evidence_var: float = math.nan
    elapsed_s: float = math.nan


def _row(method, repeat, it, problem, best_y, w, y, measure, elapsed, **extra):
    mt = compute_metrics(problem, best_y, w, y, measure)
    return Row(method, repeat, it, mt.best_y, mt.simple_regret, mt.BR, mt.MV, mt.MD,
               elapsed_s=elapsed, **extra)


# Baselines ------------------------------------------------------------------------


def baseline_step(kind, model, m: EmpiricalMeasure, n, seed=None, domain=None, M=500):
    """Indices into ``m.X`` for one baseline batch.

    ``random`` takes ``n`` distinct prior draws from ``m`` (all of ``m`` if smaller);
    ``plain_ts`` takes the argmax of ``n`` independent posterior draws over ``m``,
    with features built on up to ``M`` anchors. ``m.X`` is raw; ``domain`` encodes it.
    """
    rng = as_rng(seed)
    if kind == RANDOM:
        return rng.choice(m.size, size=min(n, m.size), replace=False)
    if kind != PLAIN_TS:
        raise ValueError(f"unknown baseline {kind!r}")
    Z = m.X if domain is None else domain.encode(m.X)
    anchors = Z[rng.choice(Z.shape[0], min(M, Z.shape[0]), replace=False)]
    nf = fit_nystrom(model.kernel, anchors, anchors.shape[0], seed=rng)
    return ts_candidates(model, nf, EmpiricalMeasure.uniform(Z), n, rng)


def _run_random(problem, spec, repeat, seed):
    rng = np.random.default_rng(seed)
    n = spec.sober.n
    rows, best, t0 = [], -np.inf, time.perf_counter()
    for it in range(spec.iterations):
        pool = sample_prior(problem.prior, n, rng)
        idx = baseline_step(RANDOM, None, EmpiricalMeasure.uniform(pool), n, rng)
        X = pool[idx]
        y = problem(X)
        best = max(best, float(y.max()))
        w = np.full(y.size, 1.0 / y.size)
        rows.append(_row(RANDOM, repeat, it, problem, best, w, y, EmpiricalMeasure(X, w),
                         time.perf_counter() - t0))
    return rows


def _run_plain_ts(problem, spec, repeat, seed):
    cfg = SoberConfig(**{**asdict(spec.sober), "seed": int(seed)})
    driver = Sober(problem.domain, cfg, problem.prior)
    rng = np.random.default_rng(seed + 1)
    rows, t0 = [], time.perf_counter()
    for it in range(spec.iterations):
        pool = sample_prior(problem.prior, cfg.N, rng)
        model = driver.surrogate.models[0]
        idx = baseline_step(PLAIN_TS, model, EmpiricalMeasure.uniform(pool), cfg.n, rng,
                            problem.domain, cfg.M)
        X = pool[idx]
        y = problem(X)
        driver.tell(X, y)
        w = np.full(y.size, 1.0 / y.size)
        rows.append(_row(PLAIN_TS, repeat, it, problem, driver.best()[1], w, y,
                         EmpiricalMeasure(X, w), time.perf_counter() - t0))
    return rows


def _run_sober(problem, spec, repeat, seed):
    mode = QUADRATURE if problem.quadrature else spec.sober.mode
    cfg = SoberConfig(**{**asdict(spec.sober), "seed": int(seed), "mode": mode})
    driver = Sober(problem.domain, cfg, problem.prior)
    rows = []
    for it in range(spec.iterations):
        batch = driver.ask()
        y = problem(batch.X)
        driver.tell(batch.X, y)
        rec = driver.records[-1]
        rows.append(_row(spec.sober_label, repeat, it, problem, rec.best_y, rec.w_batch, y,
                         rec.measure, rec.elapsed, wce=rec.wce, evidence_mean=rec.evidence_mean,
                         evidence_var=rec.evidence_var))
    return rows


def repeat_seeds(seed, repeats):
    """One independent integer seed per repeat, shared across methods for pairing."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(repeats)]


def run_all(spec: BenchmarkSpec) -> list[Row]:
    problem = spec.make_problem()
    runners = []
    if spec.run_sober:
        runners.append(_run_sober)
    runners += [{RANDOM: _run_random, PLAIN_TS: _run_plain_ts}[b] for b in spec.baselines]
    rows = []
    for repeat, seed in enumerate(repeat_seeds(spec.seed, spec.repeats)):
        for runner in runners:
            rows += runner(problem, spec, repeat, seed)
    order = {m: k for k, m in enumerate([spec.sober_label, *BASELINES])}
    rows.sort(key=lambda r: (order[r.method], r.repeat, r.iteration))
    return rows


# Output ------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if not np.isfinite(v) else repr(float(v))


def rows_to_csv(rows, timing=False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        d = asdict(r)
        if not timing:
            d["elapsed_s"] = math.nan
        writer.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def summarize(rows, spec: BenchmarkSpec) -> dict:
    """Median and standard error per method and iteration."""
    out = {"problem": spec.problem, "spec": spec.to_dict(), "methods": {}}
    methods = sorted({r.method for r in rows})
    key = "evidence_mean" if spec.make_problem().quadrature else "simple_regret"
    for m in methods:
        per_it = {}
        for it in range(spec.iterations):
            vals = np.array([getattr(r, key) for r in rows if r.method == m and r.iteration == it])
            vals = vals[np.isfinite(vals)]
            if vals.size:
                se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
                per_it[it] = {"median": float(np.median(vals)), "stderr": se}
        times = [r.elapsed_s for r in rows if r.method == m and r.iteration == spec.iterations - 1]
        out["methods"][m] = {"metric": key, "per_iteration": per_it,
                             "final": per_it.get(spec.iterations - 1),
                             "median_elapsed_s": float(np.median(times)) if times else None}
    return out


def run_benchmark(spec: BenchmarkSpec, out_dir) -> int:
    """Run everything and write ``results.csv``, ``summary.json`` and ``timings.csv``.

    ``results.csv`` is byte-identical for identical specs unless
    ``spec.timing_in_csv`` is set; wall-clock times go to the other two files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_all(spec)
    (out / "results.csv").write_text(rows_to_csv(rows, spec.timing_in_csv))
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "repeat", "iteration", "elapsed_s"))
        for r in rows:
            w.writerow((r.method, r.repeat, r.iteration, _fmt(r.elapsed_s)))
    summary = summarize(rows, spec)
    if rows and spec.make_problem().quadrature:
        summary["evidence_truth"] = spec.make_problem().evidence
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return 0
