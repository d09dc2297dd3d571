"""Batch optimisation / quadrature main loop with an ask/tell interface."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import EI, FITBO, LFI as AF_LFI, NONE, AfSpec, EnsemblePrediction, eval_af, normalize_af
from .distillation import EnsembleCovariance, HyperMeasure, HyperPrior, qd_bq, qd_mcmc
from .gp import Dataset, GpModel, MeanWeightedCovariance, fit_mle, pack, unpack
from .kernels import RBF_ARD, TANIMOTO, fit_nystrom, rbf, tanimoto
from .measures import (
    DomainSpec,
    EmpiricalMeasure,
    PriorModel,
    as_rng,
    deweighted_subsample,
    sample_prior,
    uniform_prior,
)
from .pi import LFI, TS, PiState, ts_candidates, ts_measure, update_pi
from .recombination import BatchSelection, auto_kq_select, objective_rchq, wce_estimate

log = logging.getLogger(__name__)

OPTIMIZE = "optimize"
QUADRATURE = "quadrature"


@dataclass
class SoberConfig:
    """Run configuration.

    ``af=None`` picks FITBO when an ensemble is used, LFI otherwise
    (and no steering in quadrature mode). ``quasi`` draws the quadrature-mode
    measure from scrambled Sobol points instead of i.i.d. prior samples.
    """

    N: int = 20000
    M: int = 500
    n: int = 16
    variant: str = LFI
    af: str | None = None
    beta: float = 0.2
    fbgp: bool = False
    H: int = 50
    qd_method: str = "mcmc"
    qd_samples: int = 2000
    autokq: bool = False
    seed: int = 0
    mode: str = OPTIMIZE
    kernel: str = RBF_ARD
    mean_weighted: bool = False
    restarts: int = 8
    refit_every: int = 5
    maxiter: int = 200
    init_lengthscale: float = 0.5
    ts_functions: int | None = None
    quasi: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("batch size must be positive")
        if self.n > self.N or self.M > self.N:
            raise ValueError("need n <= N and M <= N")
        if self.variant not in (LFI, TS):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.mode not in (OPTIMIZE, QUADRATURE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.kernel not in (RBF_ARD, TANIMOTO):
            raise ValueError(f"unknown kernel {self.kernel!r}")

    def af_spec(self) -> AfSpec:
        if self.af is not None:
            return AfSpec(self.af, self.beta)
        if self.mode == QUADRATURE:
            return AfSpec(NONE)
        return AfSpec(FITBO if self.fbgp else AF_LFI, self.beta)


@dataclass
class IterationRecord:
    iteration: int
    X_batch: np.ndarray
    w_batch: np.ndarray
    y_batch: np.ndarray
    wce: float
    objective: float
    method: str
    duration: float
    elapsed: float
    best_y: float
    evidence_mean: float = np.nan
    evidence_var: float = np.nan
    measure: EmpiricalMeasure | None = field(default=None, repr=False)


class Surrogate:
    """GP or weighted GP ensemble seen through the domain encoding, in standardised units."""

    def __init__(self, domain: DomainSpec, models, weights, mean_weighted=False):
        self.domain = domain
        self.models = list(models)
        self.w = np.asarray(weights, dtype=float)
        self.mean_weighted = mean_weighted

    @property
    def single(self) -> bool:
        return len(self.models) == 1

    def predict_components(self, X):
        Z = self.domain.encode(X)
        preds = [m.predict(Z, full_cov=False) for m in self.models]
        return self.w, np.array([p[0] for p in preds]), np.array([p[1] for p in preds])

    def predict_encoded(self, Z):
        preds = [m.predict(Z, full_cov=False) for m in self.models]
        means = np.array([p[0] for p in preds])
        vars_ = np.array([p[1] for p in preds])
        return means, vars_

    def predict(self, X, full_cov=False):
        w, means, vars_ = self.predict_components(X)
        mean = w @ means
        var = np.maximum(w @ (vars_ + means**2) - mean**2, 0.0)
        return mean, var

    def mean(self, X):
        return self.predict(X)[0]

    def ensemble(self, Z, eta) -> EnsemblePrediction:
        means, vars_ = self.predict_encoded(Z)
        noise = np.array([m.noise for m in self.models])
        return EnsemblePrediction(self.w, means, vars_, noise, eta)

    def kernel(self):
        if self.single:
            model = self.models[0]
            if self.mean_weighted:
                return MeanWeightedCovariance(model)
            return model.posterior_covariance()
        return EnsembleCovariance(self.models, self.w)


def default_kernel(kind, dim, lengthscale=0.5):
    if kind == TANIMOTO:
        return tanimoto(1.0)
    return rbf(1.0, lengthscale, dim)


class Sober:
    """Ask/tell driver.

    Parameters
    ----------
    domain : DomainSpec
    config : SoberConfig
    prior : PriorModel, optional
        Initial belief; uniform over the domain by default.
    """

    def __init__(self, domain: DomainSpec, config: SoberConfig, prior: PriorModel | None = None):
        self.domain = domain
        self.config = config
        prior = uniform_prior(domain) if prior is None else prior
        self.pi = PiState.start(prior, config.variant)
        self.rng = np.random.default_rng(config.seed)
        self.X = np.zeros((0, domain.dim))
        self.y = np.zeros(0)
        self.records: list[IterationRecord] = []
        self.eta_raw = -np.inf
        self.hyper = None
        self.theta = pack(default_kernel(config.kernel, domain.encoded_dim, config.init_lengthscale), 1e-4)
        self.surrogate = self._prior_surrogate()
        self._pending = None
        self._elapsed = 0.0
        self.error = None

    # standardisation ----------------------------------------------------------

    @property
    def y_shift(self) -> float:
        return float(self.y.mean()) if self.y.size else 0.0

    @property
    def y_scale(self) -> float:
        if self.y.size < 2:
            return 1.0
        sd = float(self.y.std())
        return sd if sd > 0 else 1.0

    def _std(self, y):
        return (np.asarray(y) - self.y_shift) / self.y_scale

    def _prior_surrogate(self):
        kernel, noise = unpack(self.theta, self.config.kernel)
        data = Dataset(np.zeros((0, self.domain.encoded_dim)), np.zeros(0))
        return Surrogate(self.domain, [GpModel(data, kernel, noise)], np.ones(1), self.config.mean_weighted)

    # model fitting ----------------------------------------------------------------

    def _refit(self):
        cfg = self.config
        data = Dataset(self.domain.encode(self.X), self._std(self.y))
        if len(data) < 2:
            kernel, noise = unpack(self.theta, cfg.kernel)
            self.surrogate = Surrogate(self.domain, [GpModel(data, kernel, noise)], np.ones(1), cfg.mean_weighted)
            return
        fresh = (len(self.records) - 1) % cfg.refit_every == 0
        kernel, noise = unpack(self.theta, cfg.kernel)
        model = fit_mle(data, kernel, noise, restarts=cfg.restarts if fresh else 0,
                        seed=self.rng, maxiter=cfg.maxiter)
        self.theta = pack(model.kernel, model.noise)
        if not cfg.fbgp:
            self.surrogate = Surrogate(self.domain, [model], np.ones(1), cfg.mean_weighted)
            return
        hp = HyperPrior.standard(self.theta.size)
        if cfg.qd_method == "bq":
            hm = qd_bq(data, hp, M_samples=min(cfg.qd_samples, 400), H=cfg.H, kind=cfg.kernel, seed=self.rng)
        else:
            hm = qd_mcmc(data, hp, M_samples=max(cfg.qd_samples, cfg.H), H=cfg.H, kind=cfg.kernel,
                         seed=self.rng, start=self.theta)
        self.hyper = hm
        models, weights = [], []
        for wi, t in zip(hm.w, hm.theta):
            try:
                models.append(GpModel(data, *unpack(t, cfg.kernel)))
                weights.append(wi)
            except np.linalg.LinAlgError:
                continue
        if not models:
            models, weights = [model], [1.0]
        weights = np.array(weights) / np.sum(weights)
        self.surrogate = Surrogate(self.domain, models, weights, cfg.mean_weighted)

    def _eta_std(self) -> float:
        if not self.y.size:
            return 0.0
        current = float(np.max(self.surrogate.mean(self.X))) * self.y_scale + self.y_shift
        self.eta_raw = max(self.eta_raw, current)
        return (self.eta_raw - self.y_shift) / self.y_scale

    # ask / tell ----------------------------------------------------------------------

    def _measure(self, eta):
        cfg = self.config
        if cfg.mode == QUADRATURE:
            X = sample_prior(self.pi.initial, cfg.N, self.rng, quasi=cfg.quasi)
            return EmpiricalMeasure.uniform(X)
        if cfg.variant == LFI:
            self.pi.eta = eta
            return update_pi(self.pi, self.surrogate, self.domain, cfg.N, cfg.n, self.rng)
        X = sample_prior(self.pi.prior, cfg.N, self.rng)
        Z = self.domain.encode(X)
        model = self.surrogate.models[0]
        anchors = Z[self.rng.choice(Z.shape[0], min(cfg.M, Z.shape[0]), replace=False)]
        nf = fit_nystrom(model.kernel, anchors, anchors.shape[0], seed=self.rng)
        n_fn = cfg.ts_functions or cfg.N
        idx = ts_candidates(model, nf, EmpiricalMeasure.uniform(Z), n_fn, self.rng)
        return ts_measure(X, idx)

    def ask(self) -> BatchSelection:
        """Select the next batch; returned points are raw domain points."""
        t0 = time.perf_counter()
        cfg = self.config
        eta = self._eta_std()
        m_raw = self._measure(eta)
        Z = self.domain.encode(m_raw.X)
        m = EmpiricalMeasure(Z, m_raw.w)
        n = min(cfg.n, m.n_positive())
        kernel = self.surrogate.kernel()
        Z_nys, _, _ = deweighted_subsample(m, min(cfg.M, m.n_positive()), self.rng)
        nf = fit_nystrom(kernel, Z_nys, max(n - 1, 1), seed=self.rng)
        spec = cfg.af_spec()
        alpha = normalize_af(eval_af(spec, self.surrogate.ensemble(Z, eta)))
        seed = int(self.rng.integers(2**31 - 1))
        # in quadrature mode the batch also integrates the current mean exactly
        extra = None
        if cfg.mode == QUADRATURE and len(self.y) and n > 1:
            extra = self.surrogate.mean(m_raw.X)[None, :]
        if cfg.autokq:
            batch = auto_kq_select(m, nf, kernel, alpha, n, seed=seed, extra_moments=extra)
        else:
            batch = objective_rchq(m, nf, alpha, n, seed=seed, kernel=kernel, extra_moments=extra)
        out = BatchSelection(batch.indices, m_raw.X[batch.indices], batch.w, batch.objective,
                             batch.wce, batch.method, batch.steered)
        self._pending = (out, m_raw, m, kernel)
        self._elapsed += time.perf_counter() - t0
        return out

    def tell(self, X_batch, y_batch):
        t0 = time.perf_counter()
        X_batch = np.atleast_2d(np.asarray(X_batch, dtype=float))
        y_batch = np.asarray(y_batch, dtype=float).ravel()
        if X_batch.shape[0] != y_batch.size:
            raise ValueError("batch points and values differ in length")
        if not np.all(np.isfinite(y_batch)):
            raise ValueError("observations must be finite")
        self.domain.validate(X_batch)
        self.X = np.vstack([self.X, X_batch])
        self.y = np.concatenate([self.y, y_batch])
        pending = self._pending
        self._pending = None
        self.records.append(None)  # placeholder so the refit cadence sees this iteration
        self._refit()
        self.pi.advance()
        ev_mean = ev_var = np.nan
        if self.config.mode == QUADRATURE and pending is not None:
            ev_mean, ev_var = self.estimate_evidence(pending)
        batch, m_raw = (pending[0], pending[1]) if pending else (None, None)
        duration = time.perf_counter() - t0
        self._elapsed += duration
        self.records[-1] = IterationRecord(
            iteration=len(self.records) - 1,
            X_batch=X_batch,
            w_batch=batch.w if batch is not None and batch.size == y_batch.size
            else np.full(y_batch.size, 1.0 / y_batch.size),
            y_batch=y_batch,
            wce=batch.wce if batch is not None else np.nan,
            objective=batch.objective if batch is not None else np.nan,
            method=batch.method if batch is not None else "external",
            duration=duration,
            elapsed=self._elapsed,
            best_y=float(self.y.max()),
            evidence_mean=ev_mean,
            evidence_var=ev_var,
            measure=m_raw,
        )
        return self

    def estimate_evidence(self, pending=None):
        """Batch-rule estimate of the integral of the surrogate mean, in raw units.

        The variance is the full worst-case error of the batch under the
        current posterior covariance.
        """
        batch, _, m, _ = self._pending if pending is None else pending
        Zb = self.domain.encode(batch.X)
        mean_std = batch.w @ self.surrogate.mean(batch.X)
        var_std = wce_estimate(self.surrogate.kernel(), (Zb, batch.w), m)
        return (self.y_shift + self.y_scale * mean_std, max(var_std, 0.0) * self.y_scale**2)

    def best(self):
        if not self.y.size:
            return None, -np.inf
        i = int(np.argmax(self.y))
        return self.X[i], float(self.y[i])


def run_loop(config: SoberConfig, oracle, iterations: int, domain: DomainSpec,
             prior: PriorModel | None = None, callback=None):
    """Alternate ask, oracle evaluation and tell; an oracle error halts the loop.

    Returns the driver; ``driver.records`` holds one record per completed
    iteration and ``driver.error`` the halting exception, if any.
    """
    sober = Sober(domain, config, prior)
    for _ in range(iterations):
        batch = sober.ask()
        try:
            y = np.asarray(oracle(batch.X), dtype=float)
        except Exception as exc:  # noqa: BLE001 - any oracle failure ends the run
            log.error("oracle failed: %s", exc)
            sober.error = exc
            break
        sober.tell(batch.X, y)
        if callback is not None:
            callback(sober)
    return sober
