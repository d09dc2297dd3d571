"""Quadrature distillation of GP hyperposteriors and fully Bayesian prediction.

Hyperparameters are handled as log-parameter vectors laid out like
:func:`sober.gp.pack`: ``[log lengthscales..., log variance, log noise]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.stats import multivariate_normal

from .gp import Dataset, GpModel, fit_mle, gaussian_kernel_means, lml_at, unpack
from .kernels import RBF_ARD, fit_nystrom, eval_test_functions, rbf
from .measures import EmpiricalMeasure, as_rng
from .recombination import recombine

log = logging.getLogger(__name__)


@dataclass
class HyperMeasure:
    """Weighted hyperparameter samples in log space.

    ``eta`` optionally carries a per-sample incumbent threshold.
    ``flags`` records fallbacks taken while building the measure.
    """

    theta: np.ndarray
    w: np.ndarray
    kind: str = RBF_ARD
    eta: np.ndarray | None = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.w = np.asarray(self.w, dtype=float).ravel()
        if self.theta.shape[0] != self.w.size or self.w.size < 1:
            raise ValueError("need one weight per hypersample")
        if np.any(self.w < 0) or abs(self.w.sum() - 1.0) > 1e-9:
            raise ValueError("hypersample weights must be non-negative and sum to one")

    @property
    def size(self) -> int:
        return self.w.size

    @classmethod
    def point(cls, theta, kind=RBF_ARD) -> "HyperMeasure":
        return cls(np.atleast_2d(theta), np.ones(1), kind)

    def models(self, data: Dataset):
        return [GpModel(data, *unpack(t, self.kind)) for t in self.theta]


@dataclass(frozen=True)
class HyperPrior:
    """Multivariate normal over log-hyperparameters."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T):
            raise ValueError("hyperprior covariance must be square and symmetric")
        np.linalg.cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def standard(cls, dim: int) -> "HyperPrior":
        return cls(np.zeros(dim), np.eye(dim))

    def logpdf(self, theta):
        return multivariate_normal(self.mean, self.cov).logpdf(theta)

    def sample(self, n, rng):
        return rng.multivariate_normal(self.mean, self.cov, size=n)


def log_likelihood(theta, kind, data: Dataset) -> float:
    """Log marginal likelihood, ``-inf`` where the parameters are unusable."""
    try:
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            val = lml_at(theta, kind, data.X, data.y)
    except (np.linalg.LinAlgError, ValueError):
        return -np.inf
    return val if np.isfinite(val) else -np.inf


def random_walk_metropolis(log_target, start, n_samples, seed=None, burn_in=500, thin=2,
                           target_accept=0.3, scale=0.1):
    """Adaptive random-walk Metropolis; the step size adapts only during burn-in.

    Returns ``(samples, acceptance_rate)`` where the rate is measured after burn-in.
    """
    rng = as_rng(seed)
    x = np.asarray(start, dtype=float).copy()
    lp = log_target(x)
    log_scale = np.log(scale) if scale > 0 else -np.inf
    out = np.empty((n_samples, x.size))
    accepted = 0
    total = burn_in + n_samples * thin
    for t in range(total):
        step = np.exp(log_scale) * rng.standard_normal(x.size)
        prop = x + step
        lp_prop = log_target(prop)
        acc = lp_prop > -np.inf and np.log(rng.random()) < lp_prop - lp
        if acc:
            x, lp = prop, lp_prop
        if t < burn_in:
            if np.isfinite(log_scale):
                log_scale += (float(acc) - target_accept) / np.sqrt(t + 1.0)
        else:
            accepted += acc
            k = t - burn_in
            if k % thin == thin - 1:
                out[k // thin] = x
    return out, accepted / max(total - burn_in, 1)


def _hyper_kernel(samples):
    sd = samples.std(axis=0)
    sd = np.where(sd > 1e-8, sd, 1.0)
    return rbf(1.0, sd, samples.shape[1])


def distill(samples, w, H, kernel, seed=None):
    """Recombine a weighted sample set onto at most ``H`` points using ``kernel``'s Nystrom moments."""
    m = EmpiricalMeasure.from_unnormalized(samples, w).merge_duplicates()
    if m.size <= H:
        return m.X, m.w
    rng = as_rng(seed)
    n_anchor = min(m.size, max(4 * H, 256))
    anchors = m.X[np.sort(rng.choice(m.size, n_anchor, replace=False))]
    nf = fit_nystrom(kernel, anchors, max(H - 1, 1), seed=rng)
    Phi = eval_test_functions(nf, m.X)
    idx, weights = recombine(m, Phi, seed=rng)
    return m.X[idx], weights


def qd_mcmc(data: Dataset, hyperprior: HyperPrior, M_samples: int = 2000, H: int = 50,
            kind=RBF_ARD, seed=None, kernel_hyper=None, burn_in=500, thin=2,
            proposal_scale=0.1, start=None, return_chain=False):
    """Sample the hyperposterior by Metropolis and distil the chain onto ``H`` points.

    With ``return_chain`` the thinned chain is returned too, as ``(measure, chain)``.
    """
    if M_samples < H:
        raise ValueError("need at least H chain samples")
    rng = as_rng(seed)

    def log_target(theta):
        ll = log_likelihood(theta, kind, data)
        return ll + hyperprior.logpdf(theta) if np.isfinite(ll) else -np.inf

    x0 = hyperprior.mean if start is None else start
    chain, rate = random_walk_metropolis(
        log_target, x0, M_samples, rng, burn_in=burn_in, thin=thin, scale=proposal_scale
    )
    uniform = np.full(M_samples, 1.0 / M_samples)
    if rate < 0.01 and proposal_scale > 0:
        log.warning("Metropolis acceptance %.4f below 1%%; returning the thinned chain", rate)
        step = max(M_samples // H, 1)
        sub = chain[::step][:H]
        hm = HyperMeasure(sub, np.full(sub.shape[0], 1.0 / sub.shape[0]), kind, flags=["low_acceptance"])
    else:
        kernel = _hyper_kernel(chain) if kernel_hyper is None else kernel_hyper
        theta, w = distill(chain, uniform, H, kernel, rng)
        hm = HyperMeasure(theta, w, kind)
    return (hm, chain) if return_chain else hm


@dataclass
class BqWeights:
    """Intermediate quantities of the BQ route, exposed for checking."""

    theta_obs: np.ndarray
    L_obs: np.ndarray
    w_prime: np.ndarray
    w_bq: np.ndarray
    hyper_gp: GpModel


def bq_weights(hyper_gp: GpModel, hyperprior: HyperPrior):
    """``w' = z^T (K + s I)^{-1}`` with ``z`` the closed-form kernel means under the hyperprior."""
    z = gaussian_kernel_means(hyper_gp.kernel, hyper_gp.X, hyperprior.mean, hyperprior.cov)
    return cho_solve((hyper_gp.chol, True), z)


def qd_bq_weights(data: Dataset, hyperprior: HyperPrior, M_samples: int = 300, kind=RBF_ARD,
                  seed=None, restarts: int = 3) -> BqWeights:
    rng = as_rng(seed)
    theta_obs = hyperprior.sample(M_samples, rng)
    logL = np.array([log_likelihood(t, kind, data) for t in theta_obs])
    if not np.any(np.isfinite(logL)):
        raise ValueError("marginal likelihood is zero at every hypersample")
    # scale by the maximum; the constant cancels in the composite weights
    L = np.exp(logL - np.max(logL))
    dim = theta_obs.shape[1]
    hyper_gp = fit_mle(Dataset(theta_obs, L), rbf(np.var(L) + 1e-6, 1.0, dim), noise=1e-6,
                       restarts=restarts, seed=rng)
    w_prime = bq_weights(hyper_gp, hyperprior)
    denom = w_prime @ L
    w_bq = w_prime * L / denom if denom > 0 else np.full(L.size, np.nan)
    return BqWeights(theta_obs, L, w_prime, w_bq, hyper_gp)


def qd_bq(data: Dataset, hyperprior: HyperPrior, M_samples: int = 300, H: int = 50,
          kind=RBF_ARD, seed=None, **mcmc_kw) -> HyperMeasure:
    """BQ over the hyperprior, then distil the composite weights with the hyper-GP kernel.

    Negative composite weights are clipped to zero before distillation
    (flagged ``clipped_negative``). A non-positive normaliser falls back to
    :func:`qd_mcmc` (flagged ``bq_fallback``).
    """
    rng = as_rng(seed)
    res = qd_bq_weights(data, hyperprior, M_samples, kind, rng)
    if not np.all(np.isfinite(res.w_bq)):
        hm = qd_mcmc(data, hyperprior, max(2000, H), H, kind, rng, **mcmc_kw)
        hm.flags.append("bq_fallback")
        return hm
    flags = []
    w = res.w_bq
    if np.any(w < 0):
        flags.append("clipped_negative")
        w = np.clip(w, 0.0, None)
    theta, wq = distill(res.theta_obs, w, H, res.hyper_gp.kernel, rng)
    return HyperMeasure(theta, wq, kind, flags=flags)


# Fully Bayesian prediction -------------------------------------------------------


def fbgp_components(hm: HyperMeasure, data: Dataset, X):
    """Per-member weights, means (H, P), variances (H, P) and noise (H,)."""
    w, means, vars_, noise = [], [], [], []
    for wi, t in zip(hm.w, hm.theta):
        try:
            model = GpModel(data, *unpack(t, hm.kind))
        except np.linalg.LinAlgError:
            continue
        mu, var = model.predict(X, full_cov=False)
        w.append(wi)
        means.append(mu)
        vars_.append(var)
        noise.append(model.noise)
    if not w:
        raise np.linalg.LinAlgError("every hypersample failed")
    w = np.array(w)
    return w / w.sum(), np.array(means), np.array(vars_), np.array(noise)


def fbgp_predict(hm: HyperMeasure, data: Dataset, X, covariance="total"):
    """Mixture mean, variance and covariance of the weighted GP ensemble.

    ``covariance="total"`` gives the within-plus-between covariance, whose
    diagonal equals the returned variance. ``covariance="between"`` keeps only
    the spread of member means.

    Returns
    -------
    mean, var, cov, flags
    """
    X = np.atleast_2d(X)
    ws, means, covs, flags = [], [], [], []
    for wi, t in zip(hm.w, hm.theta):
        try:
            model = GpModel(data, *unpack(t, hm.kind))
        except np.linalg.LinAlgError:
            flags.append("dropped_hypersample")
            continue
        mu, C = model.predict(X, full_cov=True)
        ws.append(wi)
        means.append(mu)
        covs.append(C)
    if not ws:
        raise np.linalg.LinAlgError("every hypersample failed")
    w = np.array(ws) / np.sum(ws)
    means = np.array(means)
    covs = np.array(covs)
    mean = w @ means
    diag = np.einsum("hii->hi", covs)
    var = np.maximum(w @ (diag + means**2) - mean**2, 0.0)
    dev = means - mean
    between = np.einsum("h,hi,hj->ij", w, dev, dev)
    if covariance == "total":
        cov = np.einsum("h,hij->ij", w, covs) + between
    elif covariance == "between":
        cov = between
    else:
        raise ValueError(f"unknown covariance form {covariance!r}")
    return mean, var, cov, flags


def sample_eta(y, H, seed=None):
    """Per-hypersample thresholds ``max(y) + |e|`` with ``e ~ N(0, (0.1 * range)^2)``."""
    y = np.asarray(y, dtype=float)
    spread = np.ptp(y) if y.size > 1 else 1.0
    return y.max() + np.abs(as_rng(seed).normal(0.0, 0.1 * (spread or 1.0), size=H))


class EnsembleCovariance:
    """Mixture covariance of a weighted GP ensemble, usable as a kernel.

    ``form="total"`` is ``sum_i w_i C_i + sum_i w_i d_i d_i^T`` with
    ``d_i = m_i - m_mix``; ``form="between"`` keeps only the second sum.
    """

    def __init__(self, models, weights, form="total"):
        if form not in ("total", "between"):
            raise ValueError(f"unknown covariance form {form!r}")
        self.models = list(models)
        self.w = np.asarray(weights, dtype=float)
        self.form = form
        self.covs = [m.posterior_covariance() for m in self.models]

    def _dev(self, X):
        means = np.array([m.mean(X) for m in self.models])
        return means - self.w @ means

    def __call__(self, A, B):
        dA, dB = self._dev(A), self._dev(B)
        out = np.einsum("h,hi,hj->ij", self.w, dA, dB)
        if self.form == "total":
            for wi, c in zip(self.w, self.covs):
                out += wi * c(A, B)
        return out

    def diag(self, A):
        out = self.w @ self._dev(A) ** 2
        if self.form == "total":
            out += sum(wi * c.diag(A) for wi, c in zip(self.w, self.covs))
        return out

    def mean_embedding(self, A, B, w):
        dA, dB = self._dev(A), self._dev(B)
        out = (self.w[:, None] * dA).T @ (dB @ w)
        if self.form == "total":
            out += sum(wi * c.mean_embedding(A, B, w) for wi, c in zip(self.w, self.covs))
        return out
