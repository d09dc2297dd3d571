"""Belief over the maximiser: likelihood-free weighting, prior refits, TS candidates."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, logsumexp

from .gp import GpModel
from .kernels import NystromFeatures, eval_test_functions
from .measures import (
    DegenerateMeasureError,
    DomainSpec,
    EmpiricalMeasure,
    PriorModel,
    as_rng,
    mle_update_discrete,
    normalize_log_weights,
    sample_prior,
    wkde_fit,
)

LFI = "lfi"
TS = "ts"
VAR_FLOOR = 1e-12


@dataclass
class PiState:
    """Current prior, threshold and bookkeeping for the belief update.

    ``eta`` is in the caller's units of ``y``. ``initial`` is never modified,
    so a reset restores it exactly.
    """

    prior: PriorModel
    initial: PriorModel
    eta: float = 0.0
    variant: str = LFI
    iteration: int = 0
    resets: int = 0
    pending: PriorModel | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.variant not in (LFI, TS):
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def start(cls, prior: PriorModel, variant=LFI) -> "PiState":
        return cls(prior=prior, initial=prior, variant=variant)

    def advance(self):
        """Replace the prior with the belief computed in the last update."""
        if self.pending is not None:
            self.prior = self.pending
            self.pending = None
        self.iteration += 1

    def reset(self):
        self.prior = self.initial
        self.resets += 1


def _components(surrogate, X):
    """Mixture weights, means and variances; a plain model is a one-component mixture."""
    if hasattr(surrogate, "predict_components"):
        return surrogate.predict_components(X)
    mean, var = surrogate.predict(X, full_cov=False)
    return np.ones(1), np.asarray(mean)[None, :], np.asarray(var)[None, :]


def lfi_from_moments(mean, var, eta, log=False):
    z = (np.asarray(mean) - eta) / np.sqrt(np.maximum(var, VAR_FLOOR))
    return log_ndtr(z) if log else np.exp(log_ndtr(z))


def lfi_likelihood(surrogate, X, eta, log=False):
    """Probability that the surrogate exceeds ``eta`` at each point.

    For an ensemble the per-member probabilities are averaged with the
    ensemble weights.
    """
    w, means, vars_ = _components(surrogate, X)
    logs = lfi_from_moments(means, vars_, eta, log=True)
    pos = w > 0
    out = logsumexp(logs[pos] + np.log(w[pos])[:, None], axis=0)
    return out if log else np.exp(out)


def _refit_prior(prior: PriorModel, domain: DomainSpec, m: EmpiricalMeasure) -> PriorModel:
    """Weighted KDE on continuous columns, weighted MLE on discrete blocks."""
    new = prior
    if domain.n_cat or domain.n_binary:
        new = mle_update_discrete(new, m)
    if domain.n_cont:
        cont = EmpiricalMeasure(m.X[:, : domain.n_cont], m.w)
        new = replace(new, continuous=wkde_fit(cont, domain.bounds[:, 0], domain.bounds[:, 1]))
    return new


def _weigh(surrogate, X, prior: PriorModel, eta):
    logL = lfi_likelihood(surrogate, X, eta, log=True)
    return normalize_log_weights(logL - prior.logpdf(X))


def update_pi(state: PiState, surrogate, domain: DomainSpec, N: int, n: int, seed=None):
    """One belief update: sample, weight, refit the prior, resample, reweight.

    Parameters
    ----------
    state : PiState
        Supplies the current prior and threshold. The refitted prior is stored
        in ``state.pending``; call :meth:`PiState.advance` to adopt it.
    surrogate
        Anything with ``predict(X, full_cov=False)`` on raw domain points, or
        ``predict_components(X)`` for ensembles; predictions must be on the
        same scale as ``state.eta``.
    N, n : int
        Sample count and batch size (the minimum number of positive weights).

    Returns
    -------
    EmpiricalMeasure
        Raw domain points with normalised importance weights.
    """
    rng = as_rng(seed)
    eta = state.eta
    if domain.enumerable:
        X = domain.candidates.copy()
        w = normalize_log_weights(lfi_likelihood(surrogate, X, eta, log=True))
        state.pending = state.prior
        return EmpiricalMeasure(X, w)

    X = sample_prior(state.prior, N, rng)
    w = _weigh(surrogate, X, state.prior, eta)
    if np.count_nonzero(w > 0) < n:
        state.reset()
        X = sample_prior(state.prior, N, rng)
        w = _weigh(surrogate, X, state.prior, eta)
        if np.count_nonzero(w > 0) < n:
            raise DegenerateMeasureError("fewer than n positive weights after prior reset")

    first = EmpiricalMeasure(X, w)
    new_prior = _refit_prior(state.prior, domain, first)
    X2 = sample_prior(new_prior, N, rng)
    w2 = _weigh(surrogate, X2, new_prior, eta)
    if np.count_nonzero(w2 > 0) < n:
        state.pending = state.prior
        return first
    state.pending = new_prior
    m = EmpiricalMeasure(X2, w2)
    if domain.discrete:
        m = m.merge_duplicates()
    return m


# Thompson sampling -----------------------------------------------------------


def posterior_samples(model: GpModel, nystrom: NystromFeatures, Z, n_functions: int, seed=None,
                      chunk: int = 512):
    """Approximate joint posterior function draws at encoded points ``Z``.

    Prior draws use the Nystrom features of the model's kernel; each draw is
    conditioned on the data by the exact pathwise update
    ``f + K(., X)(K + s I)^{-1}(y - f(X) - eps)``. Yields ``(start, values)``
    blocks with ``values`` of shape ``(block, len(Z))``.
    """
    rng = as_rng(seed)
    lam_isqrt = 1.0 / np.sqrt(nystrom.eigvals)
    Phi_Z = eval_test_functions(nystrom, Z) * lam_isqrt[:, None]
    has_data = len(model.data) > 0
    if has_data:
        Phi_X = eval_test_functions(nystrom, model.X) * lam_isqrt[:, None]
        Kzx = model.kernel(Z, model.X)
        noise_sd = np.sqrt(model.noise + model.jitter)
    for start in range(0, n_functions, chunk):
        size = min(chunk, n_functions - start)
        xi = rng.standard_normal((size, nystrom.n_features))
        F = xi @ Phi_Z
        if has_data:
            eps = noise_sd * rng.standard_normal((size, len(model.data)))
            resid = model.y[None, :] - xi @ Phi_X - eps
            coef = solve_triangular(model.chol.T, solve_triangular(model.chol, resid.T, lower=True))
            F += (Kzx @ coef).T
        yield start, F


def ts_candidates(model: GpModel, nystrom: NystromFeatures, m: EmpiricalMeasure, n_functions: int,
                  seed=None) -> np.ndarray:
    """Indices into ``m.X`` of the argmax of each posterior draw (``m.X`` encoded)."""
    out = np.empty(n_functions, dtype=int)
    for start, F in posterior_samples(model, nystrom, m.X, n_functions, seed):
        out[start : start + F.shape[0]] = np.argmax(F, axis=1)
    return out


def ts_measure(X_raw, cand_idx) -> EmpiricalMeasure:
    """Frequency-weighted measure on the TS argmaxes with duplicates merged."""
    uniq, counts = np.unique(cand_idx, return_counts=True)
    return EmpiricalMeasure(np.atleast_2d(X_raw)[uniq], counts / counts.sum())
