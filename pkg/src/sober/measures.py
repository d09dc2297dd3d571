"""Mixed-space domains, priors, and weighted empirical measures.

Raw points are float arrays laid out as ``[continuous..., categorical codes...,
binary bits...]``.  Kernels see the *encoded* layout produced by
:meth:`DomainSpec.encode`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, ndtri
from scipy.stats import qmc


class DegenerateMeasureError(ValueError):
    """Raised when a measure cannot be formed (no positive mass)."""


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# Domain -------------------------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    """Product space of continuous, categorical and binary dimensions.

    ``category_values`` optionally maps each categorical code to the value
    an objective sees; ``candidates`` makes the domain enumerable.
    """

    bounds: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    n_classes: tuple = ()
    n_binary: int = 0
    candidates: np.ndarray | None = None
    category_values: tuple | None = None

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(b)):
            raise ValueError("bounds must be finite")
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("each bound needs lower < upper")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "n_classes", tuple(int(c) for c in self.n_classes))
        if any(c < 2 for c in self.n_classes):
            raise ValueError("categorical dimensions need at least two classes")
        if self.dim == 0:
            raise ValueError("domain needs at least one dimension")
        if self.candidates is not None:
            cand = np.atleast_2d(np.asarray(self.candidates, dtype=float))
            if cand.shape[1] != self.dim:
                raise ValueError("candidate width does not match the domain")
            self.validate(cand)
            object.__setattr__(self, "candidates", cand)

    @property
    def n_cont(self) -> int:
        return self.bounds.shape[0]

    @property
    def n_cat(self) -> int:
        return len(self.n_classes)

    @property
    def dim(self) -> int:
        return self.n_cont + self.n_cat + self.n_binary

    @property
    def encoded_dim(self) -> int:
        return self.n_cont + sum(self.n_classes) + self.n_binary

    @property
    def enumerable(self) -> bool:
        return self.candidates is not None

    @property
    def discrete(self) -> bool:
        return self.n_cont == 0

    def split(self, X):
        X = np.atleast_2d(X)
        a, b = self.n_cont, self.n_cont + self.n_cat
        return X[:, :a], X[:, a:b].astype(int), X[:, b:]

    def validate(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"points have {X.shape[1]} dims, domain has {self.dim}")
        cont, cat, bits = self.split(X)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        if np.any(cont < lo) or np.any(cont > hi):
            raise ValueError("continuous coordinate outside bounds")
        if cat.size and (np.any(cat < 0) or np.any(cat >= np.array(self.n_classes))):
            raise ValueError("categorical code out of range")
        if np.any((bits != 0) & (bits != 1)):
            raise ValueError("binary coordinate not in {0, 1}")
        return X

    def _one_hot(self, cat):
        cols = []
        for k, c in enumerate(self.n_classes):
            cols.append(np.eye(c)[cat[:, k]])
        return np.hstack(cols) if cols else np.zeros((cat.shape[0], 0))

    def encode(self, X) -> np.ndarray:
        """Kernel features: unit-scaled continuous, one-hot categorical, bits."""
        cont, cat, bits = self.split(np.asarray(X, dtype=float))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return np.hstack([(cont - lo) / (hi - lo), self._one_hot(cat), bits])

    def embed(self, X) -> np.ndarray:
        """Euclidean embedding for distances: raw continuous, one-hot, bits."""
        cont, cat, bits = self.split(np.asarray(X, dtype=float))
        return np.hstack([cont, self._one_hot(cat), bits])

    def decode_categories(self, X) -> np.ndarray:
        """Replace categorical codes with their values, if a mapping exists."""
        X = np.array(X, dtype=float, copy=True)
        if self.category_values is None:
            return X
        a = self.n_cont
        for k, values in enumerate(self.category_values):
            X[:, a + k] = np.asarray(values, dtype=float)[X[:, a + k].astype(int)]
        return X


# Priors -------------------------------------------------------------------


@dataclass(frozen=True)
class UniformBox:
    lo: np.ndarray
    hi: np.ndarray

    def sample(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=(n, self.lo.size))

    def sample_quasi(self, n, rng):
        return self.lo + (self.hi - self.lo) * _sobol_uniforms(n, self.lo.size, rng)

    def logpdf(self, X):
        inside = np.all((X >= self.lo) & (X <= self.hi), axis=1)
        return np.where(inside, -np.sum(np.log(self.hi - self.lo)), -np.inf)


def _sobol_uniforms(n, d, rng):
    """First ``n`` points of a scrambled Sobol sequence of length ``2**k >= n``."""
    sobol = qmc.Sobol(d, scramble=True, seed=rng)
    U = sobol.random_base2(int(np.ceil(np.log2(max(n, 2)))))[:n]
    return np.clip(U, 1e-12, 1.0 - 1e-12)


def _truncated_draws(draw, n, lo, hi, rng, max_rounds=100):
    out = np.empty((0, lo.size))
    for _ in range(max_rounds):
        Z = draw(max(2 * (n - out.shape[0]), 16), rng)
        Z = Z[np.all((Z >= lo) & (Z <= hi), axis=1)]
        out = np.vstack([out, Z])
        if out.shape[0] >= n:
            return out[:n]
    # the box carries almost no mass; fall back to clipping
    Z = np.clip(draw(n - out.shape[0], rng), lo, hi)
    return np.vstack([out, Z])[:n]


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian restricted to the domain box (density up to a constant)."""

    mean: np.ndarray
    cov: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def _draw(self, n, rng):
        return rng.multivariate_normal(self.mean, self.cov, size=n)

    def sample(self, n, rng):
        return _truncated_draws(self._draw, n, self.lo, self.hi, rng)

    def sample_quasi(self, n, rng):
        """Scrambled Sobol points mapped through the Gaussian quantile.

        Points outside the box are replaced by ordinary truncated draws.
        """
        L = np.linalg.cholesky(self.cov)
        X = self.mean + ndtri(_sobol_uniforms(n, self.mean.size, rng)) @ L.T
        X = X[np.all((X >= self.lo) & (X <= self.hi), axis=1)]
        if X.shape[0] < n:
            X = np.vstack([X, self.sample(n - X.shape[0], rng)])
        return X

    def logpdf(self, X):
        d = self.mean.size
        L = np.linalg.cholesky(self.cov)
        z = np.linalg.solve(L, (X - self.mean).T)
        return (
            -0.5 * np.sum(z**2, axis=0)
            - np.sum(np.log(np.diag(L)))
            - 0.5 * d * np.log(2 * np.pi)
        )


@dataclass(frozen=True)
class WeightedKDE:
    """Weighted Gaussian KDE with a diagonal bandwidth, truncated to a box."""

    centers: np.ndarray
    weights: np.ndarray
    bandwidth: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def mean(self):
        return self.weights @ self.centers

    def _draw(self, n, rng):
        idx = rng.choice(self.weights.size, size=n, p=self.weights)
        return self.centers[idx] + rng.standard_normal((n, self.bandwidth.size)) * self.bandwidth

    def sample(self, n, rng):
        return _truncated_draws(self._draw, n, self.lo, self.hi, rng)

    def logpdf(self, X, chunk=1024):
        X = np.atleast_2d(X)
        d = self.bandwidth.size
        logw = np.log(self.weights)
        Cs = self.centers / self.bandwidth
        const = -np.sum(np.log(self.bandwidth)) - 0.5 * d * np.log(2 * np.pi)
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], chunk):
            Xs = X[s : s + chunk] / self.bandwidth
            d2 = (
                np.sum(Xs**2, axis=1)[:, None]
                + np.sum(Cs**2, axis=1)[None, :]
                - 2.0 * Xs @ Cs.T
            )
            out[s : s + chunk] = logsumexp(logw[None, :] - 0.5 * np.maximum(d2, 0), axis=1)
        return out + const


@dataclass(frozen=True)
class PriorModel:
    """Independent per-block prior over a :class:`DomainSpec`."""

    domain: DomainSpec
    continuous: object | None = None
    categorical: tuple = ()
    bernoulli: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        cats = tuple(np.asarray(p, dtype=float) for p in self.categorical)
        for p, c in zip(cats, self.domain.n_classes):
            if p.size != c or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                raise ValueError("categorical weights must be a normalized vector")
        bern = np.asarray(self.bernoulli, dtype=float)
        if bern.size and np.any((bern <= 0) | (bern >= 1)):
            raise ValueError("Bernoulli weights must lie in (0, 1)")
        object.__setattr__(self, "categorical", cats)
        object.__setattr__(self, "bernoulli", bern)

    def logpdf(self, X) -> np.ndarray:
        """Log density (continuous part) times mass (discrete part)."""
        X = np.atleast_2d(X)
        if self.domain.enumerable:
            return np.full(X.shape[0], -np.log(self.domain.candidates.shape[0]))
        cont, cat, bits = self.domain.split(X)
        out = np.zeros(X.shape[0])
        if self.continuous is not None:
            out += self.continuous.logpdf(cont)
        for k, p in enumerate(self.categorical):
            out += np.log(p[cat[:, k]])
        if self.bernoulli.size:
            out += np.sum(np.where(bits == 1, np.log(self.bernoulli), np.log1p(-self.bernoulli)), axis=1)
        return out


def uniform_prior(domain: DomainSpec) -> PriorModel:
    """Uniform box, equal-weight categorical and Bernoulli(0.5) blocks."""
    cont = None
    if domain.n_cont:
        cont = UniformBox(domain.bounds[:, 0].copy(), domain.bounds[:, 1].copy())
    cats = tuple(np.full(c, 1.0 / c) for c in domain.n_classes)
    return PriorModel(domain, cont, cats, np.full(domain.n_binary, 0.5))


def gaussian_prior(domain: DomainSpec, mean, cov) -> PriorModel:
    if domain.n_cat or domain.n_binary:
        raise ValueError("Gaussian prior is for purely continuous domains")
    cont = GaussianPrior(
        np.asarray(mean, dtype=float),
        np.atleast_2d(np.asarray(cov, dtype=float)),
        domain.bounds[:, 0].copy(),
        domain.bounds[:, 1].copy(),
    )
    return PriorModel(domain, cont)


def sample_prior(prior: PriorModel, N: int, seed=None, quasi=False) -> np.ndarray:
    """I.i.d. draws from independent blocks; enumerable domains return all candidates.

    With ``quasi`` the continuous block uses scrambled Sobol points when its
    distribution supports them (uniform box or Gaussian); discrete blocks
    stay i.i.d.
    """
    domain = prior.domain
    if domain.enumerable:
        return domain.candidates.copy()
    if N < 1:
        raise ValueError("N must be positive")
    rng = as_rng(seed)
    parts = []
    if prior.continuous is not None:
        if quasi and hasattr(prior.continuous, "sample_quasi"):
            parts.append(prior.continuous.sample_quasi(N, rng))
        else:
            parts.append(prior.continuous.sample(N, rng))
    for p in prior.categorical:
        parts.append(rng.choice(p.size, size=N, p=p)[:, None].astype(float))
    if prior.bernoulli.size:
        parts.append((rng.random((N, prior.bernoulli.size)) < prior.bernoulli).astype(float))
    return np.hstack(parts)


# Empirical measures -------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point set; weights are non-negative and sum to one."""

    X: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        w = np.asarray(self.w, dtype=float).ravel()
        if X.shape[0] != w.size or w.size < 1:
            raise ValueError("need one weight per point and at least one point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to one")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_unnormalized(cls, X, w) -> "EmpiricalMeasure":
        w = np.clip(np.asarray(w, dtype=float), 0.0, None)
        total = w.sum()
        if not total > 0:
            raise DegenerateMeasureError("measure has no positive mass")
        return cls(X, w / total)

    @classmethod
    def uniform(cls, X) -> "EmpiricalMeasure":
        X = np.atleast_2d(X)
        return cls(X, np.full(X.shape[0], 1.0 / X.shape[0]))

    @property
    def size(self) -> int:
        return self.w.size

    def n_positive(self) -> int:
        return int(np.count_nonzero(self.w > 0))

    def merge_duplicates(self) -> "EmpiricalMeasure":
        """Collapse repeated rows, summing their weights."""
        uniq, inv = np.unique(self.X, axis=0, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=self.w, minlength=uniq.shape[0])
        return EmpiricalMeasure(uniq, w / w.sum())


def normalize_log_weights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if not np.any(finite):
        raise DegenerateMeasureError("all weights are zero")
    w = np.zeros_like(logw)
    w[finite] = np.exp(logw[finite] - logsumexp(logw[finite]))
    return w / w.sum()


def importance_weights(L_vals, prior_density, log=False) -> np.ndarray:
    """Normalized ``L / pi'``; with ``log=True`` both inputs are logarithms."""
    L_vals = np.asarray(L_vals, dtype=float)
    prior_density = np.asarray(prior_density, dtype=float)
    if L_vals.shape != prior_density.shape:
        raise ValueError("likelihood and density lengths differ")
    if log:
        return normalize_log_weights(L_vals - prior_density)
    if np.any(L_vals < 0) or np.any(prior_density <= 0):
        raise ValueError("need L >= 0 and a positive prior density")
    if not np.any(L_vals > 0):
        raise DegenerateMeasureError("likelihood is zero at every sample")
    ratio = L_vals / prior_density
    return ratio / ratio.sum()


def weighted_moments(m: EmpiricalMeasure):
    """Weighted mean and unbiased weighted covariance ``/(1 - sum w^2)``."""
    w, X = m.w, m.X
    s2 = np.sum(w**2)
    if m.size < 2 or s2 >= 1.0 - 1e-15:
        raise ValueError("covariance undefined: all mass on one point")
    mu = w @ X
    D = X - mu
    cov = (D * w[:, None]).T @ D / (1.0 - s2)
    return mu, cov


def effective_sample_size(w) -> float:
    return 1.0 / np.sum(np.asarray(w) ** 2)


def wkde_fit(m: EmpiricalMeasure, lo=None, hi=None, prune=1e-6) -> WeightedKDE:
    """Weighted KDE with Scott bandwidth ``N_eff^(-1/(d+4)) * weighted std``.

    Centers whose weight is below ``prune * max(w)`` are dropped; sampling and
    density evaluation both use the pruned mixture, so importance weights
    stay consistent.
    """
    X = m.X
    d = X.shape[1]
    lo = np.full(d, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(d, np.inf) if hi is None else np.asarray(hi, dtype=float)
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    n_eff = effective_sample_size(m.w)
    try:
        _, cov = weighted_moments(m)
        std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except ValueError:
        std = np.zeros(d)
    bw = n_eff ** (-1.0 / (d + 4)) * std
    bw = np.where(bw > 1e-12 * width, bw, 1e-3 * width)
    keep = m.w >= prune * m.w.max()
    w = m.w[keep]
    return WeightedKDE(X[keep].copy(), w / w.sum(), bw, lo, hi)


DISCRETE_CLAMP = 1e-4


def mle_update_discrete(prior: PriorModel, m: EmpiricalMeasure) -> PriorModel:
    """Weighted-frequency maximum-likelihood refit of the discrete blocks.

    Weighted frequencies maximise ``sum_i w_i log p(x_i)`` for independent
    Bernoulli and categorical blocks; results are clamped to
    ``[1e-4, 1 - 1e-4]``.
    """
    _, cat, bits = prior.domain.split(m.X)
    cats = []
    for k, c in enumerate(prior.domain.n_classes):
        freq = np.bincount(cat[:, k], weights=m.w, minlength=c)
        freq = np.clip(freq, DISCRETE_CLAMP, 1 - DISCRETE_CLAMP)
        cats.append(freq / freq.sum())
    bern = prior.bernoulli
    if bits.shape[1]:
        bern = np.clip(m.w @ bits, DISCRETE_CLAMP, 1 - DISCRETE_CLAMP)
    return replace(prior, categorical=tuple(cats), bernoulli=bern)


def deweighted_subsample(m: EmpiricalMeasure, M: int, seed=None):
    """Draw ``M`` points with probabilities proportional to ``1 / w``.

    Returns ``(points, indices, with_replacement)``; the flag is set when
    fewer than ``M`` points carry positive weight.
    """
    rng = as_rng(seed)
    pos = np.flatnonzero(m.w > 0)
    logp = -np.log(m.w[pos])
    replace_ = pos.size < M
    if replace_:
        idx = rng.choice(pos, size=M, replace=True, p=normalize_log_weights(logp))
    else:
        # Gumbel top-k: sequential sampling without replacement, in log space
        keys = logp + rng.gumbel(size=pos.size)
        idx = pos[np.argsort(-keys, kind="stable")[:M]]
    return m.X[idx], idx, replace_
