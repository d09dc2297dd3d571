"""Exact Gaussian-process regression with a zero prior mean.

Inputs are encoded feature matrices.  Hyperparameters are optimised in log
space: ``[log lengthscales..., log variance, log noise]`` (no lengthscales for
the Tanimoto kernel).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import multivariate_normal

from .kernels import RBF_ARD, TANIMOTO, KernelParams, chunked_embedding, scaled_sqdist

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
LOG_LS_BOUNDS = (-5.0, 5.0)
LOG_VAR_BOUNDS = (-5.0, 5.0)
LOG_NOISE_BOUNDS = (-12.0, 2.0)


class CholeskyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None] if y.size == X.size else X[None, :]
        if X.shape[0] != y.size:
            raise ValueError("X and y lengths differ")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size

    def extend(self, X, y) -> "Dataset":
        X = np.atleast_2d(X)
        if len(self) == 0:
            return Dataset(X, y)
        return Dataset(np.vstack([self.X, X]), np.concatenate([self.y, np.ravel(y)]))


def empty_dataset(dim: int) -> Dataset:
    return Dataset(np.zeros((0, dim)), np.zeros(0))


def _cholesky_with_jitter(K, variance):
    n = K.shape[0]
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * variance
    while jitter <= JITTER_MAX * variance * (1 + 1e-12):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise CholeskyError("Cholesky failed after jitter escalation")


class GpModel:
    """Fitted GP posterior; immutable after construction."""

    def __init__(self, data: Dataset, kernel: KernelParams, noise: float = 1e-6):
        if noise < 0:
            raise ValueError("noise variance must be non-negative")
        self.data = data
        self.kernel = kernel
        self.noise = float(noise)
        self.fit_failed = False
        n = len(data)
        if n:
            K = kernel(data.X, data.X) + self.noise * np.eye(n)
            self.chol, self.jitter = _cholesky_with_jitter(K, kernel.variance)
            self.alpha = cho_solve((self.chol, True), data.y)
        else:
            self.chol = np.zeros((0, 0))
            self.jitter = 0.0
            self.alpha = np.zeros(0)

    @property
    def X(self):
        return self.data.X

    @property
    def y(self):
        return self.data.y

    def _v(self, X):
        """``L^{-1} K(X_obs, X)``."""
        return solve_triangular(self.chol, self.kernel(self.X, X), lower=True)

    def mean(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if len(self.data) == 0:
            return np.zeros(X.shape[0])
        return self.kernel(X, self.X) @ self.alpha

    def predict(self, X, full_cov=True):
        """Posterior mean and covariance (or variance when ``full_cov=False``)."""
        X = np.atleast_2d(X)
        if len(self.data) == 0:
            mu = np.zeros(X.shape[0])
            if full_cov:
                return mu, self.kernel(X, X)
            return mu, self.kernel.diag(X)
        Kxo = self.kernel(X, self.X)
        mu = Kxo @ self.alpha
        V = solve_triangular(self.chol, Kxo.T, lower=True)
        if full_cov:
            C = self.kernel(X, X) - V.T @ V
            C = 0.5 * (C + C.T)
            idx = np.diag_indices_from(C)
            C[idx] = np.maximum(C[idx], 0.0)
            return mu, C
        var = self.kernel.diag(X) - np.sum(V**2, axis=0)
        return mu, np.maximum(var, 0.0)

    def posterior_covariance(self) -> "PosteriorCovariance":
        return PosteriorCovariance(self)


def predict(model: GpModel, X, full_cov=True):
    return model.predict(X, full_cov)


class PosteriorCovariance:
    """The posterior covariance ``C(., .)`` usable as a kernel."""

    def __init__(self, model: GpModel):
        self.model = model
        self._cached = None

    def _v(self, X):
        if self._cached is not None and self._cached[0] is X:
            return self._cached[1]
        V = self.model._v(X)
        if X.shape[0] > 64:
            self._cached = (X, V)
        return V

    def __call__(self, A, B):
        m = self.model
        K = m.kernel(A, B)
        if len(m.data) == 0:
            return K
        return K - self._v(A).T @ self._v(B)

    def diag(self, A):
        m = self.model
        d = m.kernel.diag(A)
        if len(m.data) == 0:
            return d
        return np.maximum(d - np.sum(self._v(A) ** 2, axis=0), 0.0)

    def mean_embedding(self, A, B, w):
        m = self.model
        out = chunked_embedding(m.kernel, A, B, w)
        if len(m.data) == 0:
            return out
        return out - self._v(A).T @ (self._v(B) @ w)


class MeanWeightedCovariance:
    """``k(x, x') = m(x) C(x, x') m(x')`` with the mean clamped at zero."""

    def __init__(self, model: GpModel, floor: float = 0.0):
        self.cov = PosteriorCovariance(model)
        self.model = model
        self.floor = floor

    def _m(self, X):
        return np.maximum(self.model.mean(X), self.floor)

    def __call__(self, A, B):
        return self._m(A)[:, None] * self.cov(A, B) * self._m(B)[None, :]

    def diag(self, A):
        return self._m(A) ** 2 * self.cov.diag(A)

    def mean_embedding(self, A, B, w):
        return self._m(A) * self.cov.mean_embedding(A, B, self._m(B) * w)


# Marginal likelihood ------------------------------------------------------


def pack(kernel: KernelParams, noise: float) -> np.ndarray:
    """Log hyperparameters ``[log ls..., log v, log noise]``; zero noise maps to ``-inf``."""
    with np.errstate(divide="ignore"):
        return np.concatenate([np.log(kernel.lengthscales), [np.log(kernel.variance), np.log(noise)]])


def unpack(theta, kind) -> tuple[KernelParams, float]:
    theta = np.asarray(theta, dtype=float)
    if kind == TANIMOTO:
        return KernelParams(TANIMOTO, float(np.exp(theta[-2]))), float(np.exp(theta[-1]))
    return KernelParams(RBF_ARD, float(np.exp(theta[-2])), np.exp(theta[:-2])), float(np.exp(theta[-1]))


def _lml_and_grad(theta, kind, X, y):
    kernel, noise = unpack(theta, kind)
    n = y.size
    Kf = kernel(X, X)
    L, _ = _cholesky_with_jitter(Kf + noise * np.eye(n), kernel.variance)
    alpha = cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    Q = W * Kf
    grad = np.empty_like(theta)
    if kind == RBF_ARD:
        Xs = X / kernel.lengthscales
        r = Q.sum(axis=1)
        # 0.5 * sum_ij Q_ij (xs_id - xs_jd)^2
        grad[:-2] = r @ Xs**2 - np.sum(Xs * (Q @ Xs), axis=0)
    grad[-2] = 0.5 * Q.sum()
    grad[-1] = 0.5 * noise * np.trace(W)
    return lml, grad


def log_marginal_likelihood(model: GpModel, with_grad=False):
    """``log N(y; 0, K + noise I)``; optionally its gradient in log-parameters."""
    theta = pack(model.kernel, model.noise)
    lml, grad = _lml_and_grad(theta, model.kernel.kind, model.X, model.y)
    return (lml, grad) if with_grad else lml


def lml_at(theta, kind, X, y) -> float:
    return _lml_and_grad(np.asarray(theta, dtype=float), kind, X, y)[0]


def param_bounds(kind, dim):
    n_ls = dim if kind == RBF_ARD else 0
    return [LOG_LS_BOUNDS] * n_ls + [LOG_VAR_BOUNDS, LOG_NOISE_BOUNDS]


def _restart_points(kind, X, restarts, rng):
    """Random starts; odd ones draw lengthscales around the data's own spread."""
    dim = X.shape[1]
    n_ls = dim if kind == RBF_ARD else 0
    spread = np.log(np.maximum(X.std(axis=0), 1e-3)) if X.shape[0] > 1 else np.zeros(dim)
    pts = []
    for k in range(restarts):
        if k % 2:
            ls = spread[:n_ls] + rng.uniform(np.log(0.1), np.log(3.0), size=n_ls)
        else:
            ls = rng.uniform(np.log(0.05), np.log(2.0), size=n_ls)
        pts.append(np.concatenate([ls, [rng.uniform(-2, 2), rng.uniform(-10, -2)]]))
    return pts


def _data_scaled_start(kind, X):
    """Lengthscales at half the per-dimension spread, unit variance, small noise."""
    n_ls = X.shape[1] if kind == RBF_ARD else 0
    ls = np.log(0.5 * np.maximum(X.std(axis=0), 1e-3))[:n_ls]
    return np.concatenate([ls, [0.0, np.log(1e-4)]])


def fit_mle(
    data: Dataset,
    init: KernelParams,
    noise: float = 1e-4,
    restarts: int = 8,
    seed=None,
    maxiter: int = 200,
) -> GpModel:
    """Type-II maximum likelihood with L-BFGS-B from the init plus random restarts.

    Besides ``init`` one deterministic start scaled to the data spread is
    always tried, so warm-started refits can escape a degenerate optimum.

    The best restart wins (ties broken by restart order).  If every restart
    fails, the init-parameter model is returned with ``fit_failed`` set.
    """
    kind = init.kind
    dim = data.X.shape[1]
    bounds = param_bounds(kind, dim)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(seed)
    starts = [np.clip(pack(init, max(noise, np.exp(lo[-1]))), lo, hi)]
    if data.X.shape[0] > 1:
        starts.append(np.clip(_data_scaled_start(kind, data.X), lo, hi))
    starts += [np.clip(t, lo, hi) for t in _restart_points(kind, data.X, restarts, rng)]

    def objective(theta):
        try:
            lml, grad = _lml_and_grad(theta, kind, data.X, data.y)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        return -lml, -grad

    best_val, best_theta = np.inf, None
    for k, start in enumerate(starts):
        try:
            res = minimize(
                objective, start, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": maxiter},
            )
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            log.debug("restart %d failed", k)
            continue
        if np.isfinite(res.fun) and res.fun < 1e24 and res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    if best_theta is None:
        model = GpModel(data, init, noise)
        model.fit_failed = True
        return model
    kernel, nz = unpack(best_theta, kind)
    return GpModel(data, kernel, nz)


# Warped GPs ---------------------------------------------------------------


def parabolic_moments(m_g, C_g, eta):
    """Moment-matched ``f = eta - g^2 / 2`` from the mean and covariance of ``g``."""
    m_g = np.asarray(m_g, dtype=float)
    C_g = np.atleast_2d(C_g)
    mean = eta - 0.5 * (m_g**2 + np.diag(C_g))
    cov = 0.5 * C_g**2 + m_g[:, None] * C_g * m_g[None, :]
    return mean, cov


def mmlt_moments(m_g, C_g, variant="printed"):
    """Moment-matched log-warped moments.

    ``variant="printed"`` uses ``m_g(x) m_g(x') [C_g(x, x) - 1]`` literally
    (not symmetric in its arguments);
    ``variant="standard"`` uses ``m(x) m(x') [exp(C_g(x, x')) - 1]``.
    """
    m_g = np.asarray(m_g, dtype=float)
    C_g = np.atleast_2d(C_g)
    mean = np.exp(m_g + 0.5 * np.diag(C_g))
    if variant == "printed":
        cov = m_g[:, None] * m_g[None, :] * (np.diag(C_g)[:, None] - 1.0)
    elif variant == "standard":
        cov = mean[:, None] * mean[None, :] * np.expm1(C_g)
    else:
        raise ValueError(f"unknown MMLT variant {variant!r}")
    return mean, cov


PARABOLIC = "parabolic"
MMLT = "mmlt"


@dataclass
class WarpedGp:
    """GP ``g`` fitted on warped observations.

    ``eta`` is the parabolic ceiling; ``variant`` selects the MMLT covariance.
    """

    base: GpModel
    warp_kind: str
    eta: float = 0.0
    variant: str = "printed"


def default_eta(y) -> float:
    y = np.asarray(y, dtype=float)
    spread = np.ptp(y) if y.size > 1 else 1.0
    return float(y.max() + 1e-6 * (spread if spread > 0 else 1.0))


def fit_parabolic(data: Dataset, init: KernelParams, eta=None, **fit_kw) -> WarpedGp:
    eta = default_eta(data.y) if eta is None else float(eta)
    if eta < data.y.max():
        raise ValueError("eta must be at least max(y_obs)")
    yg = np.sqrt(2.0 * (eta - data.y))
    return WarpedGp(fit_mle(Dataset(data.X, yg), init, **fit_kw), PARABOLIC, eta)


def fit_mmlt(data: Dataset, init: KernelParams, variant="printed", **fit_kw) -> WarpedGp:
    if np.any(data.y <= -1):
        raise ValueError("MMLT warping needs y > -1")
    yg = np.log1p(data.y)
    return WarpedGp(fit_mle(Dataset(data.X, yg), init, **fit_kw), MMLT, variant=variant)


def predict_parabolic(w: WarpedGp, X):
    if w.warp_kind != PARABOLIC:
        raise ValueError("not a parabolic warped GP")
    if len(w.base.data) and w.eta < np.max(_unwarp_parabolic(w)):
        raise ValueError("eta below max(y_obs)")
    m_g, C_g = w.base.predict(X)
    mean, cov = parabolic_moments(m_g, C_g, w.eta)
    idx = np.diag_indices_from(cov)
    cov[idx] = np.maximum(cov[idx], 0.0)
    return mean, cov


def _unwarp_parabolic(w):
    return w.eta - 0.5 * w.base.y**2


def predict_mmlt(w: WarpedGp, X):
    if w.warp_kind != MMLT:
        raise ValueError("not an MMLT warped GP")
    m_g, C_g = w.base.predict(X)
    return mmlt_moments(m_g, C_g, w.variant)


# Closed-form Bayesian quadrature -----------------------------------------


def gaussian_kernel_means(kernel: KernelParams, X, mu, Sigma):
    """``z_i = int k(x, x_i) N(x; mu, Sigma) dx`` for an RBF kernel."""
    if kernel.kind != RBF_ARD:
        raise ValueError("closed-form kernel means need the RBF kernel")
    W = np.diag(kernel.lengthscales**2)
    scale = kernel.variance * np.sqrt(np.linalg.det(2 * np.pi * W))
    return scale * multivariate_normal(mean=np.asarray(mu, dtype=float), cov=W + Sigma).pdf(np.atleast_2d(X)).reshape(-1)


def gaussian_bq(model: GpModel, mu, Sigma):
    """Mean and variance of ``int f(x) N(x; mu, Sigma) dx`` under the GP posterior."""
    kernel = model.kernel
    Sigma = np.atleast_2d(Sigma)
    W = np.diag(kernel.lengthscales**2)
    prior_var = kernel.variance * np.sqrt(np.linalg.det(2 * np.pi * W)) * multivariate_normal(
        mean=np.zeros(len(mu)), cov=W + 2 * Sigma
    ).pdf(np.zeros(len(mu)))
    if len(model.data) == 0:
        return 0.0, float(prior_var)
    z = gaussian_kernel_means(kernel, model.X, mu, Sigma)
    mean = float(z @ model.alpha)
    v = solve_triangular(model.chol, z, lower=True)
    return mean, float(max(prior_var - v @ v, 0.0))
