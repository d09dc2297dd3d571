"""Positive semi-definite kernels and Nystrom test functions.

Kernels act on *encoded* feature matrices (see
:meth:`sober.measures.DomainSpec.encode`): continuous coordinates scaled to
the unit interval, categorical dimensions one-hot encoded, binary dimensions
as 0/1 coordinates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.utils.extmath import randomized_svd

RBF_ARD = "rbf"
TANIMOTO = "tanimoto"

KernelFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KernelParams:
    """Kernel hyperparameters.

    Parameters
    ----------
    kind : {"rbf", "tanimoto"}
    variance : float
        Kernel variance ``v``; ``k(x, x) = v``.
    lengthscales : ndarray
        One positive lengthscale per encoded dimension (RBF only).
    """

    kind: str = RBF_ARD
    variance: float = 1.0
    lengthscales: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.kind == TANIMOTO:
            ls = np.zeros(0)
        elif self.kind != RBF_ARD:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.variance > 0:
            raise ValueError("kernel variance must be positive")
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int | None:
        return self.lengthscales.size if self.kind == RBF_ARD else None

    def __call__(self, X, Y):
        return gram(self, X, Y)

    def diag(self, X):
        X = np.atleast_2d(X)
        if self.kind == TANIMOTO:
            nz = np.any(X != 0, axis=1)
            return np.where(nz, self.variance, 0.0)
        return np.full(X.shape[0], self.variance)

    def mean_embedding(self, X, Y, w):
        """``K(X, Y) @ w`` evaluated in row chunks."""
        return chunked_embedding(self, X, Y, w)

    def with_params(self, variance=None, lengthscales=None) -> "KernelParams":
        return KernelParams(
            self.kind,
            self.variance if variance is None else variance,
            self.lengthscales if lengthscales is None else lengthscales,
        )


def rbf(variance, lengthscales, dim) -> KernelParams:
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (dim,)).copy()
    return KernelParams(RBF_ARD, float(variance), ls)


def tanimoto(variance=1.0) -> KernelParams:
    return KernelParams(TANIMOTO, float(variance), np.zeros(0))


def _check_dims(params, X, Y):
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if params.kind == RBF_ARD and X.shape[1] != params.lengthscales.size:
        raise ValueError(
            f"dimension mismatch: points have {X.shape[1]} dims, "
            f"kernel has {params.lengthscales.size} lengthscales"
        )


def _check_binary(X):
    if not np.all((X == 0) | (X == 1)):
        raise ValueError("Tanimoto kernel requires binary (0/1) inputs")


DIRECT_DIST_MAX = 1 << 18


def scaled_sqdist(X, Y, lengthscales):
    """Squared distances after dividing by the lengthscales.

    Small blocks use explicit differences, so identical rows give exactly
    zero; large blocks use the expanded inner-product form, with the
    diagonal zeroed and the result symmetrised when ``X is Y``.
    """
    same = X is Y
    Xs = X / lengthscales
    Ys = Xs if same else Y / lengthscales
    if Xs.shape[0] * Ys.shape[0] * Xs.shape[1] <= DIRECT_DIST_MAX:
        return np.sum((Xs[:, None, :] - Ys[None, :, :]) ** 2, axis=2)
    d2 = (
        np.sum(Xs**2, axis=1)[:, None]
        + np.sum(Ys**2, axis=1)[None, :]
        - 2.0 * Xs @ Ys.T
    )
    if same:
        d2 = 0.5 * (d2 + d2.T)
        np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def gram(params: KernelParams, X, Y) -> np.ndarray:
    """Matrix of pairwise kernel values ``K(X, Y)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        return np.zeros((X.shape[0], Y.shape[0]))
    _check_dims(params, X, Y)
    if params.kind == RBF_ARD:
        return params.variance * np.exp(-0.5 * scaled_sqdist(X, Y, params.lengthscales))
    _check_binary(X)
    _check_binary(Y)
    inner = X @ Y.T
    denom = np.sum(X, axis=1)[:, None] + np.sum(Y, axis=1)[None, :] - inner
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(denom > 0, inner / np.where(denom > 0, denom, 1.0), 0.0)
    return params.variance * ratio


def eval_kernel(params: KernelParams, x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    return float(gram(params, x[None, :], y[None, :])[0, 0])


def chunked_embedding(kernel: KernelFn, X, Y, w, chunk=2048) -> np.ndarray:
    """Compute ``K(X, Y) @ w`` without materialising the full matrix."""
    X = np.atleast_2d(X)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        stop = start + chunk
        out[start:stop] = kernel(X[start:stop], Y) @ w
    return out


def kernel_diag(kernel: KernelFn, X) -> np.ndarray:
    if hasattr(kernel, "diag"):
        return kernel.diag(X)
    return np.array([kernel(x[None, :], x[None, :])[0, 0] for x in np.atleast_2d(X)])


def kernel_embedding(kernel: KernelFn, X, Y, w) -> np.ndarray:
    if hasattr(kernel, "mean_embedding"):
        return kernel.mean_embedding(X, Y, w)
    return chunked_embedding(kernel, X, Y, w)


# Nystrom ------------------------------------------------------------------

EXACT_EIG_MAX = 256
EIG_CLAMP = 1e-10


@dataclass
class NystromFeatures:
    """Low-rank spectral approximation of a kernel on anchor points.

    ``eigvecs[:, j]`` and ``eigvals[j]`` are the retained eigenpairs of
    ``K(anchors, anchors)``, sorted descending.
    """

    anchors: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    kernel: KernelFn
    truncated: bool = False

    @property
    def n_features(self) -> int:
        return self.eigvals.size

    def approx_gram(self, X, Y=None) -> np.ndarray:
        """``sum_j phi_j(x) phi_j(y) / lambda_j``."""
        PX = eval_test_functions(self, X)
        PY = PX if Y is None else eval_test_functions(self, Y)
        return (PX / self.eigvals[:, None]).T @ PY


def _sym_eig_desc(K):
    lam, U = np.linalg.eigh(K)
    order = np.argsort(lam)[::-1]
    return lam[order], U[:, order]


def fit_nystrom(
    kernel: KernelFn,
    X_nys,
    n_features: int,
    oversample: int = 10,
    seed=None,
    power_iters: int = 2,
) -> NystromFeatures:
    """Eigendecompose ``K(X_nys, X_nys)`` and keep the top ``n_features`` pairs.

    Exact symmetric eigendecomposition is used when there are at most 256
    anchors; above that a randomized SVD with the given oversampling and
    power iterations.  Eigenvalues at or below ``1e-10 * lambda_1`` are
    dropped together with their eigenvectors.
    """
    X_nys = np.atleast_2d(np.asarray(X_nys, dtype=float))
    M = X_nys.shape[0]
    if M < 1 or n_features < 1:
        raise ValueError("need at least one anchor and one feature")
    truncated = False
    if n_features > M:
        warnings.warn(f"n_features={n_features} exceeds anchor count {M}; truncating")
        n_features = M
        truncated = True
    K = kernel(X_nys, X_nys)
    K = 0.5 * (K + K.T)
    if M <= EXACT_EIG_MAX or n_features + oversample >= M:
        lam, U = _sym_eig_desc(K)
        lam, U = lam[:n_features], U[:, :n_features]
    else:
        U, lam, _ = randomized_svd(
            K,
            n_components=n_features,
            n_oversamples=oversample,
            n_iter=power_iters,
            random_state=np.random.RandomState(_seed_int(seed)),
        )
        # singular values of a PSD matrix are its eigenvalues; fix signs so
        # that u^T K u >= 0
        lam = np.einsum("ij,ij->j", U, K @ U)
    top = lam[0] if lam.size and lam[0] > 0 else 0.0
    keep = lam > EIG_CLAMP * top if top > 0 else np.zeros(lam.size, dtype=bool)
    return NystromFeatures(X_nys, U[:, keep], lam[keep], kernel, truncated)


def _seed_int(seed):
    if seed is None:
        return None
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**31 - 1))
    return int(seed) % (2**31 - 1)


def eval_test_functions(nf: NystromFeatures, X) -> np.ndarray:
    """Rows ``phi_j(X) = u_j^T K(X_nys, X)``; shape ``(n_features, len(X))``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != nf.anchors.shape[1]:
        raise ValueError("dimension mismatch between anchors and query points")
    return nf.eigvecs.T @ nf.kernel(nf.anchors, X)
