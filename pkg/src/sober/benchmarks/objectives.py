"""Synthetic test problems with known optima, posed as maximisation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import multivariate_normal

from ..measures import DomainSpec, PriorModel, gaussian_prior, uniform_prior
from .fingerprints import load_fingerprints

ACKLEY = "Ackley23"
ROSENBROCK = "Rosenbrock7"
HARTMANN = "Hartmann6"
SHEKEL = "Shekel4"
GAUSSIAN_BQ = "GaussianBQ"
FINGERPRINT = "FingerprintFile"
PROBLEMS = (ACKLEY, ROSENBROCK, HARTMANN, SHEKEL, GAUSSIAN_BQ, FINGERPRINT)


@dataclass
class Problem:
    """A black-box objective on a domain, with ground truth where known.

    Attributes
    ----------
    optimum : float
        Maximum objective value (NaN if unknown).
    maximizer : ndarray or None
        A raw-domain maximiser, used for distance metrics.
    evidence : float
        Integral of the objective under ``prior`` (quadrature problems only).
    """

    name: str
    domain: DomainSpec
    prior: PriorModel
    fn: object
    optimum: float = np.nan
    maximizer: np.ndarray | None = None
    evidence: float = np.nan
    quadrature: bool = False

    def __call__(self, X):
        return eval_objective(self, X)


def eval_objective(problem: Problem, X) -> np.ndarray:
    """Evaluate at raw points; raises ``ValueError`` outside the domain."""
    X = problem.domain.validate(np.atleast_2d(X))
    return np.asarray(problem.fn(problem.domain.decode_categories(X)), dtype=float)


# Ackley ----------------------------------------------------------------------


def ackley(X, a=20.0, b=0.2, c=2 * np.pi):
    X = np.atleast_2d(X)
    d = X.shape[1]
    r = np.sqrt(np.sum(X**2, axis=1) / d)
    return -a * np.exp(-b * r) - np.exp(np.sum(np.cos(c * X), axis=1) / d) + a + np.e


def make_ackley(n_cont=3, n_binary=20) -> Problem:
    """Negative Ackley on ``[-1, 1]^n_cont x {0, 1}^n_binary``; optimum 0 at the origin."""
    domain = DomainSpec(np.tile([-1.0, 1.0], (n_cont, 1)), (), n_binary)
    return Problem(ACKLEY, domain, uniform_prior(domain), lambda X: -ackley(X), 0.0,
                   np.zeros(n_cont + n_binary))


# Rosenbrock ------------------------------------------------------------------


ROSENBROCK_VALUES = (-4.0, 1.0, 6.0, 11.0)


def rosenbrock(X):
    X = np.atleast_2d(X)
    return np.sum(100.0 * (X[:, 1:] - X[:, :-1] ** 2) ** 2 + (X[:, :-1] - 1.0) ** 2, axis=1)


def make_rosenbrock(n_cat=6) -> Problem:
    """Negative Rosenbrock: one continuous dim on ``[-4, 11]`` plus categorical dims
    taking values ``{-4, 1, 6, 11}``; optimum 0 at all ones."""
    domain = DomainSpec(np.array([[-4.0, 11.0]]), (4,) * n_cat, 0,
                        category_values=(ROSENBROCK_VALUES,) * n_cat)
    best = np.concatenate([[1.0], np.full(n_cat, float(ROSENBROCK_VALUES.index(1.0)))])
    return Problem(ROSENBROCK, domain, uniform_prior(domain), lambda X: -rosenbrock(X), 0.0, best)


# Hartmann --------------------------------------------------------------------


HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_A = np.array([
    [10, 3, 17, 3.5, 1.7, 8],
    [0.05, 10, 17, 0.1, 8, 14],
    [3, 3.5, 1.7, 10, 17, 8],
    [17, 8, 0.05, 10, 0.1, 14],
])
HARTMANN_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN_ARGMAX = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
HARTMANN_MAX = 3.32237


def neg_hartmann6(X):
    X = np.atleast_2d(X)
    d2 = np.einsum("ij,nij->ni", HARTMANN_A, (X[:, None, :] - HARTMANN_P[None]) ** 2)
    return np.exp(-d2) @ HARTMANN_ALPHA


def make_hartmann() -> Problem:
    """Negative Hartmann-6 on the unit cube; maximum about 3.32237."""
    domain = DomainSpec(np.tile([0.0, 1.0], (6, 1)))
    return Problem(HARTMANN, domain, uniform_prior(domain), neg_hartmann6, HARTMANN_MAX,
                   HARTMANN_ARGMAX.copy())


# Shekel ------------------------------------------------------------------------


SHEKEL_BETA = 0.1 * np.array([1, 2, 2, 4, 4, 6, 3, 7, 5, 5], dtype=float)
SHEKEL_C = np.array([
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
])


def _shekel_terms(X):
    X = np.atleast_2d(X)
    return np.sum((X[:, :, None] - SHEKEL_C[None]) ** 2, axis=1) + SHEKEL_BETA


def neg_shekel(X):
    """``sum_i 1 / (||x - C_i||^2 + beta_i)``."""
    return np.sum(1.0 / _shekel_terms(X), axis=1)


def neg_shekel_printed(X):
    """The reciprocal-free variant, ``sum_i (||x - C_i||^2 + beta_i)``."""
    return np.sum(_shekel_terms(X), axis=1)


def make_shekel(as_printed=False) -> Problem:
    domain = DomainSpec(np.tile([0.0, 10.0], (4, 1)))
    prior = uniform_prior(domain)
    if as_printed:
        corners = np.array(list(itertools.product([0.0, 10.0], repeat=4)))
        vals = neg_shekel_printed(corners)
        k = int(np.argmax(vals))
        return Problem(SHEKEL, domain, prior, neg_shekel_printed, float(vals[k]), corners[k])
    res = minimize(lambda x: -neg_shekel(x)[0], np.full(4, 4.0), method="L-BFGS-B",
                   bounds=[(0, 10)] * 4)
    return Problem(SHEKEL, domain, prior, neg_shekel, float(-res.fun), res.x)


# Gaussian integrand --------------------------------------------------------------


def make_gaussian_bq(dim=2, center=None, width=0.5, prior_sd=1.0) -> Problem:
    """``f(x) = exp(-||x - c||^2 / (2 s^2))`` under ``N(0, sd^2 I)`` on a +-8 sd box.

    The integral is ``(2 pi s^2)^(d/2) N(c; 0, (s^2 + sd^2) I)``; the box
    truncation changes it by far less than reported precision.
    """
    c = np.full(dim, 0.3) if center is None else np.asarray(center, dtype=float)
    domain = DomainSpec(np.tile([-8.0 * prior_sd, 8.0 * prior_sd], (dim, 1)))
    prior = gaussian_prior(domain, np.zeros(dim), prior_sd**2 * np.eye(dim))
    truth = (2 * np.pi * width**2) ** (dim / 2) * multivariate_normal(
        np.zeros(dim), (width**2 + prior_sd**2) * np.eye(dim)
    ).pdf(c)

    def fn(X):
        return np.exp(-np.sum((np.atleast_2d(X) - c) ** 2, axis=1) / (2 * width**2))

    return Problem(GAUSSIAN_BQ, domain, prior, fn, 1.0, c.copy(), float(truth), quadrature=True)


# Fingerprints ----------------------------------------------------------------------


def make_fingerprint(path) -> Problem:
    """Enumerable binary candidates with stored values (oracle mode)."""
    bits, y, _ = load_fingerprints(path)
    if y is None:
        raise ValueError("fingerprint file needs a 'y' value for every record")
    domain = DomainSpec(np.zeros((0, 2)), (), bits.shape[1], candidates=bits)
    lookup = {row.tobytes(): val for row, val in zip(bits.astype(np.uint8), y)}

    def fn(X):
        return np.array([lookup[row.tobytes()] for row in np.atleast_2d(X).astype(np.uint8)])

    k = int(np.argmax(y))
    return Problem(FINGERPRINT, domain, uniform_prior(domain), fn, float(y[k]), bits[k].copy())


def make_problem(name, shekel_as_printed=False, **options) -> Problem:
    if name == ACKLEY:
        return make_ackley(**options)
    if name == ROSENBROCK:
        return make_rosenbrock(**options)
    if name == HARTMANN:
        return make_hartmann()
    if name == SHEKEL:
        return make_shekel(as_printed=shekel_as_printed)
    if name == GAUSSIAN_BQ:
        return make_gaussian_bq(**options)
    if name == FINGERPRINT:
        return make_fingerprint(**options)
    raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
