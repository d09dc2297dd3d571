"""Acquisition functions marginalised over a weighted hyperparameter ensemble."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

LFI = "lfi"
EI = "ei"
UCB = "ucb"
FITBO = "fitbo"
BQBC = "bqbc"
QBMGP = "qbmgp"
NONE = "none"
KINDS = (LFI, EI, UCB, FITBO, BQBC, QBMGP, NONE)


@dataclass(frozen=True)
class AfSpec:
    kind: str = LFI
    beta: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown acquisition function {self.kind!r}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass
class EnsemblePrediction:
    """Per-member predictions at a set of points.

    Attributes
    ----------
    weights : (H,) normalised member weights
    means, variances : (H, P) predictive means and variances
    noise : (H,) noise variances
    eta : (H,) per-member incumbent thresholds
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    noise: np.ndarray
    eta: np.ndarray

    @classmethod
    def single(cls, mean, var, noise=0.0, eta=0.0) -> "EnsemblePrediction":
        return cls(
            np.ones(1),
            np.atleast_2d(mean),
            np.atleast_2d(var),
            np.atleast_1d(float(noise)),
            np.atleast_1d(float(eta)),
        )

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(self.means)
        self.variances = np.maximum(np.atleast_2d(self.variances), 0.0)
        H = self.weights.size
        self.noise = np.broadcast_to(np.asarray(self.noise, dtype=float), (H,))
        self.eta = np.broadcast_to(np.asarray(self.eta, dtype=float), (H,))
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("ensemble weights must be normalised")
        if self.means.shape != self.variances.shape or self.means.shape[0] != H:
            raise ValueError("prediction shapes do not match the ensemble size")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.variances))):
            raise ValueError("predictions must be finite")

    def mixture_mean(self):
        return self.weights @ self.means

    def mixture_variance(self):
        mean = self.mixture_mean()
        second = self.weights @ (self.variances + self.means**2)
        return np.maximum(second - mean**2, 0.0)


def expected_improvement(mean, var, eta):
    """Closed-form EI, exactly zero where the variance is zero and ``mean <= eta``."""
    sd = np.sqrt(np.maximum(var, 0.0))
    gap = mean - eta
    safe = sd > 0
    with np.errstate(over="ignore"):
        z = np.where(safe, gap / np.where(safe, sd, 1.0), 0.0)
        ei = gap * ndtr(z) + sd * np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi)
    return np.where(safe, np.maximum(ei, 0.0), np.maximum(gap, 0.0))


def _entropy_gauss(var):
    return 0.5 * np.log(2 * np.pi * np.e * np.maximum(var, 1e-300))


def eval_af(spec: AfSpec, pred: EnsemblePrediction) -> np.ndarray:
    """Score every point; member sums are weighted by the ensemble weights."""
    w = pred.weights
    m, C = pred.means, pred.variances
    eta = pred.eta[:, None]
    if spec.kind == NONE:
        return np.zeros(m.shape[1])
    if spec.kind == LFI:
        z = (m - eta) / np.sqrt(np.maximum(C, 1e-12))
        return w @ np.exp(log_ndtr(z))
    if spec.kind == EI:
        return w @ expected_improvement(m, C, eta)
    if spec.kind == UCB:
        return w @ m + np.sqrt(spec.beta) * (w @ np.sqrt(C))
    between = w @ (m - w @ m) ** 2
    if spec.kind == BQBC:
        return between
    if spec.kind == QBMGP:
        return w @ C + between
    # FITBO with the moment-matched mixture entropy
    noise = pred.noise[:, None]
    var_y = pred.mixture_variance()
    return _entropy_gauss(var_y + w @ pred.noise) - w @ _entropy_gauss(C + noise)


def normalize_af(values) -> np.ndarray:
    """Min-max scale to ``[0, 1]``; constant input maps to zeros."""
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if not hi > lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)
