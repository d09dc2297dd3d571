"""Convergence metrics for a batch and the belief it was drawn from."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..measures import EmpiricalMeasure, weighted_moments


def batch_regret(optimum, w_batch, y_batch) -> float:
    """``|y* - w^T f(X_batch)|``."""
    return float(abs(optimum - np.asarray(w_batch) @ np.asarray(y_batch)))


def measure_variance(m: EmpiricalMeasure) -> float:
    """Total (trace) unbiased weighted variance; zero for a single atom."""
    if m.size < 2 or np.sum(m.w**2) >= 1.0 - 1e-15:
        return 0.0
    return float(np.trace(weighted_moments(m)[1]))


def measure_distance(m: EmpiricalMeasure, maximizer) -> float:
    """Euclidean distance between the weighted mean and the true maximiser."""
    return float(np.linalg.norm(m.w @ m.X - np.asarray(maximizer, dtype=float)))


@dataclass
class MetricsRow:
    best_y: float
    simple_regret: float = np.nan
    BR: float = np.nan
    MV: float = np.nan
    MD: float = np.nan


def compute_metrics(problem, best_y, w_batch, y_batch, measure: EmpiricalMeasure | None) -> MetricsRow:
    """Metrics for one iteration; distances use ``problem.domain.embed`` coordinates.

    Without a known optimum BR and regret are NaN; without a maximiser MD is NaN.
    """
    row = MetricsRow(float(best_y))
    if problem.quadrature:
        return row
    if np.isfinite(problem.optimum):
        row.simple_regret = float(problem.optimum - best_y)
        row.BR = batch_regret(problem.optimum, w_batch, y_batch)
    if measure is not None:
        emb = EmpiricalMeasure(problem.domain.embed(measure.X), measure.w)
        row.MV = measure_variance(emb)
        if problem.maximizer is not None:
            row.MD = measure_distance(emb, problem.domain.embed(problem.maximizer[None, :])[0])
    return row
