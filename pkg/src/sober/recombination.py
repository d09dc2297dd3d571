"""Kernel quadrature by recombination, and the competing greedy MMD subsampler.

All points handed to these functions live in the kernel's input space
(encoded features); callers map indices back to raw domain points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import NystromFeatures, eval_test_functions, kernel_diag, kernel_embedding
from .measures import EmpiricalMeasure

WEIGHT_CLAMP = -1e-12
RCHQ = "rchq"
THINNING = "thinning"


@dataclass
class BatchSelection:
    """An ``n``-point weighted quadrature rule drawn from an empirical measure.

    Attributes
    ----------
    indices : ndarray of int
        Positions of the selected points in the source measure.
    X : ndarray
        The selected points.
    w : ndarray
        Non-negative weights summing to one.
    objective : float
        ``w @ alpha(X)`` for the acquisition values used to steer selection.
    wce : float
        Worst-case error without the selection-independent constant term.
    method : str
        ``"rchq"`` or ``"thinning"``.
    steered : bool
        Whether acquisition values steered the elimination (moments are
        always matched exactly; the objective is only a heuristic).
    """

    indices: np.ndarray
    X: np.ndarray
    w: np.ndarray
    objective: float = np.nan
    wce: float = np.nan
    method: str = RCHQ
    steered: bool = False

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w < WEIGHT_CLAMP):
            raise ValueError("batch weights must be non-negative")
        w = np.maximum(w, 0.0)
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("batch weights must sum to one")
        idx = np.asarray(self.indices, dtype=int)
        if np.unique(idx).size != idx.size:
            raise ValueError("batch indices must be distinct")
        self.w = w
        self.indices = idx

    @property
    def size(self) -> int:
        return self.w.size


# Caratheodory elimination ---------------------------------------------------


def _null_space(A):
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s.size == 0 or s[0] == 0:
        return Vt.T
    tol = max(A.shape) * np.finfo(float).eps * s[0]
    rank = int(np.sum(s > tol))
    return Vt[rank:].T.copy()


def _best_direction(V, w, alpha):
    """Pick the null column and sign giving the largest ``w @ alpha`` after the step."""
    best = None
    gain_dir = alpha @ V
    for sign in (1.0, -1.0):
        S = sign * V
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(S > 0, w[:, None] / np.where(S > 0, S, 1.0), np.inf)
        steps = ratios.min(axis=0)
        ok = np.isfinite(steps)
        value = np.where(ok, -steps * sign * gain_dir, -np.inf)
        j = int(np.argmax(value))
        if ok[j] and (best is None or value[j] > best[0]):
            best = (value[j], j, sign)
    return None if best is None else (best[1], best[2])


def caratheodory(A, w, alpha=None):
    """Reduce a positive measure to at most ``rank(A)`` atoms keeping ``A @ w``.

    Parameters
    ----------
    A : ndarray, shape (n, m)
        Moment vectors of the ``m`` atoms as columns. The first row should
        be constant so that total mass is preserved.
    w : ndarray, shape (m,)
        Non-negative weights.
    alpha : ndarray, optional
        Per-atom objective; when given each elimination step picks the null
        direction and sign maximising ``w @ alpha`` afterwards.

    Returns
    -------
    ndarray
        New weights, with at least ``m - rank(A)`` entries exactly zero.
    """
    w = np.array(w, dtype=float)
    V = _null_space(A)
    while V.shape[1] > 0:
        norms = np.max(np.abs(V), axis=0)
        live = norms > 1e-13
        if not np.all(live):
            V = V[:, live]
            if V.shape[1] == 0:
                break
            norms = norms[live]
        V = V / norms
        if alpha is None:
            j, sign = 0, 1.0
            if not np.any(V[:, 0] > 0):
                sign = -1.0
        else:
            choice = _best_direction(V, w, alpha)
            if choice is None:
                break
            j, sign = choice
        v = sign * V[:, j]
        pos = np.flatnonzero(v > 0)
        if pos.size == 0:
            V = np.delete(V, j, axis=1)
            continue
        ratios = w[pos] / v[pos]
        k = int(np.argmin(ratios))
        pivot = pos[k]
        w = w - ratios[k] * v
        w[pivot] = 0.0
        w[w < 0] = 0.0
        V = np.delete(V, j, axis=1)
        if V.shape[1]:
            V -= np.outer(v, V[pivot] / v[pivot])
            V[pivot] = 0.0
    return w


def _moment_matrix(test_fns, N):
    Phi = np.atleast_2d(np.asarray(test_fns, dtype=float))
    if Phi.size == 0:
        Phi = np.zeros((0, N))
    if Phi.shape[1] != N:
        raise ValueError(f"test-function matrix has {Phi.shape[1]} columns, measure has {N} points")
    if not np.all(np.isfinite(Phi)):
        raise ValueError("test-function values must be finite")
    A = np.vstack([np.ones((1, N)), Phi])
    scale = np.max(np.abs(A), axis=1)
    scale[scale == 0] = 1.0
    return A / scale[:, None]


def recombine(m, test_fns, seed=None, objective=None):
    """Select at most ``k + 1`` atoms matching ``k`` test-function moments.

    Divide and conquer: the current support is split into ``2n`` blocks
    (``n = k + 1``), each block collapsed to its weighted barycenter,
    and Caratheodory elimination run on the barycenters. Surviving blocks
    keep their relative internal weights. This repeats until at most
    ``2n`` atoms remain, which are reduced directly.

    Parameters
    ----------
    m : EmpiricalMeasure or ndarray
        The measure (or just its weights).
    test_fns : ndarray, shape (k, N)
        Test-function values at every atom.
    seed : int or Generator, optional
        Controls the random block assignment.
    objective : ndarray, shape (N,), optional
        Values to steer toward during elimination.

    Returns
    -------
    indices : ndarray of int
        Sorted indices of the retained atoms.
    weights : ndarray
        Their non-negative weights, summing to one.
    """
    w = np.asarray(m.w if isinstance(m, EmpiricalMeasure) else m, dtype=float)
    N = w.size
    A = _moment_matrix(test_fns, N)
    alpha = None if objective is None else np.asarray(objective, dtype=float)
    if alpha is not None and (alpha.shape != (N,) or not np.all(np.isfinite(alpha))):
        raise ValueError("objective values must be finite, one per point")
    n = A.shape[0]
    pos = np.flatnonzero(w > 0)
    if pos.size <= n:
        return pos, w[pos] / w[pos].sum()

    rng = np.random.default_rng(seed)
    idx = pos[rng.permutation(pos.size)]
    ww = w[idx].copy()
    n_blocks = 2 * n
    while idx.size > n_blocks:
        starts = np.array([b[0] for b in np.array_split(np.arange(idx.size), n_blocks)])
        mass = np.add.reduceat(ww, starts)
        bary = np.add.reduceat(A[:, idx] * ww, starts, axis=1) / mass
        a_bar = None if alpha is None else np.add.reduceat(alpha[idx] * ww, starts) / mass
        new_mass = caratheodory(bary, mass, a_bar)
        ends = np.append(starts[1:], idx.size)
        keep_idx, keep_w = [], []
        for g in np.flatnonzero(new_mass > 0):
            sl = slice(starts[g], ends[g])
            keep_idx.append(idx[sl])
            keep_w.append(ww[sl] * (new_mass[g] / mass[g]))
        idx = np.concatenate(keep_idx)
        ww = np.concatenate(keep_w)
    ww = caratheodory(A[:, idx], ww, None if alpha is None else alpha[idx])
    keep = ww > 0
    idx, ww = idx[keep], ww[keep]
    order = np.argsort(idx)
    idx, ww = idx[order], ww[order]
    return idx, ww / ww.sum()


# Worst-case error -------------------------------------------------------------


def wce_estimate(kernel, batch, m: EmpiricalMeasure, skip_const=False) -> float:
    """Squared MMD between a quadrature rule and an empirical measure.

    ``batch`` is a :class:`BatchSelection` or an ``(X, w)`` pair.
    ``skip_const`` drops ``w_rec^T K w_rec``, which does not depend on the
    rule, so differences between rules are unchanged.
    """
    Xb, wb = (batch.X, batch.w) if isinstance(batch, BatchSelection) else batch
    Xb = np.atleast_2d(Xb)
    wb = np.asarray(wb, dtype=float)
    val = wb @ kernel(Xb, Xb) @ wb - 2.0 * wb @ kernel_embedding(kernel, Xb, m.X, m.w)
    if not skip_const:
        val += m.w @ kernel_embedding(kernel, m.X, m.X, m.w)
    return float(val)


def objective_rchq(m: EmpiricalMeasure, nystrom: NystromFeatures, af_vals, n: int,
                   seed=None, kernel=None, extra_moments=None) -> BatchSelection:
    """Moment-matching batch of at most ``n`` points steered toward high ``af_vals``.

    Moments are total mass plus ``n - 1`` functions: the rows of
    ``extra_moments`` (values at ``m.X``, matched first) followed by as many
    Nystrom test functions as fit. ``kernel`` (default: the Nystrom source
    kernel) is used for the reported wce.
    """
    if n < 1:
        raise ValueError("batch size must be positive")
    af_vals = np.asarray(af_vals, dtype=float)
    extra = np.zeros((0, m.size)) if extra_moments is None else np.atleast_2d(extra_moments)
    n_nys = max(n - 1 - extra.shape[0], 0)
    Phi = np.vstack([extra, eval_test_functions(nystrom, m.X)[:n_nys]])[: max(n - 1, 0)]
    idx, w = recombine(m, Phi, seed=seed, objective=af_vals)
    kernel = nystrom.kernel if kernel is None else kernel
    Xb = m.X[idx]
    return BatchSelection(
        idx, Xb, w,
        objective=float(w @ af_vals[idx]),
        wce=wce_estimate(kernel, (Xb, w), m, skip_const=True),
        method=RCHQ,
        steered=True,
    )


def greedy_thinning(m: EmpiricalMeasure, kernel, af_vals, n: int, embedding=None) -> BatchSelection:
    """Greedily pick ``n`` distinct points whose uniform rule minimises wce against ``m``.

    Ties in the greedy score go to the higher acquisition value, then the lower index.
    ``embedding`` may pass a precomputed ``K(X, X) @ w``.
    """
    N = m.size
    if not 1 <= n <= N:
        raise ValueError("need 1 <= n <= N")
    af_vals = np.asarray(af_vals, dtype=float)
    emb = kernel_embedding(kernel, m.X, m.X, m.w) if embedding is None else embedding
    diag = kernel_diag(kernel, m.X)
    running = np.zeros(N)
    chosen = []
    available = np.ones(N, dtype=bool)
    for s in range(n):
        score = (2.0 * running + diag) / (s + 1) ** 2 - 2.0 * emb / (s + 1)
        score = np.where(available, score, np.inf)
        best = score.min()
        tied = np.flatnonzero(score <= best + 1e-12 * max(1.0, abs(best)))
        c = int(tied[np.argmax(af_vals[tied])])
        chosen.append(c)
        available[c] = False
        running += kernel(m.X, m.X[c : c + 1])[:, 0]
    idx = np.array(chosen)
    w = np.full(n, 1.0 / n)
    return BatchSelection(
        idx, m.X[idx], w,
        objective=float(w @ af_vals[idx]),
        wce=wce_estimate(kernel, (m.X[idx], w), m, skip_const=True),
        method=THINNING,
    )


def auto_kq_select(m: EmpiricalMeasure, nystrom: NystromFeatures, kernel, af_vals, n: int,
                   seed=None, thinning=True, extra_moments=None) -> BatchSelection:
    """Run both subsamplers and keep the one with lower wce (ties go to recombination)."""
    rchq = objective_rchq(m, nystrom, af_vals, n, seed=seed, kernel=kernel,
                          extra_moments=extra_moments)
    if not thinning or n > m.size:
        return rchq
    thin = greedy_thinning(m, kernel, af_vals, n)
    return thin if thin.wce < rchq.wce else rchq
