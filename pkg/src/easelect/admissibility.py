"""Admissibility indicator for candidate models.

A model with active set M is admissible at level epsilon when no coefficient
matrix supported on at most |M| - 1 predictor columns (drawn from all p
predictors) can reproduce the model's fitted mean within epsilon, measured
in the residual-covariance-scaled squared Frobenius norm

    g(B) = 1/2 || S^{-1/2} (Bhat_M X_M - B X) ||_F^2 ,

where S is the residual cross-product matrix of the fit.  Two evaluators are
provided: a projected-gradient-descent heuristic (any p) that minimizes g
over the column-sparsity constraint, and an exhaustive oracle (small p) that
scans every support exactly.  PGD can only err in one direction: whenever it
reports h = 0 it holds a certificate B with g(B) <= epsilon.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import CapExceeded
from .model_core import Dataset, FittedModel

EXHAUSTIVE_CAP = 15

# Relative inflation of the power-iteration eigenvalue estimate.  The
# estimate converges from below, and the descent property of the 1/L step
# needs L to dominate the true Lipschitz constant.
_LAM_MAX_SAFETY = 1e-6


@dataclass(frozen=True)
class HConfig:
    """Settings for the projected-gradient admissibility check."""

    epsilon: float
    rel_tol: float = 1e-7
    max_iterations: int = 5000
    early_stop: bool = True

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.rel_tol <= 0:
            raise ValueError("convergence threshold must be positive")


@dataclass(frozen=True)
class HResult:
    """Outcome of an admissibility evaluation.

    ``objective`` is the best objective value seen (exact for the oracle);
    ``certificate`` is a q x p coefficient matrix witnessing h = 0 when one
    exists, obeying the column-sparsity constraint.  ``trace`` holds the
    PGD objective value at each visited iterate.  For verdicts settled by
    the model-size indicator alone, ``objective`` is NaN.
    """

    h: int
    objective: float
    iterations: int
    method: str
    certificate: np.ndarray | None = None
    trace: tuple[float, ...] | None = None


def warm_start(fitted: FittedModel) -> np.ndarray:
    """PGD initializer: the fit embedded into q x p with its minimum-norm
    column zeroed (ties resolved to the lowest index)."""
    if fitted.model.size < 2:
        raise ValueError("warm start needs at least two active predictors")
    b = np.zeros((fitted.b_hat.shape[0], fitted.n_predictors))
    rows = fitted.model.row_indexer
    b[:, rows] = fitted.b_hat
    drop = rows[int(np.argmin(np.einsum("ij,ij->j", fitted.b_hat, fitted.b_hat)))]
    b[:, drop] = 0.0
    return b


def _size_indicator_zero(fitted: FittedModel, n: int, q: int) -> bool:
    return fitted.model.size >= n - q


def _degenerate_result(method: str) -> HResult:
    return HResult(h=0, objective=float("nan"), iterations=0, method=method)


def _objective(
    data: Dataset, fitted: FittedModel, b: np.ndarray, support: np.ndarray
) -> float:
    rows = fitted.model.row_indexer
    resid = fitted.b_hat @ data.x[rows] - b[:, support] @ data.x[support]
    w = solve_triangular(fitted.sigma_factor.lower, resid, lower=True)
    return 0.5 * float(np.einsum("ij,ij->", w, w))


def _top_columns(norms: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values; ties at the cut go to lower indices
    (the stable-sort rule)."""
    p = norms.shape[0]
    if k >= p:
        return np.arange(p)
    kth = np.partition(norms, p - k)[p - k]
    keep = np.flatnonzero(norms > kth)
    if keep.size < k:
        at_cut = np.flatnonzero(norms == kth)
        keep = np.concatenate([keep, at_cut[: k - keep.size]])
    return np.sort(keep)


def _singleton_objective(data: Dataset, fitted: FittedModel) -> float:
    # |M| = 1 forces the competing matrix to zero, so g is closed-form.
    rows = fitted.model.row_indexer
    w = solve_triangular(
        fitted.sigma_factor.lower, fitted.b_hat @ data.x[rows], lower=True
    )
    return 0.5 * float(np.einsum("ij,ij->", w, w))


def drop_one_objectives(fitted: FittedModel) -> np.ndarray:
    """Exact objective of dropping each active predictor and refitting.

    The fitted mean lies in the row space of X_M, so its residual after
    projection onto X_{M minus j} is the j-th coefficient column times the
    orthogonalized j-th predictor row, giving

        g_drop(j) = 1/2 ||S^{-1/2} Bhat_j||^2 / (G^{-1})_{jj}

    with G the active Gram matrix.  These are exact feasible objectives
    (supports of size |M| - 1), hence upper bounds on the PGD minimum.
    """
    m = fitted.model.size
    gram_inv = cho_solve(
        (fitted.gram_factor.lower, True), np.eye(m), check_finite=False
    )
    scaled = solve_triangular(
        fitted.sigma_factor.lower, fitted.b_hat, lower=True, check_finite=False
    )
    col_sq = np.einsum("ij,ij->j", scaled, scaled)
    return 0.5 * col_sq / np.diag(gram_inv)


def _drop_one_start(data: Dataset, fitted: FittedModel) -> tuple[np.ndarray, int]:
    """PGD initializer: the exact refit on the best drop-one support."""
    drops = drop_one_objectives(fitted)
    j_pos = int(np.argmin(drops))
    rows = fitted.model.row_indexer
    keep_pos = np.delete(np.arange(fitted.model.size), j_pos)
    keep_rows = rows[keep_pos]
    gram_kk = data.gram[np.ix_(keep_rows, keep_rows)]
    cross = data.gram[np.ix_(keep_rows, rows)]
    # lstsq: the active Gram slice can be badly conditioned near |M| = n.
    coeff = np.linalg.lstsq(gram_kk, cross @ fitted.b_hat.T, rcond=None)[0].T
    b = np.zeros((fitted.b_hat.shape[0], fitted.n_predictors))
    b[:, keep_rows] = coeff
    return b, j_pos


def h_pgd(data: Dataset, fitted: FittedModel, cfg: HConfig) -> HResult:
    """Projected-gradient admissibility check.

    Runs gradient steps of length 1/L, L the Lipschitz constant
    ``lambda_max(X X^T) / lambda_min(S)``, followed by hard thresholding to
    the |M| - 1 columns of largest norm, until the relative objective change
    drops below the threshold, the objective drops to epsilon (early
    inadmissibility certificate), or the iteration cap is reached.  Returns
    ``h = I(g > epsilon)`` for the final iterate.
    """
    n, q = fitted.n_obs, data.q
    if _size_indicator_zero(fitted, n, q):
        return _degenerate_result("pgd")
    if not fitted.full_rank or fitted.sigma_factor is None:
        return _degenerate_result("pgd")
    m = fitted.model.size
    if m == 1:
        g = _singleton_objective(data, fitted)
        cert = np.zeros((q, data.p)) if g <= cfg.epsilon else None
        return HResult(int(g > cfg.epsilon), g, 0, "pgd", cert)

    rows = fitted.model.row_indexer
    lower = fitted.sigma_factor.lower
    x = data.x
    lam_max = data.gram_lambda_max * (1.0 + _LAM_MAX_SAFETY)
    lip = lam_max / fitted.sigma_factor.min_eigenvalue()
    target = fitted.b_hat @ x[rows]  # q x n, loop invariant

    # The exact refit on the best drop-one support dominates the zeroed-
    # column initializer and often sits at (or certifies) the minimum.
    b, _ = _drop_one_start(data, fitted)
    support = np.flatnonzero(np.einsum("ij,ij->j", b, b))
    g_prev = None
    iterations = 0
    trace: list[float] = []
    while True:
        resid = target - b[:, support] @ x[support]
        w = solve_triangular(lower, resid, lower=True, check_finite=False)
        g = 0.5 * float(np.einsum("ij,ij->", w, w))
        trace.append(g)
        if cfg.early_stop and g <= cfg.epsilon:
            return HResult(0, g, iterations, "pgd", b, tuple(trace))
        if g_prev is not None and abs(g_prev - g) <= cfg.rel_tol * max(g, 1e-300):
            break
        if iterations >= cfg.max_iterations:
            break
        iterations += 1
        # gradient of g at b is -(S^{-1} resid) X^T; step then threshold to
        # the m - 1 columns of largest norm.
        grad_w = solve_triangular(lower, w, lower=True, trans="T", check_finite=False)
        stepped = b + (grad_w @ x.T) / lip
        keep = _top_columns(np.einsum("ij,ij->j", stepped, stepped), m - 1)
        b = np.zeros_like(stepped)
        b[:, keep] = stepped[:, keep]
        support = keep
        g_prev = g
    h = int(g > cfg.epsilon)
    return HResult(h, g, iterations, "pgd", None if h else b, tuple(trace))


def h_exhaustive(
    data: Dataset, fitted: FittedModel, epsilon: float, cap: int = EXHAUSTIVE_CAP
) -> HResult:
    """Exact admissibility verdict by scanning every candidate support.

    For each support S of size |M| - 1 the inner minimum of g is attained at
    the projection of the fitted mean onto the row space of X_S (the
    covariance weighting cancels in the minimizer), so the objective equals
    half the squared norm of the scaled fitted mean minus its projection.
    Projections are evaluated through an SVD row-space basis, never through
    the n x n projector.
    """
    if data.p > cap:
        raise CapExceeded(f"exhaustive search capped at p <= {cap}, got {data.p}")
    n, q = fitted.n_obs, data.q
    if _size_indicator_zero(fitted, n, q):
        return _degenerate_result("exhaustive")
    if not fitted.full_rank or fitted.sigma_factor is None:
        return _degenerate_result("exhaustive")
    m = fitted.model.size
    if m == 1:
        g = _singleton_objective(data, fitted)
        cert = np.zeros((q, data.p)) if g <= epsilon else None
        return HResult(int(g > epsilon), g, 0, "exhaustive", cert)

    rows = fitted.model.row_indexer
    scaled_mean = solve_triangular(
        fitted.sigma_factor.lower, fitted.b_hat @ data.x[rows], lower=True
    )
    total = float(np.einsum("ij,ij->", scaled_mean, scaled_mean))
    best = float("inf")
    best_support: tuple[int, ...] | None = None
    count = 0
    for support in itertools.combinations(range(data.p), m - 1):
        count += 1
        xs = data.x[list(support)]
        _, sv, vt = np.linalg.svd(xs, full_matrices=False)
        basis = vt[sv > max(sv[0], 1e-300) * 1e-12] if sv.size else vt[:0]
        proj = scaled_mean @ basis.T
        obj = 0.5 * max(total - float(np.einsum("ij,ij->", proj, proj)), 0.0)
        if obj < best:
            best = obj
            best_support = support
    h = int(best > epsilon)
    certificate = None
    if h == 0 and best_support is not None:
        xs = data.x[list(best_support)]
        coeff, *_ = np.linalg.lstsq(xs.T, (fitted.b_hat @ data.x[rows]).T, rcond=None)
        certificate = np.zeros((q, data.p))
        certificate[:, list(best_support)] = coeff.T
    return HResult(h, best, count, "exhaustive", certificate)
