"""Datasets, candidate models, per-model least squares, and fiducial mass.

The unnormalized mass of a candidate model combines three ingredients: a
multivariate-gamma volume term, a power of pi in the active-set size, and
the determinant of the residual cross-product matrix raised to
``-(n - |M| - q)/2``, all multiplied by the admissibility indicator.  It is
carried in log space throughout (``-inf`` encodes zero mass).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from . import matstat
from .errors import AllInadmissible, NotPositiveDefinite
from .matstat import SpdFactor

# A Cholesky pivot at or below this fraction of the mean diagonal marks the
# predictor Gram matrix rank-deficient.
RANK_PIVOT_RTOL = 1e-10


class Dataset:
    """A multivariate regression dataset with columns as observations.

    Parameters
    ----------
    y : ndarray, shape (q, n)
        Response matrix.
    x : ndarray, shape (p, n)
        Predictor matrix.
    centered : bool
        Marks data that has been variable-wise mean-centered.

    The object caches the predictor Gram matrix ``X X^T``, the cross moment
    ``Y X^T``, and ``Y Y^T`` because every candidate-model fit is a cheap
    slice of these.  Treat instances as immutable.
    """

    def __init__(self, y: np.ndarray, x: np.ndarray, centered: bool = False):
        y = np.ascontiguousarray(y, dtype=np.float64)
        x = np.ascontiguousarray(x, dtype=np.float64)
        if y.ndim != 2 or x.ndim != 2:
            raise ValueError("y and x must be 2-d arrays")
        if y.shape[1] != x.shape[1]:
            raise ValueError(
                f"observation counts differ: y has {y.shape[1]}, x has {x.shape[1]}"
            )
        if min(y.shape) < 1 or min(x.shape) < 1:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("dataset entries must be finite")
        self.y = y
        self.x = x
        self.centered = centered

    @property
    def q(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        """Predictor Gram matrix ``X X^T`` (p x p)."""
        return self.x @ self.x.T

    @cached_property
    def yxt(self) -> np.ndarray:
        """Cross moment ``Y X^T`` (q x p)."""
        return self.y @ self.x.T

    @cached_property
    def yyt(self) -> np.ndarray:
        """Response moment ``Y Y^T`` (q x q)."""
        return self.y @ self.y.T

    @cached_property
    def gram_lambda_max(self) -> float:
        """Largest eigenvalue of ``X X^T`` by power iteration (1e-8 relative)."""
        return _power_iteration_lambda_max(self.gram)

    def center(self) -> "Dataset":
        """Return a copy with each variable mean-centered across observations."""
        return Dataset(
            self.y - self.y.mean(axis=1, keepdims=True),
            self.x - self.x.mean(axis=1, keepdims=True),
            centered=True,
        )

    def __getstate__(self):
        # Workers rebuild the cached moments; shipping the Gram matrix of a
        # large-p dataset across processes costs more than recomputing it.
        return {"y": self.y, "x": self.x, "centered": self.centered}

    def __setstate__(self, state):
        self.y = state["y"]
        self.x = state["x"]
        self.centered = state["centered"]


def _power_iteration_lambda_max(
    gram: np.ndarray, rtol: float = 1e-8, max_iter: int = 20_000
) -> float:
    p = gram.shape[0]
    # Fixed, slightly tilted start vector so the iteration is deterministic
    # and not orthogonal to the leading eigenvector of structured matrices.
    v = 1.0 + 0.001 * np.arange(p)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        lam_new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


@dataclass(frozen=True)
class ModelIndexSet:
    """A sorted set of active predictor indices, 1-based in ``[1, p]``."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(sorted(int(j) for j in self.indices))
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate indices in model: {self.indices}")
        if idx and idx[0] < 1:
            raise ValueError(f"indices must be >= 1, got {idx[0]}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, indices: Iterable[int]) -> "ModelIndexSet":
        return cls(tuple(indices))

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def row_indexer(self) -> np.ndarray:
        """0-based ndarray for slicing predictor rows."""
        return np.asarray(self.indices, dtype=np.intp) - 1

    def contains(self, j: int) -> bool:
        return j in set(self.indices)

    def with_added(self, j: int) -> "ModelIndexSet":
        return ModelIndexSet(self.indices + (j,))

    def with_removed(self, j: int) -> "ModelIndexSet":
        return ModelIndexSet(tuple(k for k in self.indices if k != j))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)


@dataclass(frozen=True)
class FittedModel:
    """Least-squares artifacts for one candidate model.

    ``full_rank`` is False when the predictor Gram slice fails its Cholesky
    pivot test; the coefficient and factor fields are then ``None``.
    ``log_det_sigma`` is ``-inf`` when the residual cross-product matrix is
    singular (e.g. a perfect fit).
    """

    model: ModelIndexSet
    n_obs: int
    n_predictors: int
    b_hat: np.ndarray | None
    sigma_factor: SpdFactor | None
    gram_factor: SpdFactor | None
    log_det_sigma: float
    full_rank: bool


@dataclass(frozen=True)
class GfWeight:
    """Log unnormalized fiducial mass of one model at a given epsilon."""

    log_mass: float
    admissible: bool
    epsilon: float = float("nan")

    def __post_init__(self) -> None:
        if not self.admissible and self.log_mass != float("-inf"):
            raise ValueError("inadmissible weight must carry -inf log mass")


def fit_model(data: Dataset, model: ModelIndexSet) -> FittedModel:
    """Least-squares fit of one candidate model.

    Solves the normal equations through a Cholesky factorization of the
    predictor Gram slice and forms the residual cross-product matrix as
    ``Y Y^T - Bhat (X_M Y^T)``, which avoids the n x n projector.  Rank
    deficiency is reported through the flag, never as an exception.
    """
    m = model.size
    if m < 1:
        raise ValueError("model must contain at least one predictor")
    if model.indices[-1] > data.p:
        raise ValueError(
            f"model index {model.indices[-1]} exceeds predictor count {data.p}"
        )
    rows = model.row_indexer
    gram_mm = data.gram[np.ix_(rows, rows)]
    try:
        lower = np.linalg.cholesky(gram_mm)
    except np.linalg.LinAlgError:
        return FittedModel(model, data.n, data.p, None, None, None, float("-inf"), False)
    pivots = np.diag(lower) ** 2
    if np.min(pivots) <= RANK_PIVOT_RTOL * np.trace(gram_mm) / m:
        return FittedModel(model, data.n, data.p, None, None, None, float("-inf"), False)
    gram_factor = SpdFactor.from_lower(lower)
    yxt_m = data.yxt[:, rows]
    b_hat = cho_solve((lower, True), yxt_m.T, check_finite=False).T
    sigma = data.yyt - b_hat @ yxt_m.T
    sigma = (sigma + sigma.T) / 2.0  # kill round-off asymmetry
    try:
        sigma_factor = matstat.cholesky(sigma)
        log_det = sigma_factor.log_det
    except NotPositiveDefinite:
        sigma_factor = None
        log_det = float("-inf")
    return FittedModel(model, data.n, data.p, b_hat, sigma_factor, gram_factor, log_det, True)


def log_gf_mass(
    fitted: FittedModel, h_value: int, n: int, q: int, epsilon: float = float("nan")
) -> GfWeight:
    """Log unnormalized fiducial mass of a fitted model.

    Zero mass (``-inf``) whenever the admissibility indicator is zero, the
    model is too large (``|M| >= n - q``), the design slice is rank
    deficient, or the residual matrix is singular.
    """
    m = fitted.model.size
    if (
        h_value == 0
        or m >= n - q
        or not fitted.full_rank
        or not math.isfinite(fitted.log_det_sigma)
    ):
        return GfWeight(float("-inf"), False, epsilon)
    mass = (
        matstat.log_multivariate_gamma(q, (n - m) / 2.0)
        + 0.5 * q * m * math.log(math.pi)
        - 0.5 * (n - m - q) * fitted.log_det_sigma
    )
    return GfWeight(mass, True, epsilon)


def normalize_masses(weights: Sequence[GfWeight]) -> np.ndarray:
    """Normalize log masses into probabilities via log-sum-exp."""
    logs = np.array([w.log_mass for w in weights], dtype=np.float64)
    return normalize_log_masses(logs)


def normalize_log_masses(logs: np.ndarray) -> np.ndarray:
    """Log-sum-exp normalization of raw log masses (``-inf`` allowed)."""
    logs = np.asarray(logs, dtype=np.float64)
    if logs.size == 0 or not np.any(np.isfinite(logs)):
        raise AllInadmissible("no model carries positive mass")
    return np.exp(logs - logsumexp(logs))
