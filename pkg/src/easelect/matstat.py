"""Dense linear-algebra and matrix-variate sampling kernels.

Conventions, fixed repo-wide: matrices are C-ordered ``float64`` ndarrays;
data matrices store observations as columns (responses ``q x n``, predictors
``p x n``).  Symmetric positive-definite matrices travel as :class:`SpdFactor`
(lower Cholesky factor plus cached log-determinant) so that determinants and
quadratic forms never require an explicit inverse or matrix square root.

All samplers draw from a :class:`RngStream` (pure: the same stream always
yields the same output) or from a live ``numpy.random.Generator`` when the
caller manages stream state itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from .errors import DegreesOfFreedomError, DomainError, NotPositiveDefinite

# Relative tolerance for the symmetry precondition of `cholesky`.
SYMMETRY_RTOL = 1e-10

# Children of stream s occupy [ (s+1)*_CHILD_SPAN, (s+2)*_CHILD_SPAN ), so
# distinct (parent, k) pairs never alias as long as k < _CHILD_SPAN and
# top-level ids stay below _CHILD_SPAN.
_CHILD_SPAN = 1_000_003


@dataclass(frozen=True)
class RngStream:
    """Seedable, splittable source of randomness.

    Identical ``(seed, stream)`` pairs yield bit-identical draw sequences;
    distinct stream ids give statistically independent streams for the same
    seed.  Use :meth:`child` to derive non-colliding sub-streams for
    parallel work (folds, grid cells, replications).
    """

    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        if self.stream < 0:
            raise ValueError("stream id must be nonnegative")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        entropy = self.seed & 0xFFFFFFFFFFFFFFFF
        return np.random.default_rng(
            np.random.SeedSequence(entropy=entropy, spawn_key=(self.stream,))
        )

    def child(self, k: int) -> "RngStream":
        """Derive the k-th sub-stream of this stream."""
        if not 0 <= k < _CHILD_SPAN:
            raise ValueError(f"child index out of range: {k}")
        return RngStream(self.seed, (self.stream + 1) * _CHILD_SPAN + k)


def _as_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of a symmetric positive-definite matrix."""

    dim: int
    lower: np.ndarray
    log_det: float

    @classmethod
    def from_lower(cls, lower: np.ndarray) -> "SpdFactor":
        d = np.diag(lower)
        if np.any(d <= 0):
            raise NotPositiveDefinite("factor diagonal must be strictly positive")
        return cls(dim=lower.shape[0], lower=lower, log_det=2.0 * float(np.sum(np.log(d))))

    def matrix(self) -> np.ndarray:
        """Reconstruct the factored matrix L @ L.T."""
        return self.lower @ self.lower.T

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (L L^T) x = b."""
        return cho_solve((self.lower, True), b, check_finite=False)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """Solve L x = b, i.e. apply the inverse square root from the left."""
        return solve_triangular(self.lower, b, lower=True, check_finite=False)

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the factored matrix."""
        return float(np.linalg.svd(self.lower, compute_uv=False)[-1] ** 2)


def cholesky(s: np.ndarray) -> SpdFactor:
    """Factor a symmetric positive-definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is nonpositive.  Callers interpret this as a
        rank-deficient residual matrix and mark the model inadmissible.
    ValueError
        If the input is not square or not symmetric within
        ``SYMMETRY_RTOL * max|entry|``.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    scale = float(np.max(np.abs(s))) if s.size else 0.0
    if float(np.max(np.abs(s - s.T), initial=0.0)) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise ValueError("matrix is not symmetric within tolerance")
    try:
        lower = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return SpdFactor.from_lower(lower)


def log_multivariate_gamma(q: int, a: float) -> float:
    """log of the multivariate gamma function of order q at a.

    Equals ``q(q-1)/4 * log(pi) + sum_{i=1..q} log Gamma(a - (i-1)/2)``;
    valid for ``a > (q-1)/2``.
    """
    if q < 1:
        raise DomainError(f"order must be >= 1, got {q}")
    if a <= (q - 1) / 2.0:
        raise DomainError(f"argument {a} not above (q-1)/2 = {(q - 1) / 2.0}")
    offsets = np.arange(q) / 2.0
    return float(q * (q - 1) / 4.0 * math.log(math.pi) + np.sum(gammaln(a - offsets)))


def sample_matrix_normal(
    rng: RngStream | np.random.Generator,
    mean: np.ndarray,
    row_cov: SpdFactor,
    col_cov: SpdFactor,
) -> np.ndarray:
    """Draw from a matrix normal with the given mean and row/column covariances.

    Returns ``mean + L_U Z L_V^T`` with ``Z`` i.i.d. standard normal.
    """
    mean = np.asarray(mean, dtype=np.float64)
    m, r = mean.shape
    if row_cov.dim != m or col_cov.dim != r:
        raise ValueError(
            f"covariance dims ({row_cov.dim}, {col_cov.dim}) do not match mean shape {mean.shape}"
        )
    gen = _as_generator(rng)
    z = gen.standard_normal((m, r))
    return mean + row_cov.lower @ z @ col_cov.lower.T


def sample_wishart(
    rng: RngStream | np.random.Generator, dof: int, scale: SpdFactor
) -> np.ndarray:
    """Draw a Wishart matrix via the Bartlett decomposition.

    The output is symmetric positive definite by construction; its
    expectation is ``dof * scale``.
    """
    q = scale.dim
    if dof < q:
        raise DomainError(f"degrees of freedom {dof} below dimension {q}")
    gen = _as_generator(rng)
    t = _bartlett_lower(gen, dof, q)
    a = scale.lower @ t
    return a @ a.T


def _bartlett_lower(gen: np.random.Generator, dof: float, q: int) -> np.ndarray:
    """Lower-triangular Bartlett factor T with T T^T ~ Wishart_q(dof, I)."""
    t = np.zeros((q, q))
    t[np.diag_indices(q)] = np.sqrt(gen.chisquare(dof - np.arange(q)))
    if q > 1:
        idx = np.tril_indices(q, k=-1)
        t[idx] = gen.standard_normal(len(idx[0]))
    return t


def sample_matrix_t(
    rng: RngStream | np.random.Generator,
    fitted,
    x_gram: SpdFactor | None = None,
) -> np.ndarray:
    """Draw a coefficient matrix from its fiducial matrix-t law.

    Given a full-rank fit with ``m`` active predictors on ``n`` observations
    of a ``q``-variate response, the draw follows a matrix-t with
    ``n - m - q + 1`` degrees of freedom, located at the least-squares
    estimate, with row scale the residual cross-product matrix and column
    scale the inverse predictor Gram matrix.  Sampling uses the constructive
    Wishart/normal representation: ``B = Bhat + L_S W^{-T/2} Z L_G^{-1}``
    with ``W ~ Wishart_q(n - m, I)``.
    """
    if not fitted.full_rank or fitted.sigma_factor is None:
        raise DomainError("matrix-t draw requires a full-rank fit with p.d. residual matrix")
    gram = x_gram if x_gram is not None else fitted.gram_factor
    b_hat = fitted.b_hat
    q, m = b_hat.shape
    n = fitted.n_obs
    dof = n - m - q + 1
    if dof <= 0:
        raise DegreesOfFreedomError(f"need n - |M| - q + 1 > 0, got {dof}")
    gen = _as_generator(rng)
    # Bartlett factor is already the Cholesky factor of W ~ Wishart_q(n-m, I).
    t = _bartlett_lower(gen, n - m, q)
    z = gen.standard_normal((q, m))
    left = solve_triangular(t, z, lower=True, trans="T")
    right = solve_triangular(gram.lower, left.T, lower=True, trans="T").T
    return b_hat + fitted.sigma_factor.lower @ right
