"""Metropolis-Hastings sampling of the fiducial model distribution.

One chain step proposes an add, remove, or swap of a predictor (uniformly
among the move types feasible at the current model size), evaluates the
candidate's log mass, and accepts with the Metropolis-Hastings probability
including the exact proposal-ratio correction for weighted adds.

Per-model work (least-squares fit, admissibility objective, mass) is
memoized in a :class:`ModelEvaluator`.  The admissibility memo stores the
best known upper bound on the minimized objective together with a flag for
whether the PGD trajectory ran to convergence; since the trajectory does not
depend on epsilon, one converged run answers the indicator for every
epsilon, which is what makes grid tuning affordable.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .admissibility import (
    EXHAUSTIVE_CAP,
    HConfig,
    drop_one_objectives,
    h_exhaustive,
    h_pgd,
)
from .errors import InitializationFailed
from .matstat import RngStream
from .model_core import (
    Dataset,
    FittedModel,
    ModelIndexSet,
    fit_model,
    log_gf_mass,
    normalize_log_masses,
)

DEFAULT_CACHE_CAP = 1_000_000


class _LruCache:
    """Minimal LRU map used for the per-model memos."""

    def __init__(self, cap: int):
        self.cap = cap
        self._data: OrderedDict = OrderedDict()

    def get(self, key):
        try:
            self._data.move_to_end(key)
            return self._data[key]
        except KeyError:
            return None

    def put(self, key, value) -> None:
        self._data[key] = value
        self._data.move_to_end(key)
        if len(self._data) > self.cap:
            self._data.popitem(last=False)

    def __len__(self) -> int:
        return len(self._data)


@dataclass(frozen=True)
class ProposalWeights:
    """Nonnegative per-predictor weights steering add/swap proposals."""

    values: np.ndarray
    kind: str = "custom"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v < 0) or v.sum() <= 0:
            raise ValueError("weights must be finite, nonnegative, with positive sum")
        # Strictly positive weights keep every model reachable.
        v = np.maximum(v, v.max() * 1e-12)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, p: int) -> "ProposalWeights":
        return cls(np.ones(p), kind="uniform")

    @classmethod
    def correlation(cls, data: Dataset) -> "ProposalWeights":
        """Marginal association scores: column norms of ``Y X^T``."""
        scores = np.linalg.norm(data.yxt, axis=0)
        if scores.max() <= 0:
            return cls.uniform(data.p)
        return cls(scores / scores.max(), kind="corr")


@dataclass(frozen=True)
class ChainConfig:
    """Settings for one sampling run."""

    epsilon: float
    steps: int = 5000
    burnin: int = 2000
    rng: RngStream = RngStream(0)
    cap: int | None = None
    weights: ProposalWeights | None = None
    initial_model: ModelIndexSet | None = None
    h_method: str = "pgd"
    exhaustive_cap: int = EXHAUSTIVE_CAP
    pgd_rel_tol: float = 1e-7
    pgd_max_iterations: int = 5000
    pgd_early_stop: bool = True
    cache_cap: int = DEFAULT_CACHE_CAP

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 <= self.burnin < self.steps:
            raise ValueError("need 0 <= burnin < steps")
        if self.h_method not in ("pgd", "exhaustive"):
            raise ValueError(f"unknown h method: {self.h_method}")

    def echo(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "steps": self.steps,
            "burnin": self.burnin,
            "seed": self.rng.seed,
            "stream": self.rng.stream,
            "cap": self.cap,
            "weights": self.weights.kind if self.weights is not None else "corr",
            "initial_model": list(self.initial_model) if self.initial_model else None,
            "h_method": self.h_method,
        }


class ModelEvaluator:
    """Memoized per-model fits, admissibility bounds, and log masses."""

    def __init__(
        self,
        data: Dataset,
        *,
        h_method: str = "pgd",
        exhaustive_cap: int = EXHAUSTIVE_CAP,
        pgd_rel_tol: float = 1e-7,
        pgd_max_iterations: int = 5000,
        pgd_early_stop: bool = True,
        cache_cap: int = DEFAULT_CACHE_CAP,
    ):
        self.data = data
        self.h_method = h_method
        self.exhaustive_cap = exhaustive_cap
        self.pgd_rel_tol = pgd_rel_tol
        self.pgd_max_iterations = pgd_max_iterations
        self.pgd_early_stop = pgd_early_stop
        self._fits = _LruCache(cache_cap)
        self._bounds = _LruCache(cache_cap)  # key -> (g_bound, conclusive)
        self._base_mass = _LruCache(cache_cap)  # mass without the h factor
        self._forward_path: list[int] = []  # greedy screening path, 1-based

    @classmethod
    def from_config(cls, data: Dataset, cfg: ChainConfig) -> "ModelEvaluator":
        return cls(
            data,
            h_method=cfg.h_method,
            exhaustive_cap=cfg.exhaustive_cap,
            pgd_rel_tol=cfg.pgd_rel_tol,
            pgd_max_iterations=cfg.pgd_max_iterations,
            pgd_early_stop=cfg.pgd_early_stop,
            cache_cap=cfg.cache_cap,
        )

    def fitted(self, model: ModelIndexSet) -> FittedModel:
        key = model.indices
        hit = self._fits.get(key)
        if hit is None:
            hit = fit_model(self.data, model)
            self._fits.put(key, hit)
        return hit

    def h(self, model: ModelIndexSet, epsilon: float) -> int:
        """Admissibility indicator, reusing objective bounds across epsilons."""
        fitted = self.fitted(model)
        if (
            not fitted.full_rank
            or fitted.sigma_factor is None
            or model.size >= fitted.n_obs - self.data.q
        ):
            return 0
        key = model.indices
        entry = self._bounds.get(key)
        if entry is not None:
            g_bound, conclusive = entry
            if g_bound <= epsilon:
                return 0
            if conclusive:
                return int(g_bound > epsilon)
        if self.h_method == "exhaustive":
            res = h_exhaustive(self.data, fitted, epsilon, cap=self.exhaustive_cap)
            self._bounds.put(key, (res.objective, True))
        else:
            cfg = HConfig(
                epsilon=epsilon,
                rel_tol=self.pgd_rel_tol,
                max_iterations=self.pgd_max_iterations,
                early_stop=self.pgd_early_stop,
            )
            res = h_pgd(self.data, fitted, cfg)
            # h = 1 means the run ended by convergence or the iteration cap,
            # so the bound answers every future epsilon query.
            self._bounds.put(key, (res.objective, res.h == 1 or not cfg.early_stop))
        return res.h

    def log_mass(self, model: ModelIndexSet, epsilon: float) -> float:
        fitted = self.fitted(model)
        n, q = fitted.n_obs, self.data.q
        key = model.indices
        base = self._base_mass.get(key)
        if base is None:
            base = log_gf_mass(fitted, 1, n, q, epsilon).log_mass
            self._base_mass.put(key, base)
        if not math.isfinite(base):
            return float("-inf")
        if self.h(model, epsilon) == 0:
            return float("-inf")
        return base

    def forward_model(self, k: int) -> ModelIndexSet | None:
        """The size-k prefix of a greedy forward-selection path.

        Each step adds the predictor with the largest residual cross-moment
        column norm, so the path collects complementary (non-redundant)
        predictors.  Returns None when the path cannot be extended to k
        (rank-deficient fit or k out of range).  The path depends only on
        the data, so it is built once and shared by every epsilon.
        """
        if k < 1 or k > min(self.data.p, self.data.n - self.data.q - 1):
            return None
        path = self._forward_path
        while len(path) < k:
            if not path:
                scores = np.einsum("ij,ij->j", self.data.yxt, self.data.yxt)
            else:
                current = ModelIndexSet.of(path)
                fitted = self.fitted(current)
                if not fitted.full_rank:
                    return None
                resid_xt = self.data.yxt - fitted.b_hat @ self.data.gram[current.row_indexer]
                scores = np.einsum("ij,ij->j", resid_xt, resid_xt)
                scores[current.row_indexer] = -1.0
            path.append(int(np.argmax(scores)) + 1)
        return ModelIndexSet.of(sorted(path[:k]))

    def screening_model(self, epsilon: float, cap: int) -> ModelIndexSet | None:
        """Forward/backward screening start for the sampler.

        Grows the forward path while the size-penalized fit improves
        (n log det S + q |M| log n decreasing), then backward-eliminates
        predictors whose exact drop-one objective falls below epsilon
        (redundant at that level), re-checking the full admissibility
        indicator on each shrink.  Returns the first model with positive
        mass, or None.  Growth stops well before |M| approaches n - q,
        where the mass formula and the indicator both degenerate.
        """
        n, q = self.data.n, self.data.q
        limit = min(cap, self.data.p, n - q - 1)
        penalty = q * math.log(n)
        k, prev_ic = 1, None
        model = None
        while k <= limit:
            candidate = self.forward_model(k)
            if candidate is None:
                break
            fitted = self.fitted(candidate)
            if fitted.sigma_factor is None:
                model = candidate  # perfect fit; backward phase prunes
                break
            ic = n * fitted.log_det_sigma + k * penalty
            if prev_ic is not None and ic >= prev_ic:
                break
            model, prev_ic = candidate, ic
            k += 1
        while model is not None and model.size >= 1:
            if math.isfinite(self.log_mass(model, epsilon)):
                return model
            if model.size == 1:
                return None
            fitted = self.fitted(model)
            if fitted.sigma_factor is None:
                model = ModelIndexSet.of(model.indices[:-1])
                continue
            drops = drop_one_objectives(fitted)
            model = model.with_removed(model.indices[int(np.argmin(drops))])
        return None


_MOVES = ("add", "remove", "swap")


def _feasible_moves(size: int, n_absent: int, cap: int) -> tuple[str, ...]:
    moves = []
    if size < cap and n_absent > 0:
        moves.append("add")
    if size > 1:
        moves.append("remove")
    if n_absent > 0:
        moves.append("swap")
    return tuple(moves)


def _weighted_pick(rng: np.random.Generator, weights: np.ndarray, total: float) -> int:
    """Index drawn with probability proportional to ``weights``."""
    cum = np.cumsum(weights)
    return int(np.searchsorted(cum, rng.random() * total, side="right"))


def propose(
    rng: np.random.Generator,
    current: ModelIndexSet,
    weights: ProposalWeights,
    p: int,
    cap: int,
) -> tuple[ModelIndexSet, float]:
    """Draw a candidate model and return it with the log Hastings correction.

    The move type is uniform over the feasible types at the current size
    (equivalent to drawing add/remove/swap at probability 1/3 each and
    redrawing uniformly among feasible types when the draw is infeasible).
    Adds pick an absent predictor with probability proportional to its
    weight; removes pick an active predictor uniformly; swaps do one of
    each.  The returned correction is log q(M | M~) - log q(M~ | M).
    """
    w = weights.values
    mask = np.ones(p, dtype=bool)
    mask[current.row_indexer] = False
    absent = np.flatnonzero(mask)
    moves = _feasible_moves(current.size, absent.size, cap)
    if not moves:
        raise InitializationFailed("no feasible move from the current model")
    move = moves[int(rng.integers(len(moves)))]
    w_absent = w[absent]
    total_absent = float(w_absent.sum())
    log_nf = math.log(len(moves))

    if move == "add":
        pick = _weighted_pick(rng, w_absent, total_absent)
        j = int(absent[pick]) + 1
        candidate = current.with_added(j)
        rev_moves = _feasible_moves(candidate.size, absent.size - 1, cap)
        log_fwd = -log_nf + math.log(w[j - 1]) - math.log(total_absent)
        log_rev = -math.log(len(rev_moves)) - math.log(candidate.size)
    elif move == "remove":
        j = current.indices[int(rng.integers(current.size))]
        candidate = current.with_removed(j)
        rev_moves = _feasible_moves(candidate.size, absent.size + 1, cap)
        log_fwd = -log_nf - math.log(current.size)
        log_rev = (
            -math.log(len(rev_moves))
            + math.log(w[j - 1])
            - math.log(total_absent + w[j - 1])
        )
    else:  # swap
        j = current.indices[int(rng.integers(current.size))]
        pick = _weighted_pick(rng, w_absent, total_absent)
        k = int(absent[pick]) + 1
        candidate = current.with_removed(j).with_added(k)
        rev_moves = _feasible_moves(candidate.size, absent.size, cap)
        rev_total = total_absent + w[j - 1] - w[k - 1]
        log_fwd = (
            -log_nf - math.log(current.size) + math.log(w[k - 1]) - math.log(total_absent)
        )
        log_rev = (
            -math.log(len(rev_moves))
            - math.log(candidate.size)
            + math.log(w[j - 1])
            - math.log(rev_total)
        )
    return candidate, log_rev - log_fwd


@dataclass
class _ChainState:
    model: ModelIndexSet
    log_mass: float


def mh_step(
    rng: np.random.Generator,
    state: _ChainState,
    evaluator: ModelEvaluator,
    cfg: ChainConfig,
    weights: ProposalWeights,
    cap: int,
    mass_cache: dict,
) -> tuple[_ChainState, bool]:
    """One Metropolis-Hastings transition; returns the new state and whether
    the proposal was accepted."""
    candidate, log_corr = propose(rng, state.model, weights, evaluator.data.p, cap)
    key = candidate.indices
    cand_mass = mass_cache.get(key)
    if cand_mass is None:
        cand_mass = evaluator.log_mass(candidate, cfg.epsilon)
        mass_cache[key] = cand_mass
    u = rng.random()  # drawn every step so the stream cadence is fixed
    if not math.isfinite(cand_mass):
        return state, False
    if not math.isfinite(state.log_mass):
        return _ChainState(candidate, cand_mass), True
    log_alpha = (cand_mass - state.log_mass) + log_corr
    if log_alpha >= 0.0 or u < math.exp(log_alpha):
        return _ChainState(candidate, cand_mass), True
    return state, False


@dataclass(frozen=True)
class ChainSummary:
    """Aggregates of one sampling run over the visited model set."""

    p: int
    visits: dict[tuple[int, ...], int]
    log_masses: dict[tuple[int, ...], float]
    probs: dict[tuple[int, ...], float]
    map_model: ModelIndexSet
    inclusion: np.ndarray
    acceptance_rate: float
    config: dict = field(default_factory=dict)

    def ranked_models(self) -> list[tuple[int, ...]]:
        """Visited models ordered by probability, ties by index order."""
        return sorted(self.probs, key=lambda t: (-self.probs[t], t))

    def visit_frequencies(self) -> dict[tuple[int, ...], float]:
        """The alternative normalization: share of post-burn-in visits."""
        total = sum(self.visits.values())
        return {t: c / total for t, c in self.visits.items()}

    def to_dict(self) -> dict:
        freq = self.visit_frequencies()
        return {
            "models": [
                {
                    "indices": list(t),
                    "log_mass": self.log_masses[t],
                    "prob": self.probs[t],
                    "visits": self.visits[t],
                    "visit_share": freq[t],
                }
                for t in self.ranked_models()
            ],
            "map_model": list(self.map_model),
            "inclusion": {str(j + 1): float(self.inclusion[j]) for j in range(self.p)},
            "acceptance_rate": self.acceptance_rate,
            "config": self.config,
        }


def marginal_inclusion(summary: ChainSummary) -> np.ndarray:
    """Mass-weighted probability that each predictor appears in the model."""
    if not summary.probs:
        raise ValueError("summary has no visited models")
    return _inclusion_from_probs(summary.probs, summary.p)


def _inclusion_from_probs(probs: dict[tuple[int, ...], float], p: int) -> np.ndarray:
    incl = np.zeros(p)
    for t, pr in probs.items():
        for j in t:
            incl[j - 1] += pr
    return np.clip(incl, 0.0, 1.0)


def _default_cap(data: Dataset) -> int:
    return min(data.p, data.n - data.q - 1)


def exact_model_distribution(
    data: Dataset,
    epsilon: float,
    evaluator: ModelEvaluator | None = None,
    max_size: int | None = None,
) -> dict[tuple[int, ...], float]:
    """Exact normalized mass of every nonempty model up to ``max_size``.

    Brute-force enumeration; feasible only for small p.  Uses the exact
    subset-scan indicator unless the supplied evaluator says otherwise.
    """
    if evaluator is None:
        evaluator = ModelEvaluator(data, h_method="exhaustive")
    cap = max_size if max_size is not None else _default_cap(data)
    logs = {}
    for m in range(1, cap + 1):
        for combo in itertools.combinations(range(1, data.p + 1), m):
            logs[combo] = evaluator.log_mass(ModelIndexSet.of(combo), epsilon)
    keys = sorted(logs)
    probs = normalize_log_masses(np.array([logs[k] for k in keys]))
    return {k: float(pr) for k, pr in zip(keys, probs)}


def _initial_model(
    data: Dataset, cfg: ChainConfig, evaluator: ModelEvaluator, weights: ProposalWeights, cap: int
) -> tuple[ModelIndexSet, float]:
    if cfg.initial_model is not None:
        mass = evaluator.log_mass(cfg.initial_model, cfg.epsilon)
        if math.isfinite(mass):
            return cfg.initial_model, mass
    # Forward/backward screening start.  Single-predictor moves cannot cross
    # regions of inadmissible models, so the start must sit near the mode:
    # small top-weight sets can be admissible yet unreachable islands, and
    # in p >> n regimes they are inadmissible in bulk.
    model = evaluator.screening_model(cfg.epsilon, cap)
    if model is not None:
        return model, evaluator.log_mass(model, cfg.epsilon)
    # Fallback: top-weighted sets, shrinking until admissible.
    order = np.argsort(-weights.values, kind="stable")
    for k in range(min(5, cap), 0, -1):
        model = ModelIndexSet.of(int(j) + 1 for j in order[:k])
        mass = evaluator.log_mass(model, cfg.epsilon)
        if math.isfinite(mass):
            return model, mass
    raise InitializationFailed(
        f"no admissible starting model found at epsilon={cfg.epsilon}"
    )


def run_chain(
    data: Dataset, cfg: ChainConfig, evaluator: ModelEvaluator | None = None
) -> ChainSummary:
    """Run one chain and summarize the visited models.

    Deterministic given ``cfg.rng``.  Raises :class:`InitializationFailed`
    when no admissible starting model exists at the configured epsilon.
    """
    if data.p < 2:
        raise ValueError("sampling requires at least two predictors")
    if evaluator is None:
        evaluator = ModelEvaluator.from_config(data, cfg)
    cap = cfg.cap if cfg.cap is not None else _default_cap(data)
    if not 1 <= cap < data.n - data.q:
        raise ValueError(f"cap must lie in [1, n - q), got {cap}")
    weights = cfg.weights if cfg.weights is not None else ProposalWeights.correlation(data)
    if weights.values.shape[0] != data.p:
        raise ValueError("weights length must equal the predictor count")

    model, mass = _initial_model(data, cfg, evaluator, weights, cap)
    state = _ChainState(model, mass)
    rng = cfg.rng.generator()
    mass_cache: dict = {state.model.indices: state.log_mass}
    visits: Counter = Counter()
    accepted = 0
    for step in range(cfg.steps):
        state, ok = mh_step(rng, state, evaluator, cfg, weights, cap, mass_cache)
        accepted += ok
        if step >= cfg.burnin:
            visits[state.model.indices] += 1

    visited = sorted(visits)
    log_masses = {t: mass_cache[t] for t in visited}
    probs_arr = normalize_log_masses(np.array([log_masses[t] for t in visited]))
    probs = {t: float(pr) for t, pr in zip(visited, probs_arr)}
    map_key = min(visited, key=lambda t: (-log_masses[t], t))
    return ChainSummary(
        p=data.p,
        visits=dict(visits),
        log_masses=log_masses,
        probs=probs,
        map_model=ModelIndexSet.of(map_key),
        inclusion=_inclusion_from_probs(probs, data.p),
        acceptance_rate=accepted / cfg.steps,
        config=cfg.echo(),
    )
