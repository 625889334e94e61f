"""Grid selection of the admissibility level epsilon.

Two protocols: an information-criterion route that scores the MAP model of a
moderate chain run at every grid value, and a k-fold cross-validation route
that scores held-out prediction error of the MAP refit and then re-runs a
longer chain at the winner.  Ties go to the smallest epsilon.  Both are
deterministic given the base seed and independent of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InitializationFailed
from .model_core import Dataset
from .sampler import ChainConfig, ChainSummary, ModelEvaluator, run_chain

_DEFAULT_GRID_SPEC = (0.05, 10.0, 24)
_NARROW_GRID_SPEC = (0.01, 0.2, 16)


@dataclass(frozen=True)
class EpsilonGrid:
    """A strictly increasing grid of positive epsilon values."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("grid must be nonempty")
        if vals[0] <= 0 or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid must be strictly increasing and positive")
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, lo: float, hi: float, k: int) -> "EpsilonGrid":
        if k < 1:
            raise ValueError("grid needs at least one point")
        if k == 1:
            return cls((lo,))
        return cls(tuple(np.linspace(lo, hi, k)))

    @classmethod
    def default(cls) -> "EpsilonGrid":
        """24 uniform values on [0.05, 10]."""
        return cls.uniform(*_DEFAULT_GRID_SPEC)

    @classmethod
    def narrow(cls) -> "EpsilonGrid":
        """16 uniform values on [0.01, 0.2], for weak-signal data."""
        return cls.uniform(*_NARROW_GRID_SPEC)

    @classmethod
    def parse(cls, spec: str) -> "EpsilonGrid":
        """Parse a ``lo:hi:k`` grid specification."""
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid spec must be lo:hi:k, got {spec!r}")
        lo, hi, k = float(parts[0]), float(parts[1]), int(parts[2])
        return cls.uniform(lo, hi, k)

    def __len__(self) -> int:
        return len(self.values)


def json_safe(value):
    """Replace non-finite floats with strings so payloads stay valid JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value


@dataclass(frozen=True)
class TuningResult:
    """Chosen epsilon plus the full audited score table."""

    method: str
    chosen_epsilon: float
    table: list[dict]
    final_summary: ChainSummary
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "chosen_epsilon": self.chosen_epsilon,
            "table": json_safe(self.table),
            "final_chain": self.final_summary.to_dict(),
            "config": self.config,
        }


def bic_score(log_det_sigma: float, model_size: int, n: int, q: int) -> float:
    """Gaussian-profile information criterion for a fitted model.

    ``n log det(S/n) + q |M| log n``; covariance parameters are constant
    across models and dropped.
    """
    return n * (log_det_sigma - q * math.log(n)) + q * model_size * math.log(n)


# ---------------------------------------------------------------------------
# Worker plumbing.  Each worker process holds one dataset and one evaluator;
# cells scheduled to the same process share cached per-model work.  Results
# depend only on (data, seed, cell index), never on scheduling.

_WORKER_STATE: dict = {}


def _init_worker(data: Dataset, eval_opts: dict) -> None:
    _WORKER_STATE["data"] = data
    _WORKER_STATE["evaluator"] = ModelEvaluator(data, **eval_opts)


def _eval_opts(base: ChainConfig) -> dict:
    return {
        "h_method": base.h_method,
        "exhaustive_cap": base.exhaustive_cap,
        "pgd_rel_tol": base.pgd_rel_tol,
        "pgd_max_iterations": base.pgd_max_iterations,
        "pgd_early_stop": base.pgd_early_stop,
        "cache_cap": base.cache_cap,
    }


def _bic_cell(data: Dataset, evaluator: ModelEvaluator, base: ChainConfig, idx: int, eps: float):
    cfg = replace(base, epsilon=eps, rng=base.rng.child(idx))
    try:
        summary = run_chain(data, cfg, evaluator)
    except InitializationFailed:
        return float("inf"), None, None
    fitted = evaluator.fitted(summary.map_model)
    score = bic_score(fitted.log_det_sigma, summary.map_model.size, data.n, data.q)
    return score, list(summary.map_model), summary


def _bic_cell_worker(args):
    base, idx, eps = args
    return _bic_cell(
        _WORKER_STATE["data"], _WORKER_STATE["evaluator"], base, idx, eps
    )


def tune_bic(
    data: Dataset, grid: EpsilonGrid, base: ChainConfig, threads: int = 1
) -> TuningResult:
    """Pick epsilon by the information criterion of each grid value's MAP model.

    The winning grid value's chain is reused as the final sample.  Grid
    values where no admissible model exists score ``+inf``; if every value
    fails, :class:`InitializationFailed` is raised.
    """
    cells = list(enumerate(grid.values))
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(data, _eval_opts(base))
        ) as pool:
            outcomes = list(pool.map(_bic_cell_worker, [(base, i, e) for i, e in cells]))
    else:
        evaluator = ModelEvaluator(data, **_eval_opts(base))
        outcomes = [_bic_cell(data, evaluator, base, i, e) for i, e in cells]

    table = []
    best_idx = None
    for (i, eps), (score, map_model, _) in zip(cells, outcomes):
        table.append({"epsilon": eps, "score": score, "map_model": map_model})
        if math.isfinite(score) and (best_idx is None or score < table[best_idx]["score"]):
            best_idx = i
    if best_idx is None:
        raise InitializationFailed("no grid value admits any model")
    return TuningResult(
        method="bic",
        chosen_epsilon=grid.values[best_idx],
        table=table,
        final_summary=outcomes[best_idx][2],
        config={"grid": list(grid.values), "steps": base.steps, "burnin": base.burnin,
                "seed": base.rng.seed, "stream": base.rng.stream},
    )


def _cv_fold(
    data: Dataset,
    base: ChainConfig,
    grid: EpsilonGrid,
    fold_id: int,
    train_cols: np.ndarray,
    val_cols: np.ndarray,
):
    train = Dataset(data.y[:, train_cols], data.x[:, train_cols], centered=data.centered)
    y_val, x_val = data.y[:, val_cols], data.x[:, val_cols]
    evaluator = ModelEvaluator(train, **_eval_opts(base))
    out = []
    for i, eps in enumerate(grid.values):
        cfg = replace(
            base, epsilon=eps, rng=base.rng.child(1 + fold_id * len(grid) + i)
        )
        try:
            summary = run_chain(train, cfg, evaluator)
        except InitializationFailed:
            out.append((float("inf"), None))
            continue
        fitted = evaluator.fitted(summary.map_model)
        pred = fitted.b_hat @ x_val[summary.map_model.row_indexer]
        mspe = float(np.sum((y_val - pred) ** 2)) / (val_cols.size * data.q)
        out.append((mspe, list(summary.map_model)))
    return out


def _cv_fold_worker(args):
    base, grid, fold_id, train_cols, val_cols = args
    return _cv_fold(_WORKER_STATE["data"], base, grid, fold_id, train_cols, val_cols)


def tune_cv(
    data: Dataset,
    grid: EpsilonGrid,
    base: ChainConfig,
    folds: int = 10,
    final_steps: int = 10_000,
    final_burnin: int = 5_000,
    threads: int = 1,
) -> TuningResult:
    """Pick epsilon by k-fold cross-validated prediction error of the MAP refit.

    Observation columns are split by a seeded permutation.  Each (fold,
    epsilon) cell runs a short chain on the training columns, refits the MAP
    model there, and scores squared prediction error on the held-out
    columns (normalized by held-out count times q; the normalization cancels
    in the argmin).  A longer chain at the winning epsilon on the full data
    is returned as the final sample.
    """
    if not 2 <= folds <= data.n:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={data.n}")
    perm = base.rng.child(0).generator().permutation(data.n)
    val_sets = np.array_split(perm, folds)
    fold_args = []
    for f, val in enumerate(val_sets):
        train = np.setdiff1d(perm, val)
        fold_args.append((f, np.sort(train), np.sort(val)))

    if threads > 1 and folds > 1:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(data, _eval_opts(base))
        ) as pool:
            fold_results = list(
                pool.map(_cv_fold_worker, [(base, grid, f, tr, va) for f, tr, va in fold_args])
            )
    else:
        fold_results = [_cv_fold(data, base, grid, f, tr, va) for f, tr, va in fold_args]

    table = []
    best_idx = None
    for i, eps in enumerate(grid.values):
        cell_scores = [fold_results[f][i][0] for f in range(folds)]
        score = float(np.mean(cell_scores))
        table.append(
            {
                "epsilon": eps,
                "score": score,
                "folds": [
                    {"fold": f, "mspe": fold_results[f][i][0], "map_model": fold_results[f][i][1]}
                    for f in range(folds)
                ],
            }
        )
        if math.isfinite(score) and (best_idx is None or score < table[best_idx]["score"]):
            best_idx = i
    if best_idx is None:
        raise InitializationFailed("no grid value admits any model in any fold")

    chosen = grid.values[best_idx]
    final_cfg = replace(
        base,
        epsilon=chosen,
        steps=final_steps,
        burnin=final_burnin,
        rng=base.rng.child(1 + folds * len(grid)),
    )
    final_summary = run_chain(data, final_cfg)
    return TuningResult(
        method="cv",
        chosen_epsilon=chosen,
        table=table,
        final_summary=final_summary,
        config={
            "grid": list(grid.values),
            "folds": folds,
            "steps": base.steps,
            "burnin": base.burnin,
            "final_steps": final_steps,
            "final_burnin": final_burnin,
            "seed": base.rng.seed,
            "stream": base.rng.stream,
        },
    )
