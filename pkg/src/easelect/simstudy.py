"""Synthetic experiment designs, selection metrics, and the study harness.

Design presets mirror the nine benchmark configurations: three dimension
regimes (n > p, p > n, p >> n) at two sparsity levels, plus three large-q
variants with harder predictor/error covariance structure.  Predictor
columns are multivariate normal with either AR(1) or non-decaying
correlation; true coefficients are drawn so each entry lands in
[-5, -0.5] or [0.5, 5]; responses add matrix-normal noise.

Metric counts are at coefficient-entry level (selecting one predictor
contributes q entries), which makes the misclassification denominator pq
coherent.  Note the false-negative rate uses the FN/(FN + TN) convention:
the denominator is the *negative calls*, not the condition positives, so
values are typically tiny when p is large.  Keep that in mind when
comparing against other software.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import toeplitz

from .matstat import RngStream
from .model_core import Dataset, ModelIndexSet, fit_model
from .sampler import ChainConfig, ChainSummary, ProposalWeights, run_chain
from .tuning import EpsilonGrid, TuningResult, json_safe, tune_bic, tune_cv


@dataclass(frozen=True)
class SimulationDesign:
    """One synthetic experiment configuration."""

    name: str
    n: int
    p: int
    q: int
    m0_size: int
    predictor_cov: str = "ar1"  # "ar1" | "nondecay"
    error_cov: str = "ar1"  # "ar1" | "dense"
    rho: float = 0.5
    sigma2: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n, self.p, self.q, self.m0_size) < 1:
            raise ValueError("all dimensions must be positive")
        if self.m0_size > self.p:
            raise ValueError("true model cannot exceed the predictor count")
        if self.predictor_cov not in ("ar1", "nondecay"):
            raise ValueError(f"unknown predictor covariance: {self.predictor_cov}")
        if self.error_cov not in ("ar1", "dense"):
            raise ValueError(f"unknown error covariance: {self.error_cov}")


PRESETS: dict[str, SimulationDesign] = {
    "ld-sparse": SimulationDesign("ld-sparse", n=60, p=30, q=3, m0_size=5),
    "ld-dense": SimulationDesign("ld-dense", n=80, p=60, q=6, m0_size=40),
    "hd-sparse": SimulationDesign("hd-sparse", n=50, p=200, q=5, m0_size=20),
    "hd-dense": SimulationDesign("hd-dense", n=60, p=100, q=6, m0_size=40),
    "uhd-ultrasparse": SimulationDesign("uhd-ultrasparse", n=100, p=500, q=3, m0_size=10),
    "uhd-sparse": SimulationDesign("uhd-sparse", n=150, p=1000, q=4, m0_size=50),
    "largeq-ar1": SimulationDesign("largeq-ar1", n=150, p=1000, q=60, m0_size=50),
    "largeq-nondecay": SimulationDesign(
        "largeq-nondecay", n=150, p=1000, q=60, m0_size=50, predictor_cov="nondecay"
    ),
    "largeq-dense": SimulationDesign(
        "largeq-dense", n=150, p=1000, q=60, m0_size=50,
        predictor_cov="nondecay", error_cov="dense",
    ),
}


def predictor_covariance(design: SimulationDesign) -> np.ndarray:
    if design.predictor_cov == "ar1":
        return toeplitz(design.rho ** np.arange(design.p))
    return 0.5 * (np.ones((design.p, design.p)) + np.eye(design.p))


def error_covariance(design: SimulationDesign) -> np.ndarray:
    if design.error_cov == "ar1":
        return design.sigma2 * toeplitz(design.rho ** np.arange(design.q))
    return np.ones((design.q, design.q)) + np.eye(design.q)


_CHOL_CACHE: dict[tuple, np.ndarray] = {}


def _cached_chol(kind: str, design: SimulationDesign) -> np.ndarray:
    if kind == "predictor":
        key = ("predictor", design.predictor_cov, design.p, design.rho)
        builder = predictor_covariance
    else:
        key = ("error", design.error_cov, design.q, design.rho, design.sigma2)
        builder = error_covariance
    if key not in _CHOL_CACHE:
        _CHOL_CACHE[key] = np.linalg.cholesky(builder(design))
    return _CHOL_CACHE[key]


def _sample_dataset(
    design: SimulationDesign,
    model: ModelIndexSet,
    b0: np.ndarray,
    gen: np.random.Generator,
) -> Dataset:
    lx = _cached_chol("predictor", design)
    lv = _cached_chol("error", design)
    x = lx @ gen.standard_normal((design.p, design.n))
    y = b0 @ x[model.row_indexer] + lv @ gen.standard_normal((design.q, design.n))
    return Dataset(y, x)


def generate(
    design: SimulationDesign, rng: RngStream | np.random.Generator
) -> tuple[Dataset, ModelIndexSet, np.ndarray, np.ndarray]:
    """Draw one dataset together with its generating truth.

    Returns ``(data, true_model, b0, v0)``: the true model is a uniform
    random subset of the requested size, each coefficient entry is
    ``U + I(U > -0.5)`` for ``U ~ Uniform(-5, 4)``, and responses are the
    true mean plus correlated Gaussian noise.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    chosen = gen.choice(design.p, size=design.m0_size, replace=False)
    model = ModelIndexSet.of(int(j) + 1 for j in sorted(chosen))
    u = gen.uniform(-5.0, 4.0, size=(design.q, design.m0_size))
    b0 = u + (u > -0.5)
    data = _sample_dataset(design, model, b0, gen)
    return data, model, b0, error_covariance(design)


def generate_holdout(
    design: SimulationDesign,
    true_model: ModelIndexSet,
    b0: np.ndarray,
    rng: RngStream | np.random.Generator,
) -> Dataset:
    """A fresh dataset of the same size from an already-drawn truth."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return _sample_dataset(design, true_model, b0, gen)


@dataclass(frozen=True)
class MetricsRecord:
    """Selection and prediction metrics of one replication."""

    mspe: float
    fdr: float
    fnr: float
    mp: float
    pcm: int
    tp: int
    fp: int
    tn: int
    fn: int
    runtime_seconds: float = 0.0
    p_true_model: float | None = None
    fdr_undefined: bool = False

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "mspe": self.mspe,
            "fdr": self.fdr,
            "fnr": self.fnr,
            "mp": self.mp,
            "pcm": self.pcm,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "p_true_model": self.p_true_model,
            "fdr_undefined": self.fdr_undefined,
        }
        if include_timing:
            out["runtime_seconds"] = self.runtime_seconds
        return out


def compute_metrics(
    estimated: ModelIndexSet,
    true_model: ModelIndexSet,
    b_refit: np.ndarray,
    test_data: Dataset,
) -> MetricsRecord:
    """Score an estimated model against the truth on held-out data.

    Counts are entry-level: each selected predictor contributes q entries.
    An empty false/true-positive denominator reports FDR 0 with a flag.
    """
    q, p = test_data.q, test_data.p
    pred = b_refit @ test_data.x[estimated.row_indexer]
    mspe = float(np.sum((test_data.y - pred) ** 2)) / (test_data.n * q)
    est, tru = set(estimated), set(true_model)
    tp = q * len(est & tru)
    fp = q * len(est - tru)
    fn = q * len(tru - est)
    tn = q * (p - len(est | tru))
    fdr_undefined = (fp + tp) == 0
    fdr = 0.0 if fdr_undefined else fp / (fp + tp)
    fnr = 0.0 if (fn + tn) == 0 else fn / (fn + tn)
    return MetricsRecord(
        mspe=mspe,
        fdr=fdr,
        fnr=fnr,
        mp=(fp + fn) / (p * q),
        pcm=int(est == tru),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


@dataclass(frozen=True)
class MethodSpec:
    """How to run the selector inside one replication."""

    tuner: str = "bic"  # "bic" | "cv" | "fixed"
    grid: EpsilonGrid | None = None
    epsilon: float | None = None  # fixed mode
    steps: int | None = None
    burnin: int | None = None
    folds: int = 10
    final_steps: int = 10_000
    final_burnin: int = 5_000
    h_method: str = "pgd"
    weights: str = "corr"  # "corr" | "uniform"

    def __post_init__(self) -> None:
        if self.tuner not in ("bic", "cv", "fixed"):
            raise ValueError(f"unknown tuner: {self.tuner}")
        if self.tuner == "fixed" and self.epsilon is None:
            raise ValueError("fixed mode needs an epsilon")

    def resolved_steps(self) -> tuple[int, int]:
        if self.steps is not None and self.burnin is not None:
            return self.steps, self.burnin
        if self.tuner == "cv":
            return (self.steps or 500, self.burnin if self.burnin is not None else 200)
        return (self.steps or 5000, self.burnin if self.burnin is not None else 2000)

    def echo(self) -> dict:
        steps, burnin = self.resolved_steps()
        return {
            "tuner": self.tuner,
            "grid": list(self.grid.values) if self.grid else None,
            "epsilon": self.epsilon,
            "steps": steps,
            "burnin": burnin,
            "folds": self.folds if self.tuner == "cv" else None,
            "h_method": self.h_method,
            "weights": self.weights,
        }


def select_model(
    data: Dataset, method: MethodSpec, rng: RngStream
) -> tuple[ChainSummary, float]:
    """Run the configured selection protocol; returns the final chain summary
    and the epsilon it was sampled at."""
    steps, burnin = method.resolved_steps()
    weights = (
        ProposalWeights.uniform(data.p)
        if method.weights == "uniform"
        else ProposalWeights.correlation(data)
    )
    base = ChainConfig(
        epsilon=method.epsilon or 1.0,
        steps=steps,
        burnin=burnin,
        rng=rng,
        weights=weights,
        h_method=method.h_method,
    )
    if method.tuner == "fixed":
        summary = run_chain(data, base)
        return summary, method.epsilon
    grid = method.grid or EpsilonGrid.default()
    if method.tuner == "bic":
        result = tune_bic(data, grid, base)
    else:
        result = tune_cv(
            data,
            grid,
            base,
            folds=method.folds,
            final_steps=method.final_steps,
            final_burnin=method.final_burnin,
        )
    return result.final_summary, result.chosen_epsilon


def _replicate(args) -> dict:
    design, method, seed, rep = args
    root = RngStream(seed, rep)
    data, true_model, b0, _ = generate(design, root.child(0))
    test_data = generate_holdout(design, true_model, b0, root.child(1))
    start = time.perf_counter()
    summary, epsilon = select_model(data, method, root.child(2))
    runtime = time.perf_counter() - start
    estimated = summary.map_model
    refit = fit_model(data, estimated)
    record = compute_metrics(estimated, true_model, refit.b_hat, test_data)
    record = replace(
        record,
        runtime_seconds=runtime,
        p_true_model=summary.probs.get(true_model.indices, 0.0),
    )
    return {
        "rep": rep,
        "record": record,
        "selected": list(estimated),
        "true_model": list(true_model),
        "epsilon": epsilon,
    }


@dataclass(frozen=True)
class ExperimentReport:
    """Per-replication records plus customary aggregates."""

    design: SimulationDesign
    method: dict
    replications: int
    results: list[dict]
    failures: list[dict]
    aggregate: dict

    def to_dict(self, include_timing: bool = False) -> dict:
        agg = dict(self.aggregate)
        if not include_timing:
            agg.pop("runtime_median_seconds", None)
        return json_safe(
            {
                "design": {
                    "name": self.design.name,
                    "n": self.design.n,
                    "p": self.design.p,
                    "q": self.design.q,
                    "m0_size": self.design.m0_size,
                    "predictor_cov": self.design.predictor_cov,
                    "error_cov": self.design.error_cov,
                },
                "method": self.method,
                "replications": self.replications,
                "aggregate": agg,
                "results": [
                    {
                        "rep": r["rep"],
                        "selected": r["selected"],
                        "true_model": r["true_model"],
                        "epsilon": r["epsilon"],
                        "metrics": r["record"].to_dict(include_timing=include_timing),
                    }
                    for r in self.results
                ],
                "failures": self.failures,
            }
        )

    def to_table(self) -> str:
        a = self.aggregate
        header = f"{'design':<16}{'MSPE':>8}{'FDR':>8}{'FNR':>8}{'MP':>8}{'P(Mo|Y)':>9}{'PCM':>7}{'time(s)':>9}"
        row = (
            f"{self.design.name:<16}"
            f"{a['mspe_median']:>8.3f}"
            f"{a['fdr_mean']:>8.4f}"
            f"{a['fnr_mean']:>8.4f}"
            f"{a['mp_mean']:>8.4f}"
            f"{a['p_true_mean']:>9.4f}"
            f"{a['pcm_mean']:>7.3f}"
            f"{a['runtime_median_seconds']:>9.2f}"
        )
        return "\n".join([header, row])


def run_experiment(
    design: SimulationDesign,
    replications: int,
    method: MethodSpec,
    seed: int | None = None,
    threads: int = 1,
) -> ExperimentReport:
    """Run seeded replications of one design and aggregate their metrics.

    Replication i derives every random stream from ``(seed, i)``, so any
    single replication is reproducible in isolation and results do not
    depend on the worker count.  Per-replication failures are recorded, not
    fatal.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    base_seed = design.seed if seed is None else seed
    tasks = [(design, method, base_seed, rep) for rep in range(replications)]
    results: list[dict] = []
    failures: list[dict] = []
    if threads > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_replicate_safe, tasks))
    else:
        outcomes = [_replicate_safe(t) for t in tasks]
    for out in outcomes:
        if "error" in out:
            failures.append(out)
        else:
            results.append(out)
    results.sort(key=lambda r: r["rep"])
    records = [r["record"] for r in results]
    aggregate = {
        "mspe_median": float(np.median([m.mspe for m in records])) if records else float("nan"),
        "fdr_mean": float(np.mean([m.fdr for m in records])) if records else float("nan"),
        "fnr_mean": float(np.mean([m.fnr for m in records])) if records else float("nan"),
        "mp_mean": float(np.mean([m.mp for m in records])) if records else float("nan"),
        "pcm_mean": float(np.mean([m.pcm for m in records])) if records else float("nan"),
        "p_true_mean": float(np.mean([m.p_true_model for m in records])) if records else float("nan"),
        "runtime_median_seconds": float(np.median([m.runtime_seconds for m in records]))
        if records
        else float("nan"),
        "completed": len(records),
        "failed": len(failures),
    }
    return ExperimentReport(
        design=design,
        method=method.echo(),
        replications=replications,
        results=results,
        failures=failures,
        aggregate=aggregate,
    )


def _replicate_safe(args) -> dict:
    try:
        return _replicate(args)
    except Exception as exc:  # noqa: BLE001 - recorded, not fatal
        return {"rep": args[3], "error": f"{type(exc).__name__}: {exc}"}
