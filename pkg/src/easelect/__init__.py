"""Epsilon-admissible-subsets model selection for multivariate regression.

A candidate set of predictors earns probability mass only when no smaller
coefficient support can reproduce its fitted mean within a tolerance
epsilon, measured in the residual-covariance-scaled Frobenius norm.  The
package computes the resulting fiducial model probabilities, samples model
space by Metropolis-Hastings, tunes epsilon by BIC or cross-validation, and
ships a synthetic-experiment harness plus a command-line interface.
"""

from .admissibility import HConfig, HResult, h_exhaustive, h_pgd, warm_start
from .errors import (
    AllInadmissible,
    CapExceeded,
    DegreesOfFreedomError,
    DomainError,
    EaselectError,
    InitializationFailed,
    NotPositiveDefinite,
)
from .matstat import (
    RngStream,
    SpdFactor,
    cholesky,
    log_multivariate_gamma,
    sample_matrix_normal,
    sample_matrix_t,
    sample_wishart,
)
from .model_core import (
    Dataset,
    FittedModel,
    GfWeight,
    ModelIndexSet,
    fit_model,
    log_gf_mass,
    normalize_masses,
)
from .sampler import (
    ChainConfig,
    ChainSummary,
    ModelEvaluator,
    ProposalWeights,
    marginal_inclusion,
    mh_step,
    propose,
    run_chain,
)
from .simstudy import (
    PRESETS,
    ExperimentReport,
    MethodSpec,
    MetricsRecord,
    SimulationDesign,
    compute_metrics,
    generate,
    generate_holdout,
    run_experiment,
)
from .tuning import EpsilonGrid, TuningResult, bic_score, tune_bic, tune_cv

__version__ = "0.1.0"

__all__ = [
    "AllInadmissible",
    "CapExceeded",
    "ChainConfig",
    "ChainSummary",
    "Dataset",
    "DegreesOfFreedomError",
    "DomainError",
    "EaselectError",
    "EpsilonGrid",
    "ExperimentReport",
    "FittedModel",
    "GfWeight",
    "HConfig",
    "HResult",
    "InitializationFailed",
    "MethodSpec",
    "MetricsRecord",
    "ModelEvaluator",
    "ModelIndexSet",
    "NotPositiveDefinite",
    "PRESETS",
    "ProposalWeights",
    "RngStream",
    "SimulationDesign",
    "SpdFactor",
    "TuningResult",
    "bic_score",
    "cholesky",
    "compute_metrics",
    "fit_model",
    "generate",
    "generate_holdout",
    "h_exhaustive",
    "h_pgd",
    "log_gf_mass",
    "log_multivariate_gamma",
    "marginal_inclusion",
    "mh_step",
    "normalize_masses",
    "propose",
    "run_chain",
    "run_experiment",
    "sample_matrix_normal",
    "sample_matrix_t",
    "sample_wishart",
    "tune_bic",
    "tune_cv",
    "warm_start",
]
