"""Sampling plans over many-to-many bitext language pairs."""

__version__ = "0.1.0"

from .corpus import (
    CorpusStats,
    JointDistribution,
    LanguageIndex,
    filter_min_pairs,
    marginals,
    parse_pair_counts,
    symmetrize,
    to_joint,
)
from .errors import (
    ConvergenceError,
    InfeasibleError,
    InputError,
    NumericalError,
    PlannerError,
    VerificationError,
)
from .transport import (
    KernelSpec,
    MarginalTarget,
    SinkhornConfig,
    TransportPlan,
    build_kernel,
    entropy,
    kl_divergence,
    sinkhorn,
    solve_m2m,
    solve_proposed,
    solve_temperature,
    temperature_marginal,
)

__all__ = [
    "ConvergenceError",
    "CorpusStats",
    "InfeasibleError",
    "InputError",
    "JointDistribution",
    "KernelSpec",
    "LanguageIndex",
    "MarginalTarget",
    "NumericalError",
    "PlannerError",
    "SinkhornConfig",
    "TransportPlan",
    "VerificationError",
    "build_kernel",
    "entropy",
    "filter_min_pairs",
    "kl_divergence",
    "marginals",
    "parse_pair_counts",
    "sinkhorn",
    "solve_m2m",
    "solve_proposed",
    "solve_temperature",
    "symmetrize",
    "temperature_marginal",
    "to_joint",
]
