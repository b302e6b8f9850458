"""Integrative balancing-weight meta-analysis of observational studies.

Two-stage pipeline: stage 1 estimates multiple propensity scores and
computes balancing weights (IC, IGO, or the ESS-maximizing FLEXOR
pseudo-population); stage 2 produces weighted estimates of counterfactual
group outcome features with bootstrap uncertainty. A simulation module
generates synthetic multi-study datasets with known ground truth.
"""

from .bootstrap import (
    BootstrapResult,
    CausalResult,
    causal_estimate,
    percentile_ci,
    resample,
)
from .dataset import (
    CsvSchema,
    Dataset,
    GroupPrevalence,
    cell_counts,
    load_dataset,
    write_dataset,
)
from .estimators import (
    MomentsArray,
    OtherFeatures,
    estimate_features,
    sd_ratio,
    weighted_group_cdf,
    weighted_group_mean,
    weighted_group_median,
    weighted_group_sd,
    weighted_group_transform,
)
from .flexor import (
    FlexorSolution,
    estimate_flexor,
    flexor_2step,
    optimized_ess,
    sample_gamma_start,
)
from .mps import (
    MpsMatrix,
    MpsModel,
    category_to_cell,
    cell_to_category,
    fit_mps,
    nll_and_gradient,
    predict_mps,
)
from .simulate import (
    SimConfig,
    SimTruth,
    default_base_covariates,
    gen_dataset,
    kmeans,
    run_study,
    true_wate,
)
from .weights import (
    METHODS,
    PseudoPopSpec,
    WeightsResult,
    balancing_weights,
    normalize,
    percent_ess,
    sample_ess,
    tilting,
    unnormalized_weights,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult",
    "CausalResult",
    "CsvSchema",
    "Dataset",
    "FlexorSolution",
    "GroupPrevalence",
    "METHODS",
    "MomentsArray",
    "MpsMatrix",
    "MpsModel",
    "OtherFeatures",
    "PseudoPopSpec",
    "SimConfig",
    "SimTruth",
    "WeightsResult",
    "balancing_weights",
    "category_to_cell",
    "causal_estimate",
    "cell_counts",
    "cell_to_category",
    "default_base_covariates",
    "estimate_features",
    "estimate_flexor",
    "fit_mps",
    "flexor_2step",
    "gen_dataset",
    "kmeans",
    "load_dataset",
    "nll_and_gradient",
    "normalize",
    "optimized_ess",
    "percent_ess",
    "percentile_ci",
    "predict_mps",
    "resample",
    "run_study",
    "sample_ess",
    "sample_gamma_start",
    "sd_ratio",
    "tilting",
    "true_wate",
    "unnormalized_weights",
    "weighted_group_cdf",
    "weighted_group_mean",
    "weighted_group_median",
    "weighted_group_sd",
    "weighted_group_transform",
    "write_dataset",
]
