"""Recalibration of black-box classifiers under explanation perturbations.

The package fits one temperature per perturbation-level bin so that masked
queries, the bread and butter of perturbation-based explainers, receive
calibrated probabilities; it also ships exact Shapley, sampled Shapley, and
surrogate-regression explainers, and exact finite-problem verifiers for the
decomposition of predictive power into bias, information, and calibration
terms.
"""

from .core import (
    Dataset,
    DivergenceUndefinedError,
    InfeasibleBinError,
    ModelTransportError,
    ProtocolError,
    RecalxError,
    SeedSpec,
    SubsetMask,
    UndefinedMetricError,
    argmax_class,
    derive_rng,
    kl_divergence,
    load_dataset_csv,
    log_softmax,
    save_dataset_csv,
    softmax,
    validate_prob_vector,
)
from .perturb import (
    FeatureGroups,
    PerturbationLevelBins,
    PerturbationSpec,
    apply_perturbation,
    apply_perturbation_batch,
    bin_for_perturbed_count,
    bin_of,
    enumerate_subsets,
    feasible_perturbed_counts,
    feature_observed_array,
    load_perturbation_spec,
    perturbation_level,
    sample_subset_in_bin,
    sample_uniform_subset,
    save_perturbation_spec,
)
from .models import (
    ExternalModelClient,
    LevelMiscalibrationWrapper,
    LinearSoftmaxModel,
    MiscalibrationWrapper,
    ModelHandle,
    ModelInfo,
    TableModel,
    handshake,
)
from .calibrate import (
    CalibrationReport,
    CalibrationRow,
    RecalibratedModel,
    TemperatureProfile,
    calibration_curve,
    ce_kl_plugin,
    fit_recalx,
    mean_cross_entropy,
    minimize_temperature,
    recal_predict,
    softmax_with_temperature,
)
from .explain import (
    Attribution,
    SummaryMatrix,
    ValueFunction,
    apply_summary,
    build_summary_matrix,
    lime_explain,
    localization_score,
    shapley_exact,
    shapley_sampled,
    spearman_alignment,
)
from .theory import (
    PROBLEM_KINDS,
    BayesSubsetModel,
    DecompositionResult,
    LocalBoundReport,
    SyntheticProblem,
    calibrated_counterpart,
    decomposition_bias,
    exact_calibration_curve,
    exact_ce_kl,
    exact_mutual_information,
    exact_predictive_power,
    generate_problem,
    max_abs_residual,
    sample_dataset,
    verify_decomposition,
    verify_local_bound,
    write_decomposition_csv,
)

__version__ = "0.1.0"

__all__ = [
    "Attribution",
    "BayesSubsetModel",
    "CalibrationReport",
    "CalibrationRow",
    "Dataset",
    "DecompositionResult",
    "DivergenceUndefinedError",
    "ExternalModelClient",
    "FeatureGroups",
    "InfeasibleBinError",
    "LevelMiscalibrationWrapper",
    "LinearSoftmaxModel",
    "LocalBoundReport",
    "MiscalibrationWrapper",
    "ModelHandle",
    "ModelInfo",
    "ModelTransportError",
    "PROBLEM_KINDS",
    "PerturbationLevelBins",
    "PerturbationSpec",
    "ProtocolError",
    "RecalibratedModel",
    "RecalxError",
    "SeedSpec",
    "SubsetMask",
    "SummaryMatrix",
    "SyntheticProblem",
    "TableModel",
    "TemperatureProfile",
    "UndefinedMetricError",
    "ValueFunction",
    "apply_perturbation",
    "apply_perturbation_batch",
    "apply_summary",
    "argmax_class",
    "bin_for_perturbed_count",
    "bin_of",
    "build_summary_matrix",
    "calibrated_counterpart",
    "calibration_curve",
    "ce_kl_plugin",
    "decomposition_bias",
    "derive_rng",
    "enumerate_subsets",
    "exact_calibration_curve",
    "exact_ce_kl",
    "exact_mutual_information",
    "exact_predictive_power",
    "feasible_perturbed_counts",
    "feature_observed_array",
    "fit_recalx",
    "generate_problem",
    "handshake",
    "kl_divergence",
    "lime_explain",
    "load_dataset_csv",
    "load_perturbation_spec",
    "localization_score",
    "log_softmax",
    "max_abs_residual",
    "mean_cross_entropy",
    "minimize_temperature",
    "perturbation_level",
    "recal_predict",
    "sample_dataset",
    "sample_subset_in_bin",
    "sample_uniform_subset",
    "save_dataset_csv",
    "save_perturbation_spec",
    "shapley_exact",
    "shapley_sampled",
    "softmax",
    "softmax_with_temperature",
    "spearman_alignment",
    "validate_prob_vector",
    "verify_decomposition",
    "verify_local_bound",
    "write_decomposition_csv",
]
