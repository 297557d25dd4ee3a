"""TDOA-space source localization and range-difference denoising."""

from .errors import ConfigError, NotInImageError, NumericalError, RankDeficiencyError
from .errorprop import (
    CovarianceReport,
    crlb,
    denoised_covariance,
    estimator_sensitivity,
    propagate_covariance,
)
from .geometry import (
    SensorArray,
    canonical_pairs,
    cross_array,
    num_pairs,
    tdoa_full,
    tdoa_jacobian,
    tdoa_reduced,
)
from .incomplete import (
    PartialProjection,
    denoise_partial,
    partial_subspace,
    reconstruct_full,
    reconstructed_covariance,
    selection_matrix,
)
from .localize import (
    LocalizationResult,
    gs_locate,
    ls_locate,
    ml_cost,
    ml_refine,
    srd_ls_locate,
)
from .noise import NoiseModel, NoiseSpec, sample_noise, uniform_half_width
from .planar import (
    PlanarConfig,
    RegionClass,
    aux_vectors,
    classify,
    hexagon_contains,
    invert,
    quadratic_coefficients,
)
from .subspace import (
    ProjectionOperator,
    constraint_matrix,
    denoise,
    mahalanobis_norm,
    nonredundant,
    projection_operator,
    reduction_matrix,
    subspace_residual,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "NotInImageError", "NumericalError", "RankDeficiencyError",
    "CovarianceReport", "crlb", "denoised_covariance", "estimator_sensitivity",
    "propagate_covariance",
    "SensorArray", "canonical_pairs", "cross_array", "num_pairs",
    "tdoa_full", "tdoa_jacobian", "tdoa_reduced",
    "PartialProjection", "denoise_partial", "partial_subspace",
    "reconstruct_full", "reconstructed_covariance", "selection_matrix",
    "LocalizationResult", "gs_locate", "ls_locate", "ml_cost", "ml_refine",
    "srd_ls_locate",
    "NoiseModel", "NoiseSpec", "sample_noise", "uniform_half_width",
    "PlanarConfig", "RegionClass", "aux_vectors", "classify",
    "hexagon_contains", "invert", "quadratic_coefficients",
    "ProjectionOperator", "constraint_matrix", "denoise", "mahalanobis_norm",
    "nonredundant", "projection_operator", "reduction_matrix",
    "subspace_residual",
    "__version__",
]
