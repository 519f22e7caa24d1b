"""Debiased Robinson-SMD estimation of heterogeneous treatment effects."""

from .estimators import (
    EstimateResult,
    EstimatorTag,
    PipelineResult,
    drsmd_estimate,
    drsmd_variance,
    fit_drsmd,
    gmm_oracle_estimate,
    iv_gmm_estimate,
    late,
    rgmm_estimate,
    rsmd_estimate,
    smd_estimate,
    t_test,
)
from .exceptions import DataError, DRSMDError, IdentificationError, InsufficientDataError, SpecificationError
from .kernel import KernelMatrix, KernelSpec, kappa, kernel_matrix
from .model import DesignMatrices, Dataset, ModelSpec, ParameterVector, build_design, validate
from .nuisance import (
    LearnerConfig,
    LearnerKind,
    NuisanceFits,
    OrthogonalCorrection,
    fit_orthogonal_correction,
    poly_features,
    robinson_residualize,
)

__version__ = "0.1.0"
