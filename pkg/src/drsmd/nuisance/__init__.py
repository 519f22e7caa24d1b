from .core import (
    KAPPA_FLOOR,
    FittedLearner,
    LearnerConfig,
    LearnerKind,
    NuisanceFits,
    OrthogonalCorrection,
    correction_targets,
    fit_learner,
    fit_orthogonal_correction,
    lasso_cv_fit,
    poly_features,
    robinson_residualize,
)
from .lasso import LassoFit, lambda_grid, lambda_max, lasso_cv, lasso_fit
from .nw import NWFit, nw_fit, rule_of_thumb_bandwidth
