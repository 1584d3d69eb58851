"""Group-adaptive elastic-net penalties from marginal-likelihood ridge estimates."""

__version__ = "0.1.0"

from .codata import GroupStructure, expand_overlapping, load_codata_csv
from .enet import FitResult, fit_elastic_net, kkt_check
from .families import BINOMIAL, GAUSSIAN, Family, get_family
from .glm import DesignData, IwlsState, SampleSpaceRidge, fit_iwls_ridge
from .marginal import (
    MarginalLikelihood,
    OptimizationResult,
    RidgePenaltyState,
    grad_neg_log_marginal,
    neg_log_marginal,
    optimize_penalties,
)
from .pipeline import GroupAdaptiveFit, fit_group_adaptive
from .recalibrate import CvPlan, make_folds, recalibrate_lambda0
from .transform import (
    ElasticNetPenalty,
    en_penalty_from_variance,
    en_prior_variance,
    transform_ridge_to_en,
)

__all__ = [
    "BINOMIAL", "GAUSSIAN", "CvPlan", "DesignData", "ElasticNetPenalty", "Family",
    "FitResult", "GroupAdaptiveFit", "GroupStructure", "IwlsState", "MarginalLikelihood",
    "OptimizationResult", "RidgePenaltyState", "SampleSpaceRidge", "en_penalty_from_variance",
    "en_prior_variance", "expand_overlapping", "fit_elastic_net", "fit_group_adaptive",
    "fit_iwls_ridge", "get_family", "grad_neg_log_marginal", "kkt_check", "load_codata_csv",
    "make_folds", "neg_log_marginal", "optimize_penalties", "recalibrate_lambda0",
    "transform_ridge_to_en",
]
