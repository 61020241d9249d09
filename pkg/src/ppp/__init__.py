"""Probability-preserving prediction of extremes for Generalized Pareto data."""
from .errors import (DegenerateSampleError, DomainError, NoSolutionError, OutOfRangeError,
                     PPPError)
from .gpd import GpdParams, sample, tail_prob, tail_quantile
from .estimator import (OrderedSample, TailEstimate, fit_xi, from_psi, model_curve, normalize,
                        to_psi)
from .cloud import Cloud, CloudConfig, CloudPoint, gen_cloud, gen_point, generate, read_cloud
from .predictor import (IncrementTable, SliceSpec, build_table, invert_to_xi_p, predict,
                        slice_quantiles)
from .validate import (ExceedanceReport, estimator_deciles, slice_densities,
                       validate_horizontal, validate_vertical)
from .estimators import BayesLikePredictor, CurveFitTailEstimator

__version__ = "0.1.0"
