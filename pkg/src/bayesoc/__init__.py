"""Operating characteristics of Bayesian trial designs from beta-mixture
models of the simulated sampling distribution of posterior probabilities."""

from .errors import (BayesOCError, ConfigurationError, ConvergenceWarning, DirectionError,
                     DuplicateScenarioError, InsufficientDesignError, InvalidParameterError,
                     UnreachableTargetError)
from .oc import (DesignPrior, OCEstimate, assurance, assurance_nuisance_grid, find_sample_size,
                 power_surface, tail_probability, type1_curve)
from .shape import (AltShapePosterior, NullShapePosterior, QuantileGrid, QuantileMatrix,
                    build_quantile_matrix, predictive_shape, stage1_fit, stage1_fit_all,
                    stage2_fit_alt, stage2_fit_null)
from .stats import BetaParams, CredibleSummary, RngStream, beta_quantile, empirical_quantiles, reg_inc_beta
from .trial import (DataModel, Scenario, TauSample, enumerate_sampling_distribution,
                    exact_tail_probability, run_scenario)

__version__ = "0.1.0"
