"""tacropk: tacrolimus TDM toolkit.

Population PK simulation with sigmoid post-operative-day clearance,
informative-prior ("tweaked") population estimation, MAP Bayesian
forecasting, and predictive-performance evaluation, plus a CLI and an
HTTP service for interactive dose individualization.
"""

from .errors import (ConfigurationError, DataError, DomainError,
                     TacroPKError)
from .pk import (ConcentrationProfile, CovariateEffect, CovariateState,
                 Dose, EventTimeline, Observation, StructuralTheta,
                 clearance_at, dose_linearity_scale, individual_theta,
                 simulate)
from .estimation import (FitResult, IndividualEstimate, PopulationModel,
                         PriorSpec, fit_population, individual_objective,
                         laplace_marginal, map_estimate,
                         optimize_prior_weights, prior_penalty,
                         residual_variance)
from .evaluation import (MetricsSummary, PredictionRecord, TargetRange,
                         Verdict, compare_models, forecast_cohort,
                         prediction_error, recommend_dose,
                         sequential_forecast, summarize, verdict,
                         weekly_exposure_report)
from .dataio import (Cohort, ModelDefinition, load_model_def, locf_fill,
                     parse_dataset, save_model_def, split,
                     summarize_cohort)

__version__ = "0.1.0"
