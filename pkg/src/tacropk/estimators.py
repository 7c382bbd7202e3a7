"""Estimator-style wrappers over the functional core.

Thin fit/predict adapters with get_params/set_params, for callers that
expect the familiar estimator protocol.  The functional API in
``estimation`` and ``evaluation`` remains the primary surface; these
classes hold configuration, delegate, and expose fitted state through
trailing-underscore attributes.
"""

from __future__ import annotations

from typing import Optional, Sequence

from . import pk
from .errors import ConfigurationError
from .estimation import (IndividualEstimate, PopulationModel, PriorSpec,
                         fit_population, map_estimate,
                         optimize_prior_weights)
from .pk import ConcentrationProfile, EventTimeline


class _ParamsMixin:
    _param_names: tuple[str, ...] = ()

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "_ParamsMixin":
        for name, value in params.items():
            if name not in self._param_names:
                raise ConfigurationError(
                    f"unknown parameter {name!r} for "
                    f"{type(self).__name__}; valid: {self._param_names}")
            setattr(self, name, value)
        return self


class PopulationPKEstimator(_ParamsMixin):
    """Population fit with optional informative-prior tweaking.

    fit(cohort) runs the penalized Laplace fit; with a ``weight_grid``
    the per-block prior weights are relaxed first.  Fitted state:
    ``model_`` (the fitted PopulationModel), ``result_`` (FitResult) and,
    when weights were optimized, ``prior_`` (the relaxed PriorSpec).
    """

    _param_names = ("model", "prior", "weight_grid", "max_evals",
                    "rel_tol")

    def __init__(self, model: PopulationModel,
                 prior: Optional[PriorSpec] = None,
                 weight_grid: Optional[Sequence[float]] = None,
                 max_evals: int = 2000,
                 rel_tol: float = 1e-6):
        self.model = model
        self.prior = prior
        self.weight_grid = weight_grid
        self.max_evals = max_evals
        self.rel_tol = rel_tol

    def fit(self, cohort: Sequence[EventTimeline],
            y=None) -> "PopulationPKEstimator":
        if self.weight_grid is not None:
            if self.prior is None:
                raise ConfigurationError(
                    "weight_grid requires a prior to relax")
            self.prior_, self.result_ = optimize_prior_weights(
                cohort, self.model, self.prior, self.weight_grid,
                max_evals=self.max_evals)
        else:
            self.prior_ = self.prior
            self.result_ = fit_population(
                cohort, self.model, self.prior,
                max_evals=self.max_evals, rel_tol=self.rel_tol)
        self.model_ = self.result_.model
        return self

    def predict(self, timelines: Sequence[EventTimeline],
                ) -> list[ConcentrationProfile]:
        """A priori (eta = 0) profiles under the fitted model."""
        self._check_fitted()
        return [pk.simulate(t, self.model_.theta) for t in timelines]

    def score(self, cohort: Sequence[EventTimeline]) -> float:
        """Negative -2 log-likelihood of a cohort under the fitted model
        (higher is better, matching the score convention)."""
        self._check_fitted()
        from .estimation import laplace_marginal
        return -sum(laplace_marginal(t, self.model_) for t in cohort)

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise ConfigurationError(
                "estimator is not fitted; call fit() first")


class MapBayesForecaster(_ParamsMixin):
    """Per-patient MAP conditioning and concentration prediction.

    fit(timeline) estimates the patient's eta from the first
    ``n_obs_used`` observations (default: all); predict(times) returns
    the individualized concentrations at those times.
    """

    _param_names = ("model", "n_obs_used")

    def __init__(self, model: PopulationModel,
                 n_obs_used: Optional[int] = None):
        self.model = model
        self.n_obs_used = n_obs_used

    def fit(self, timeline: EventTimeline,
            y=None) -> "MapBayesForecaster":
        n = self.n_obs_used
        if n is None:
            n = len(timeline.usable_observations)
        self.estimate_: IndividualEstimate = map_estimate(
            timeline, self.model, n)
        self.timeline_ = timeline
        return self

    def predict(self, times: Sequence[float]) -> list[float]:
        self._check_fitted()
        profile = pk.simulate(self.timeline_, self.model.theta,
                              self.estimate_.eta_hat,
                              self.model.eta_names,
                              sample_times=list(times))
        conc_at = {p.time: p.concentration for p in profile.points}
        return [conc_at[float(t)] for t in times]

    def _check_fitted(self) -> None:
        if not hasattr(self, "estimate_"):
            raise ConfigurationError(
                "forecaster is not fitted; call fit() first")
