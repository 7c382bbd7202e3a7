"""Fit/predict wrapper classes."""

import numpy as np
import pytest

from tacropk import pk
from tacropk.errors import ConfigurationError
from tacropk.estimation import fit_population, map_estimate
from tacropk.estimators import MapBayesForecaster, PopulationPKEstimator

from support import small_model, synthetic_patient


def make_cohort(model, n=5, seed=7):
    rng = np.random.default_rng(seed)
    return [synthetic_patient(
        f"C{i}", model,
        rng.multivariate_normal(np.zeros(model.n_eta), model.omega),
        rng=rng) for i in range(n)]


class TestPopulationPKEstimator:
    def test_params_round_trip(self):
        model = small_model()
        est = PopulationPKEstimator(model, max_evals=50)
        params = est.get_params()
        assert params["max_evals"] == 50
        est.set_params(max_evals=75)
        assert est.max_evals == 75
        with pytest.raises(ConfigurationError):
            est.set_params(bogus=1)

    def test_fit_matches_functional_call(self):
        model = small_model(eta_names=("cl",), omega=[[0.09]],
                            estimable=("cl_max",))
        cohort = make_cohort(model)
        est = PopulationPKEstimator(model, max_evals=300).fit(cohort)
        direct = fit_population(cohort, model, None, max_evals=300)
        assert est.model_.theta.cl_max == direct.model.theta.cl_max
        assert est.result_.minus2ll == direct.minus2ll

    def test_predict_is_a_priori(self):
        model = small_model()
        cohort = make_cohort(model, n=3)
        est = PopulationPKEstimator(model, max_evals=0)
        with pytest.raises(ConfigurationError):
            est.predict(cohort)
        est.model_ = model  # fixed model, no fit needed for predict
        est.result_ = None
        profiles = est.predict(cohort)
        ref = pk.simulate(cohort[0], model.theta)
        assert profiles[0].concentrations == ref.concentrations
        assert profiles[0].kind == "a-priori"

    def test_weight_grid_requires_prior(self):
        model = small_model()
        est = PopulationPKEstimator(model, weight_grid=[1, 0])
        with pytest.raises(ConfigurationError):
            est.fit(make_cohort(model, n=3))


class TestMapBayesForecaster:
    def test_fit_predict_matches_library(self):
        model = small_model()
        patient = synthetic_patient("F", model, [0.25, -0.15])
        fc = MapBayesForecaster(model).fit(patient)
        direct = map_estimate(patient, model, 2)
        assert fc.estimate_.eta_hat == direct.eta_hat
        t = 5 * 24.0 + 6.0
        pred = fc.predict([t])[0]
        profile = pk.simulate(patient, model.theta, direct.eta_hat,
                              model.eta_names, sample_times=[t])
        want = next(p.concentration for p in profile.points
                    if p.time == t)
        assert pred == want

    def test_n_obs_override(self):
        model = small_model()
        patient = synthetic_patient("F", model, [0.25, -0.15])
        fc = MapBayesForecaster(model, n_obs_used=0).fit(patient)
        assert fc.estimate_.eta_hat == (0.0, 0.0)

    def test_unfitted_predict(self):
        with pytest.raises(ConfigurationError):
            MapBayesForecaster(small_model()).predict([1.0])
