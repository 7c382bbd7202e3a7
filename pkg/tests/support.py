"""Shared builders for estimation/forecast tests."""

from __future__ import annotations

import numpy as np

from tacropk import pk
from tacropk.estimation import PopulationModel
from tacropk.pk import (Dose, EventTimeline, Observation,
                        constant_covariates, make_events)

THETA = pk.StructuralTheta(cl_max=26.5, tcl50=3.0, gamma=2.0, v_f=350.0,
                           ka=4.48)


def bid_regimen(n_days: int, dose: float = 4.0) -> list:
    events = []
    for day in range(n_days):
        events.append(Dose(day * 24 + 7.25, dose))
        events.append(Dose(day * 24 + 18.5, dose))
    return events


def synthetic_patient(pid: str, model: PopulationModel, eta,
                      n_days: int = 6, obs_days=(3, 5), rng=None,
                      dose: float = 4.0) -> EventTimeline:
    """Patient with BID dosing and troughs simulated under ``eta``."""
    events = bid_regimen(n_days, dose)
    obs_times = [(d - 1) * 24 + 6.0 for d in obs_days]
    skeleton = EventTimeline(
        patient_id=pid, events=make_events(events),
        covariates=constant_covariates(events))
    profile = pk.simulate(skeleton, model.theta, eta, model.eta_names,
                          sample_times=obs_times)
    conc_at = {p.time: p.concentration for p in profile.points}
    observations = []
    for t in obs_times:
        c = conc_at[t]
        if rng is not None:
            sd = np.sqrt((model.sigma_prop * c) ** 2
                         + model.sigma_add ** 2)
            c = max(0.05, c + sd * rng.standard_normal())
        observations.append(Observation(time=t, concentration=c))
    all_events = make_events(events + observations)
    return EventTimeline(patient_id=pid, events=all_events,
                         covariates=constant_covariates(all_events))


def small_model(eta_names=("cl", "v"), omega=None, sigma_prop=0.15,
                sigma_add=0.3, estimable=(), theta=THETA,
                sigma_estimable=(False, False)) -> PopulationModel:
    if omega is None:
        omega = np.diag([0.09] * len(eta_names))
    return PopulationModel(theta=theta, omega=np.asarray(omega, float),
                           sigma_prop=sigma_prop, sigma_add=sigma_add,
                           eta_names=tuple(eta_names),
                           estimable=tuple(estimable),
                           omega_diagonal=True,
                           sigma_estimable=sigma_estimable)
