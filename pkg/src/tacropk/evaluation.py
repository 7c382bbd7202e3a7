"""Forecast replay, prediction-error metrics, verdicts and comparisons.

The replay protocol: for a patient with N usable observations, step
n = 0..N-1; at each step the MAP estimate conditioned on the first n
observations predicts later ones.  n = 0 is the a priori pass (covariates
only, eta = 0) and covers every observation; n >= 1 predicts either just
the next observation ("next-one") or all remaining ones
("all-remaining").

Metrics: PE% = (pred - obs) / obs * 100, MDPE / MDAPE its median and the
median of its absolute value, F20 / F30 the percentage of records with
|PE| within 20 / 30 (boundary inclusive).  A model is satisfactory when
-20 <= MDPE <= 20, MDAPE <= 30, F20 >= 35 and F30 >= 50, all boundaries
inclusive.

Model comparison: one-sided paired Wilcoxon signed-rank on |PE| (exact
null by sign enumeration up to 25 pairs, normal approximation with tie
and continuity correction above), Bonferroni-adjusted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from statistics import median
from typing import Sequence

import numpy as np
from scipy import stats

from . import pk
from .errors import ConfigurationError, DomainError
from .estimation import (EstimationWarning, IndividualEstimate,
                         PopulationModel, map_estimate)
from .pk import EventTimeline

FORECAST_MODES = ("next-one", "all-remaining")


@dataclass(frozen=True)
class PredictionRecord:
    """One predicted-vs-observed trough."""

    patient_id: str
    obs_index: int      # 1-based ordinal of the predicted observation
    n_obs: int          # observations conditioned on
    pred: float         # ng/mL
    obs: float          # ng/mL
    pe_percent: float
    flagged: bool = False

    def __post_init__(self) -> None:
        if self.obs <= 0:
            raise DomainError(
                f"observed concentration must be > 0, got {self.obs}")


def prediction_error(pred: float, obs: float) -> float:
    """PE% = (pred - obs) / obs * 100."""
    if obs <= 0:
        raise DomainError(
            f"observed concentration must be > 0, got {obs}")
    return (pred - obs) / obs * 100.0


@dataclass(frozen=True)
class MetricsSummary:
    mdpe: float
    mdape: float
    f20: float
    f30: float
    n_records: int
    n_patients: int


@dataclass(frozen=True)
class Verdict:
    satisfactory: bool
    failed_criteria: tuple[str, ...]


@dataclass(frozen=True)
class TargetRange:
    """POD-dependent trough target bands."""

    pod_cutoff: int = 28
    early: tuple[float, float] = (8.0, 12.0)
    late: tuple[float, float] = (5.0, 10.0)

    def __post_init__(self) -> None:
        if self.pod_cutoff <= 0:
            raise ConfigurationError("pod_cutoff must be > 0")
        for band in (self.early, self.late):
            if band[0] >= band[1]:
                raise ConfigurationError(
                    f"target band bounds must be ordered, got {band}")

    def band(self, pod: int) -> tuple[float, float]:
        return self.early if pod <= self.pod_cutoff else self.late

    def midpoint(self, pod: int) -> float:
        lo, hi = self.band(pod)
        return (lo + hi) / 2.0

    def classify(self, concentration: float, pod: int) -> str:
        lo, hi = self.band(pod)
        if concentration < lo:
            return "below"
        if concentration > hi:
            return "above"
        return "within"


def summarize(records: Sequence[PredictionRecord]) -> MetricsSummary:
    """MDPE / MDAPE / F20 / F30 over a record set.

    Flagged records are excluded with a warning; even-length medians are
    the mean of the two central values.
    """
    usable = [r for r in records if not r.flagged]
    if len(usable) < len(records):
        warnings.warn(f"{len(records) - len(usable)} flagged records "
                      "excluded from the summary", EstimationWarning,
                      stacklevel=2)
    if not usable:
        raise DomainError("cannot summarize an empty record set")
    pe = [r.pe_percent for r in usable]
    abs_pe = [abs(v) for v in pe]
    n = len(pe)
    return MetricsSummary(
        mdpe=median(pe),
        mdape=median(abs_pe),
        f20=100.0 * sum(v <= 20.0 for v in abs_pe) / n,
        f30=100.0 * sum(v <= 30.0 for v in abs_pe) / n,
        n_records=n,
        n_patients=len({r.patient_id for r in usable}))


def verdict(m: MetricsSummary) -> Verdict:
    """Acceptability: -20 <= MDPE <= 20, MDAPE <= 30, F20 >= 35, F30 >= 50.

    All boundaries inclusive (a value exactly on a threshold passes).
    """
    failed = []
    if not -20.0 <= m.mdpe <= 20.0:
        failed.append("MDPE")
    if not m.mdape <= 30.0:
        failed.append("MDAPE")
    if not m.f20 >= 35.0:
        failed.append("F20")
    if not m.f30 >= 50.0:
        failed.append("F30")
    return Verdict(satisfactory=not failed, failed_criteria=tuple(failed))


# --------------------------------------------------------------------------
# Sequential forecasting replay
# --------------------------------------------------------------------------

def sequential_forecast(timeline: EventTimeline, model: PopulationModel,
                        mode: str = "next-one") -> list[PredictionRecord]:
    """Replay TDM forecasting over one patient's observation history."""
    if mode not in FORECAST_MODES:
        raise ConfigurationError(
            f"unknown forecast mode {mode!r}; expected one of "
            f"{FORECAST_MODES}")
    usable = timeline.usable_observations
    if not usable:
        raise DomainError(
            f"patient {timeline.patient_id} has no usable observations")
    records: list[PredictionRecord] = []
    n_total = len(usable)
    for n in range(n_total):
        estimate = map_estimate(timeline, model, n_obs_used=n)
        profile = pk.simulate(timeline, model.theta, estimate.eta_hat,
                              model.eta_names)
        conc_at = {p.time: p.concentration for p in profile.points}
        if not estimate.converged:
            warnings.warn(
                f"patient {timeline.patient_id}: MAP failed at n_obs={n}; "
                "records flagged", EstimationWarning, stacklevel=2)
        if n == 0:
            targets = range(n_total)           # a priori covers everything
        elif mode == "next-one":
            targets = range(n, n + 1)
        else:
            targets = range(n, n_total)
        for j in targets:
            obs = usable[j]
            pred = conc_at[obs.time]
            records.append(PredictionRecord(
                patient_id=timeline.patient_id,
                obs_index=j + 1,
                n_obs=n,
                pred=pred,
                obs=obs.concentration,
                pe_percent=prediction_error(pred, obs.concentration),
                flagged=not estimate.converged))
    return records


def forecast_cohort(cohort: Sequence[EventTimeline],
                    model: PopulationModel,
                    mode: str = "next-one") -> list[PredictionRecord]:
    """Replay every patient, skipping those without usable observations."""
    records: list[PredictionRecord] = []
    for timeline in cohort:
        if not timeline.usable_observations:
            warnings.warn(f"patient {timeline.patient_id} skipped: no "
                          "usable observations", EstimationWarning,
                          stacklevel=2)
            continue
        records.extend(sequential_forecast(timeline, model, mode))
    return records


# --------------------------------------------------------------------------
# Model comparison (Wilcoxon signed-rank)
# --------------------------------------------------------------------------

EXACT_WILCOXON_MAX_N = 25


def _exact_signed_rank_p(ranks: np.ndarray, w_plus: float) -> float:
    """P(W+ >= w_plus) by sign enumeration, via a doubled-rank DP.

    Midranks doubled are integers, so the distribution of 2*W+ over the
    2^n equiprobable sign assignments is a convolution of {0, 2r_i}.
    """
    doubled = [int(round(2.0 * r)) for r in ranks]
    total = sum(doubled)
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    threshold = int(round(2.0 * w_plus))
    tail = counts[threshold:].sum()
    return float(tail / 2.0 ** len(doubled))


def compare_models(pe_a: Sequence[float], pe_b: Sequence[float],
                   n_comparisons: int = 1) -> tuple[float, float]:
    """One-sided paired Wilcoxon signed-rank on |PE|.

    Alternative: model B has smaller absolute prediction errors (the
    differences |PE_a| - |PE_b| tend positive).  Returns (p, Bonferroni-
    adjusted p).
    """
    if len(pe_a) != len(pe_b):
        raise DomainError(
            f"paired lists differ in length: {len(pe_a)} vs {len(pe_b)}")
    if len(pe_a) < 5:
        raise DomainError("need at least 5 paired records")
    if n_comparisons < 1:
        raise DomainError("n_comparisons must be >= 1")
    diffs = np.abs(np.asarray(pe_a, dtype=float)) \
        - np.abs(np.asarray(pe_b, dtype=float))
    diffs = diffs[diffs != 0.0]  # zero differences dropped before ranking
    n = diffs.size
    if n == 0:
        warnings.warn("all paired differences are zero; p = 1",
                      EstimationWarning, stacklevel=2)
        return 1.0, 1.0
    ranks = stats.rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        p = _exact_signed_rank_p(ranks, w_plus)
    else:
        mu = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var -= float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
        z = (w_plus - mu - 0.5) / math.sqrt(var)
        p = float(stats.norm.sf(z))
    return p, min(1.0, p * n_comparisons)


# --------------------------------------------------------------------------
# Exposure report and dose recommendation
# --------------------------------------------------------------------------

def weekly_exposure_report(cohort: Sequence[EventTimeline],
                           target: TargetRange,
                           ) -> dict[int, dict[str, int]]:
    """Per-week counts of troughs below / within / above the target band.

    Week k covers PODs 7(k-1)+1 .. 7k, so the early/late band switch at
    POD 28 falls exactly on the week-4 boundary.
    """
    report: dict[int, dict[str, int]] = {}
    for timeline in cohort:
        for obs in timeline.usable_observations:
            pod = pk.pod_at(obs.time)
            week = math.ceil(pod / 7)
            bucket = report.setdefault(
                week, {"below": 0, "within": 0, "above": 0})
            bucket[target.classify(obs.concentration, pod)] += 1
    return report


def recommend_dose(timeline: EventTimeline, model: PopulationModel,
                   estimate: IndividualEstimate, target: TargetRange,
                   next_trough_time: float) -> float:
    """Dose (mg) scaling the predicted trough onto the target midpoint.

    Relies on PK linearity: dose' = dose * midpoint / predicted trough,
    rounded to the nearest 0.5 mg and floored at 0.5 mg.
    """
    doses = timeline.doses
    if not doses:
        raise DomainError(
            f"patient {timeline.patient_id} has no dosing history")
    current_dose = doses[-1].amount
    profile = pk.simulate(timeline, model.theta, estimate.eta_hat,
                          model.eta_names,
                          sample_times=[next_trough_time])
    trough = next(p.concentration for p in profile.points
                  if p.time == next_trough_time)
    if trough <= 0:
        raise DomainError(
            f"predicted trough at t={next_trough_time} h is not positive")
    midpoint = target.midpoint(pk.pod_at(next_trough_time))
    raw = current_dose * midpoint / trough
    return max(0.5, math.floor(raw * 2.0 + 0.5) / 2.0)


# --------------------------------------------------------------------------
# Tabular artifacts (plot-ready, rendered elsewhere)
# --------------------------------------------------------------------------

RECORD_COLUMNS = ("patient_id", "obs_index", "n_obs", "pred", "obs",
                  "pe_percent")
SUMMARY_COLUMNS = ("n_obs", "model", "n_patients", "n_pred", "mdpe",
                   "mdape", "f20", "f30", "satisfactory",
                   "failed_criteria")


def records_table(records: Sequence[PredictionRecord]) -> list[list]:
    """Per-record PE table rows (header excluded, flagged rows dropped)."""
    return [[r.patient_id, r.obs_index, r.n_obs, r.pred, r.obs,
             r.pe_percent]
            for r in records if not r.flagged]


def nobs_summary_table(records: Sequence[PredictionRecord],
                       model_name: str) -> list[list]:
    """Per-Nobs summary rows mirroring the evaluation-table layout."""
    rows = []
    usable = [r for r in records if not r.flagged]
    for n in sorted({r.n_obs for r in usable}):
        group = [r for r in usable if r.n_obs == n]
        m = summarize(group)
        v = verdict(m)
        rows.append([n, model_name, m.n_patients, m.n_records,
                     m.mdpe, m.mdape, m.f20, m.f30,
                     v.satisfactory, "|".join(v.failed_criteria)])
    return rows


def boxplot_source(records: Sequence[PredictionRecord],
                   model_name: str) -> list[list]:
    """PE grouped by n_obs and model, one row per record."""
    return [[model_name, r.n_obs, r.pe_percent]
            for r in records if not r.flagged]


def weekly_counts_rows(report: dict[int, dict[str, int]]) -> list[list]:
    return [[week, counts["below"], counts["within"], counts["above"]]
            for week, counts in sorted(report.items())]
