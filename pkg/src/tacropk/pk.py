"""One-compartment oral PK engine with sigmoid post-operative-day clearance.

Structural model: first-order absorption from a depot into a central
compartment, elimination by apparent clearance CL/F.  CL/F rises with the
post-operative day (POD) following a sigmoid

    CL(POD) = cl_max * POD**gamma / (tcl50**gamma + POD**gamma)

optionally scaled by multiplicative covariate effects (albumin, ASAT,
weight).  Between-subject variability is log-normal: an eta vector scales
CL, V and/or TCL50 by exp(eta).

Units are fixed throughout: time in hours, POD in days, dose amounts in mg,
volumes in L, concentrations in ng/mL.  The single mg/L -> ng/mL conversion
(x1000) happens when a concentration is emitted.

Simulation is event-driven: the two-state system (depot, central) is
advanced breakpoint-to-breakpoint with the exact closed-form solution,
parameters held constant over each interval at the covariate state of the
interval's starting POD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import ConfigurationError, DataError, DomainError

MG_PER_L_TO_NG_PER_ML = 1000.0
HOURS_PER_DAY = 24.0

#: Supported covariate-effect functional forms.
EFFECT_FORMS = ("power", "linear", "exponential")

#: Floor applied to the linear-centered effect so clearance stays positive.
LINEAR_EFFECT_FLOOR = 1e-6

#: Structural parameters that may carry a random effect.
ETA_BEARING = ("cl", "v", "tcl50")


def pod_at(time_h: float) -> int:
    """POD containing a time point; t=0 is the start of POD 1."""
    return int(math.floor(time_h / HOURS_PER_DAY)) + 1


@dataclass(frozen=True)
class CovariateEffect:
    """One multiplicative covariate effect on clearance."""

    covariate: str  # "pod", "alb", "asat" or "weight"
    form: str       # one of EFFECT_FORMS
    coefficient: float
    reference: float

    def __post_init__(self) -> None:
        if self.form not in EFFECT_FORMS:
            raise ConfigurationError(
                f"unknown covariate effect form {self.form!r}; "
                f"expected one of {EFFECT_FORMS}"
            )
        if self.reference <= 0:
            raise ConfigurationError(
                f"covariate effect reference must be > 0, got {self.reference}"
            )

    def multiplier(self, value: float) -> float:
        if value <= 0:
            raise DomainError(
                f"covariate {self.covariate!r} must be > 0, got {value}"
            )
        if self.form == "power":
            return (value / self.reference) ** self.coefficient
        if self.form == "linear":
            return max(LINEAR_EFFECT_FLOOR,
                       1.0 + self.coefficient * (value - self.reference))
        return math.exp(self.coefficient * (value - self.reference))


@dataclass(frozen=True)
class StructuralTheta:
    """Population fixed effects.

    ``ka`` is fixed by convention and never estimated; model definitions
    reject any attempt to flag it estimable.
    """

    cl_max: float   # L/h
    tcl50: float    # days
    gamma: float    # dimensionless
    v_f: float      # L
    ka: float       # 1/h, fixed
    cov_effects: tuple[CovariateEffect, ...] = ()

    def __post_init__(self) -> None:
        for name in ("cl_max", "tcl50", "gamma", "v_f", "ka"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(
                    f"structural parameter {name} must be > 0, "
                    f"got {getattr(self, name)}"
                )
        object.__setattr__(self, "cov_effects", tuple(self.cov_effects))


@dataclass(frozen=True)
class CovariateState:
    """Daily covariate record for one POD."""

    pod: int        # days since transplant, >= 1
    alb: float      # g/L
    asat: float     # UI/L
    weight: float   # kg

    def __post_init__(self) -> None:
        if self.pod < 1:
            raise DomainError(f"pod must be >= 1, got {self.pod}")
        for name in ("alb", "asat", "weight"):
            if getattr(self, name) <= 0:
                raise DomainError(
                    f"covariate {name} must be > 0, got {getattr(self, name)}"
                )

    def value(self, covariate: str) -> float:
        if covariate == "pod":
            return float(self.pod)
        if covariate in ("alb", "asat", "weight"):
            return getattr(self, covariate)
        raise ConfigurationError(f"unknown covariate {covariate!r}")


def clearance_at(theta: StructuralTheta, cov: CovariateState) -> float:
    """Population clearance (L/h) at one covariate state.

    Sigmoid-POD base times the product of the configured covariate
    multipliers.  At POD == tcl50 the base is exactly cl_max / 2.
    """
    pod = float(cov.pod)
    base = theta.cl_max * pod ** theta.gamma / (
        theta.tcl50 ** theta.gamma + pod ** theta.gamma)
    mult = 1.0
    for eff in theta.cov_effects:
        mult *= eff.multiplier(cov.value(eff.covariate))
    return base * mult


def apply_eta(theta: StructuralTheta,
              eta: Sequence[float],
              eta_names: Sequence[str]) -> StructuralTheta:
    """Individualize structural parameters with log-normal random effects.

    eta entries pair positionally with ``eta_names`` (subset of
    ETA_BEARING).  "cl" scales cl_max (equivalently the whole clearance
    curve), "v" scales v_f, "tcl50" scales tcl50.
    """
    if len(eta) != len(eta_names):
        raise ConfigurationError(
            f"eta has {len(eta)} entries for {len(eta_names)} names")
    updates: dict[str, float] = {}
    for name, e in zip(eta_names, eta):
        if name == "cl":
            updates["cl_max"] = theta.cl_max * math.exp(e)
        elif name == "v":
            updates["v_f"] = theta.v_f * math.exp(e)
        elif name == "tcl50":
            updates["tcl50"] = theta.tcl50 * math.exp(e)
        else:
            raise ConfigurationError(
                f"random effect on {name!r} not supported; "
                f"expected one of {ETA_BEARING}")
    return replace(theta, **updates) if updates else theta


def individual_theta(theta: StructuralTheta,
                     eta: Sequence[float],
                     eta_names: Sequence[str],
                     cov: CovariateState) -> dict[str, float]:
    """Individual parameter set {cl, v, ka} at one covariate state."""
    theta_i = apply_eta(theta, eta, eta_names)
    return {"cl": clearance_at(theta_i, cov),
            "v": theta_i.v_f,
            "ka": theta_i.ka}


# --------------------------------------------------------------------------
# Events and timelines
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Dose:
    """Oral dose: amount (mg) added to the absorption depot.

    Doses superpose; there is no inter-dose depot reset.
    """

    time: float   # h
    amount: float  # mg

    def __post_init__(self) -> None:
        if self.amount <= 0:
            raise DataError(f"dose amount must be > 0, got {self.amount}")
        if self.time < 0:
            raise DataError(f"dose time must be >= 0, got {self.time}")


@dataclass(frozen=True)
class Observation:
    """Trough observation; mdv=True masks it from estimation."""

    time: float                       # h
    concentration: Optional[float]    # ng/mL; None only when mdv
    mdv: bool = False

    def __post_init__(self) -> None:
        if self.time < 0:
            raise DataError(f"observation time must be >= 0, got {self.time}")
        if not self.mdv and (self.concentration is None
                             or self.concentration <= 0):
            raise DataError(
                "non-missing observation requires concentration > 0, "
                f"got {self.concentration}")


Event = Union[Dose, Observation]


def _event_key(event: Event) -> tuple[float, int]:
    return (event.time, 0 if isinstance(event, Dose) else 1)


@dataclass(frozen=True)
class EventTimeline:
    """One patient's dated doses, observations and daily covariates.

    ``covariates`` may be sparse straight from parsing; ``locf_fill``
    completes it over the event span (see ``check_covariate_coverage``).
    ``raw_covariates`` keeps the per-field measurements the fill works
    from: {"alb"|"asat"|"weight": {pod: value}}.
    """

    patient_id: str
    events: tuple[Event, ...]
    covariates: Mapping[int, CovariateState]
    transplant_date: Optional[str] = None  # ISO date, used for splitting
    regimen_note: Optional[str] = None
    raw_covariates: Optional[Mapping[str, Mapping[int, float]]] = None

    def __post_init__(self) -> None:
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        keys = [_event_key(e) for e in events]
        if keys != sorted(keys):
            raise DataError(
                f"patient {self.patient_id}: events must be time-ordered "
                "with doses before observations at ties")
        covariates = dict(self.covariates)
        object.__setattr__(self, "covariates", covariates)
        for pod, cov in covariates.items():
            if cov.pod != pod:
                raise DataError(
                    f"patient {self.patient_id}: covariate entry keyed "
                    f"{pod} carries pod {cov.pod}")

    def pod_span(self) -> tuple[int, int]:
        if not self.events:
            raise DataError(f"patient {self.patient_id}: no events")
        return (pod_at(self.events[0].time), pod_at(self.events[-1].time))

    def check_covariate_coverage(self) -> None:
        """Require a covariate record for every POD spanned by events."""
        if not self.events:
            return
        lo, hi = self.pod_span()
        for pod in range(lo, hi + 1):
            if pod not in self.covariates:
                raise DataError(
                    f"patient {self.patient_id}: no covariate record "
                    f"for POD {pod} (run locf_fill first)")

    @property
    def doses(self) -> tuple[Dose, ...]:
        return tuple(e for e in self.events if isinstance(e, Dose))

    @property
    def observations(self) -> tuple[Observation, ...]:
        return tuple(e for e in self.events if isinstance(e, Observation))

    @property
    def usable_observations(self) -> tuple[Observation, ...]:
        return tuple(o for o in self.observations if not o.mdv)

    def covariate_at(self, pod: int) -> CovariateState:
        """Covariate state at a POD, carrying the nearest record outward."""
        if pod in self.covariates:
            return self.covariates[pod]
        if not self.covariates:
            raise DataError(
                f"patient {self.patient_id}: no covariate records")
        pods = sorted(self.covariates)
        earlier = [p for p in pods if p < pod]
        chosen = earlier[-1] if earlier else pods[0]
        return self.covariates[chosen]


def make_events(events: Iterable[Event]) -> tuple[Event, ...]:
    """Sort events by (time, dose-before-observation)."""
    return tuple(sorted(events, key=_event_key))


def constant_covariates(events: Sequence[Event],
                        alb: float = 32.0,
                        asat: float = 50.0,
                        weight: float = 75.0) -> dict[int, CovariateState]:
    """Covariate series spanning the events with constant lab values."""
    if not events:
        return {}
    lo = pod_at(min(e.time for e in events))
    hi = pod_at(max(e.time for e in events))
    return {pod: CovariateState(pod=pod, alb=alb, asat=asat, weight=weight)
            for pod in range(lo, hi + 1)}


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfilePoint:
    time: float
    pod: int
    concentration: float


@dataclass(frozen=True)
class ConcentrationProfile:
    """PRED/IPRED trajectory at observation and sampling times."""

    points: tuple[ProfilePoint, ...]
    kind: str  # "a-priori" or "individual"

    def __post_init__(self) -> None:
        points = tuple(self.points)
        object.__setattr__(self, "points", points)
        times = [p.time for p in points]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise DataError("profile times must be strictly increasing")
        if any(p.concentration < 0 for p in points):
            raise DataError("profile concentrations must be >= 0")

    @property
    def concentrations(self) -> tuple[float, ...]:
        return tuple(p.concentration for p in self.points)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(p.time for p in self.points)


class CompiledSchedule:
    """Pre-resolved breakpoint schedule for repeated simulation.

    Breakpoints are the union of dose, observation and extra sampling
    times.  Each breakpoint stores the interval from its predecessor, the
    covariate state frozen over that interval (the interval's starting
    POD), the depot bolus applied at the breakpoint, and whether a
    concentration is emitted there.
    """

    __slots__ = ("times", "dts", "covs", "doses", "emit")

    def __init__(self, timeline: EventTimeline,
                 sample_times: Optional[Sequence[float]] = None):
        dose_by_time: dict[float, float] = {}
        for d in timeline.doses:
            dose_by_time[d.time] = dose_by_time.get(d.time, 0.0) + d.amount
        emit_times = {o.time for o in timeline.observations}
        if sample_times is not None:
            for t in sample_times:
                if t < 0:
                    raise DataError(f"sample time must be >= 0, got {t}")
                emit_times.add(float(t))
        times = sorted(set(dose_by_time) | emit_times)
        self.times: list[float] = times
        self.dts: list[float] = []
        self.covs: list[CovariateState] = []
        prev = times[0] if times else 0.0
        for t in times:
            dt = t - prev
            if dt < 0:
                raise DataError("negative inter-event interval")
            self.dts.append(dt)
            self.covs.append(timeline.covariate_at(pod_at(prev)))
            prev = t
        self.doses = [dose_by_time.get(t, 0.0) for t in times]
        self.emit = [t in emit_times for t in times]

    def run(self, theta_i: StructuralTheta) -> list[float]:
        """Advance the closed form through the schedule.

        Returns the concentration (ng/mL) at each emitting breakpoint,
        in time order.
        """
        ka = theta_i.ka
        v = theta_i.v_f
        ag = 0.0
        ac = 0.0
        out: list[float] = []
        for dt, cov, dose, emit in zip(self.dts, self.covs,
                                       self.doses, self.emit):
            if dt > 0.0:
                ke = clearance_at(theta_i, cov) / v
                ag, ac = _advance(ag, ac, dt, ka, ke)
            if dose > 0.0:
                ag += dose
            if emit:
                out.append(max(0.0, ac / v * MG_PER_L_TO_NG_PER_ML))
        return out


def _advance(ag: float, ac: float, dt: float,
             ka: float, ke: float) -> tuple[float, float]:
    """Exact one-interval update of (depot, central) amounts."""
    if abs(ka - ke) <= 1e-9 * max(ka, ke):
        # limiting case ka == ke: A_c -> (A_c + A_g*k*dt) * exp(-k*dt)
        k = ka
        e = math.exp(-k * dt)
        return ag * e, (ac + ag * k * dt) * e
    ea = math.exp(-ka * dt)
    ee = math.exp(-ke * dt)
    return ag * ea, ac * ee + ag * ka / (ka - ke) * (ee - ea)


def simulate(timeline: EventTimeline,
             theta: StructuralTheta,
             eta: Sequence[float] = (),
             eta_names: Sequence[str] = (),
             sample_times: Optional[Sequence[float]] = None,
             ) -> ConcentrationProfile:
    """Simulate concentrations at every observation (and extra) time.

    Points are emitted for every observation event regardless of its mdv
    flag, plus any ``sample_times``.
    """
    theta_i = apply_eta(theta, eta, eta_names)
    sched = CompiledSchedule(timeline, sample_times)
    concs = sched.run(theta_i)
    points = []
    idx = 0
    for t, emit in zip(sched.times, sched.emit):
        if emit:
            points.append(ProfilePoint(time=t, pod=pod_at(t),
                                       concentration=concs[idx]))
            idx += 1
    kind = "a-priori" if all(e == 0.0 for e in eta) else "individual"
    return ConcentrationProfile(points=tuple(points), kind=kind)


def dose_linearity_scale(profile: ConcentrationProfile,
                         factor: float) -> ConcentrationProfile:
    """Scale a single-regimen profile by a dose factor (linear PK)."""
    if factor <= 0:
        raise DomainError(f"dose scale factor must be > 0, got {factor}")
    return ConcentrationProfile(
        points=tuple(replace(p, concentration=p.concentration * factor)
                     for p in profile.points),
        kind=profile.kind)
