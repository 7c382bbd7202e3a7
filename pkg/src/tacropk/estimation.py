"""Population and individual parameter estimation.

Three layers:

* individual: the conditional -2 log-posterior over a patient's random
  effects, its MAP minimizer, and a Laplace approximation of the
  patient's marginal likelihood contribution;
* prior: a penalty anchoring population parameters to published
  estimates (normal on theta, inverse-Wishart kernel on omega), with a
  per-block weight in [0, inf) interpolating informative -> uninformative;
* population: a derivative-free fit of theta / omega / sigma over the
  whole cohort, plus the grid walk that relaxes prior weights while the
  fit stays well-conditioned ("tweaked O" construction).

Constant conventions (documented so objective values are comparable):

* ``individual_objective`` omits all 2*pi terms: it is
  sum_j [(obs_j - ipred_j)^2 / var_j + ln var_j] + eta' Om^-1 eta
  + ln det Om.
* ``laplace_marginal`` returns objective(eta_hat) + ln det H with H the
  Hessian of half the objective, which equals the full -2 log marginal
  likelihood minus n_obs * ln(2*pi).  A patient with zero usable
  observations therefore contributes exactly 0.
* the inverse-Wishart omega penalty is the kernel
  nu_eff * [tr(Om_prior Om^-1) + ln det Om]; its additive constant is
  dropped, so the penalty is 0 at weight 0 and minimized at
  Om = Om_prior for any weight.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from . import pk
from .errors import ConfigurationError, DataError, TacroPKError
from .pk import CompiledSchedule, EventTimeline, StructuralTheta

THETA_FIELDS = ("cl_max", "tcl50", "gamma", "v_f")

#: Hessian eigenvalues below this are floored during positive-definite repair.
HESSIAN_EIG_FLOOR = 1e-10


class EstimationError(TacroPKError):
    """An estimation step produced a non-finite or irreparable result."""


class EstimationWarning(UserWarning):
    """A patient or block was flagged during estimation."""


# --------------------------------------------------------------------------
# Theta accessors (structural fields + covariate coefficients)
# --------------------------------------------------------------------------

def theta_parameter_names(theta: StructuralTheta) -> tuple[str, ...]:
    """All addressable parameter names: fields plus 'cov:<covariate>'."""
    return THETA_FIELDS + tuple(
        f"cov:{e.covariate}" for e in theta.cov_effects)


def theta_value(theta: StructuralTheta, name: str) -> float:
    if name in THETA_FIELDS:
        return getattr(theta, name)
    if name.startswith("cov:"):
        covariate = name[4:]
        for e in theta.cov_effects:
            if e.covariate == covariate:
                return e.coefficient
    raise ConfigurationError(f"unknown theta parameter {name!r}")


def theta_replace(theta: StructuralTheta, name: str,
                  value: float) -> StructuralTheta:
    if name in THETA_FIELDS:
        return replace(theta, **{name: value})
    if name.startswith("cov:"):
        covariate = name[4:]
        effects = []
        hit = False
        for e in theta.cov_effects:
            if e.covariate == covariate:
                effects.append(replace(e, coefficient=value))
                hit = True
            else:
                effects.append(e)
        if hit:
            return replace(theta, cov_effects=tuple(effects))
    raise ConfigurationError(f"unknown theta parameter {name!r}")


def is_positive_parameter(name: str) -> bool:
    """Positive-constrained parameters are log-transformed when estimated."""
    return name in THETA_FIELDS


# --------------------------------------------------------------------------
# Model and prior containers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PopulationModel:
    """Fixed effects, random-effect covariance and residual error."""

    theta: StructuralTheta
    omega: np.ndarray                 # covariance over eta_names
    sigma_prop: float                 # dimensionless
    sigma_add: float                  # ng/mL
    eta_names: tuple[str, ...] = ("cl", "v")
    estimable: tuple[str, ...] = ()
    omega_diagonal: bool = True
    sigma_estimable: tuple[bool, bool] = (False, False)

    def __post_init__(self) -> None:
        omega = np.array(self.omega, dtype=float)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "eta_names", tuple(self.eta_names))
        object.__setattr__(self, "estimable", tuple(self.estimable))
        m = len(self.eta_names)
        if len(set(self.eta_names)) != m:
            raise ConfigurationError("duplicate eta names")
        for n in self.eta_names:
            if n not in pk.ETA_BEARING:
                raise ConfigurationError(f"eta on {n!r} not supported")
        if omega.shape != (m, m):
            raise ConfigurationError(
                f"omega shape {omega.shape} does not match "
                f"{m} random effects")
        if not np.allclose(omega, omega.T):
            raise ConfigurationError("omega must be symmetric")
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("omega must be positive-definite") \
                from exc
        if self.sigma_prop < 0 or self.sigma_add < 0:
            raise ConfigurationError("sigma components must be >= 0")
        if self.sigma_prop == 0 and self.sigma_add == 0:
            raise ConfigurationError("sigma components cannot both be zero")
        known = theta_parameter_names(self.theta)
        for name in self.estimable:
            if name == "ka":
                raise ConfigurationError("ka is fixed and never estimable")
            if name not in known:
                raise ConfigurationError(
                    f"estimable flag names unknown parameter {name!r}")

    @property
    def n_eta(self) -> int:
        return len(self.eta_names)


@dataclass(frozen=True)
class PriorSpec:
    """Prior means/uncertainties with per-block weights.

    Weight keys: each theta parameter name is its own block; the omega
    block is keyed "omega" (full matrix) or "omega:<eta name>"
    (per-variance, only when omega is declared diagonal).  Weight 0 drops
    the block's penalty exactly; missing keys default to 1.
    """

    theta_mean: dict[str, float] = field(default_factory=dict)
    theta_se: dict[str, float] = field(default_factory=dict)
    omega_prior: Optional[np.ndarray] = None
    nu: float = 0.0
    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.omega_prior is not None:
            object.__setattr__(self, "omega_prior",
                               np.array(self.omega_prior, dtype=float))
        for name, w in self.weights.items():
            if w < 0:
                raise ConfigurationError(
                    f"prior weight for {name!r} must be >= 0, got {w}")
        for name in self.theta_mean:
            if self.weight(name) > 0:
                se = self.theta_se.get(name)
                if se is None or se <= 0:
                    raise ConfigurationError(
                        f"theta prior on {name!r} needs a standard error "
                        "> 0 while its weight is > 0")
        if self.omega_prior is not None:
            p = self.omega_prior.shape[0]
            has_weight = any(
                self.weight(k) > 0 for k in [
                    "omega", *(f"omega:{i}" for i in range(p))])
            if has_weight and self.weight("omega") > 0 and self.nu < p:
                raise ConfigurationError(
                    f"omega prior degrees of freedom nu={self.nu} must be "
                    f">= dimension {p} while its weight is > 0")

    def weight(self, key: str) -> float:
        return self.weights.get(key, 1.0)

    def with_weights(self, weights: dict[str, float]) -> "PriorSpec":
        merged = dict(self.weights)
        merged.update(weights)
        return replace(self, weights=merged)

    def block_keys(self, model: PopulationModel) -> tuple[str, ...]:
        """All weight-bearing block keys for a model."""
        keys = list(self.theta_mean)
        if self.omega_prior is not None:
            if model.omega_diagonal:
                keys.extend(f"omega:{n}" for n in model.eta_names)
            else:
                keys.append("omega")
        return tuple(keys)


@dataclass(frozen=True)
class IndividualEstimate:
    """MAP random-effect estimate for one patient."""

    patient_id: str
    eta_hat: tuple[float, ...]
    n_obs_used: int
    objective: float
    converged: bool = True


@dataclass(frozen=True)
class ConditionReport:
    """Curvature diagnostics of the outer objective at its optimum."""

    eigenvalues: tuple[float, ...]
    condition: float
    rse: dict[str, float]

    @property
    def finite(self) -> bool:
        return (math.isfinite(self.condition)
                and all(math.isfinite(v) for v in self.rse.values()))


@dataclass(frozen=True)
class FitResult:
    model: PopulationModel
    minus2ll_data: float
    minus2ll_penalty: float
    converged: bool
    n_function_evals: int
    condition_report: Optional[ConditionReport] = None
    flags: tuple[str, ...] = ()
    excluded_patients: tuple[str, ...] = ()

    @property
    def minus2ll(self) -> float:
        return self.minus2ll_data + self.minus2ll_penalty


# --------------------------------------------------------------------------
# Individual objective, MAP, Laplace
# --------------------------------------------------------------------------

def residual_variance(pred: float, sigma_prop: float,
                      sigma_add: float) -> float:
    """Combined proportional + additive residual variance, (ng/mL)^2."""
    return (sigma_prop * pred) ** 2 + sigma_add ** 2


class IndividualObjective:
    """Conditional -2 log-posterior of one patient's eta vector.

    Only the first ``n_obs_used`` non-missing observations enter the data
    term; the full event schedule (all doses, all observation
    breakpoints) is always simulated so predictions do not depend on the
    masking.
    """

    def __init__(self, timeline: EventTimeline, model: PopulationModel,
                 n_obs_used: int):
        usable = timeline.usable_observations
        if n_obs_used < 0 or n_obs_used > len(usable):
            raise ConfigurationError(
                f"n_obs_used={n_obs_used} outside 0..{len(usable)} for "
                f"patient {timeline.patient_id}")
        self.timeline = timeline
        self.model = model
        self.n_obs_used = n_obs_used
        self.sched = CompiledSchedule(timeline)
        emitted = [t for t, e in zip(self.sched.times, self.sched.emit) if e]
        index_of = {t: i for i, t in enumerate(emitted)}
        used = usable[:n_obs_used]
        self._obs_idx = [index_of[o.time] for o in used]
        self._obs_val = [o.concentration for o in used]
        m = model.n_eta
        try:
            chol = np.linalg.cholesky(model.omega)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("omega is not invertible") from exc
        self._omega_inv = np.linalg.inv(model.omega)
        self._omega_logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        self._m = m

    def ipred(self, eta: Sequence[float]) -> list[float]:
        """Concentrations at every emitted (observation) time."""
        theta_i = pk.apply_eta(self.model.theta, eta, self.model.eta_names)
        return self.sched.run(theta_i)

    def __call__(self, eta: Sequence[float]) -> float:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self._m,):
            raise ConfigurationError(
                f"eta has shape {eta.shape}, expected ({self._m},)")
        value = float(eta @ self._omega_inv @ eta) + self._omega_logdet
        if self._obs_idx:
            concs = self.ipred(eta)
            sp, sa = self.model.sigma_prop, self.model.sigma_add
            for idx, obs in zip(self._obs_idx, self._obs_val):
                pred = concs[idx]
                var = residual_variance(pred, sp, sa)
                value += (obs - pred) ** 2 / var + math.log(var)
        return value


def individual_objective(eta: Sequence[float], timeline: EventTimeline,
                         model: PopulationModel, n_obs_used: int) -> float:
    """One-shot evaluation of the conditional -2 log-posterior."""
    return IndividualObjective(timeline, model, n_obs_used)(eta)


def default_starts(model: PopulationModel) -> list[np.ndarray]:
    """Deterministic multi-start set: origin plus +-0.5 per axis."""
    m = model.n_eta
    starts = [np.zeros(m)]
    for i in range(m):
        for s in (0.5, -0.5):
            e = np.zeros(m)
            e[i] = s
            starts.append(e)
    return starts


def _stationary(obj: Callable[[np.ndarray], float], x: np.ndarray,
                f: float, h: float = 1e-5) -> bool:
    """Central-difference first-order check at a candidate optimum."""
    grad = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        grad[i] = (obj(x + e) - obj(x - e)) / (2.0 * h)
    return bool(np.max(np.abs(grad)) <= 1e-3 * max(1.0, abs(f)))


def _minimize_eta(obj: Callable[[np.ndarray], float],
                  starts: Sequence[np.ndarray],
                  ) -> tuple[np.ndarray, float, bool]:
    best_x = None
    best_f = math.inf
    for x0 in starts:
        res = optimize.minimize(obj, np.asarray(x0, dtype=float),
                                method="BFGS",
                                options={"gtol": 1e-7, "maxiter": 200})
        f = float(res.fun)
        if math.isfinite(f) and f < best_f:
            best_f = f
            best_x = np.asarray(res.x, dtype=float)
    if best_x is None:
        best_x = np.asarray(starts[0], dtype=float)
        best_f = float(obj(best_x))
        return best_x, best_f, False
    # BFGS with numerical gradients often stops on "precision loss"
    # at a perfectly good optimum; judge convergence by stationarity
    # of the best point, not by the optimizer's success flag
    return best_x, best_f, _stationary(obj, best_x, best_f)


def map_estimate(timeline: EventTimeline, model: PopulationModel,
                 n_obs_used: int,
                 starts: Optional[Sequence[np.ndarray]] = None,
                 ) -> IndividualEstimate:
    """MAP estimate of eta conditioned on the first n observations.

    With n_obs_used = 0 the posterior mode is exactly the prior mode,
    eta = 0, returned without optimization.
    """
    obj = IndividualObjective(timeline, model, n_obs_used)
    if n_obs_used == 0:
        zero = np.zeros(model.n_eta)
        return IndividualEstimate(
            patient_id=timeline.patient_id,
            eta_hat=tuple(zero), n_obs_used=0,
            objective=float(obj(zero)), converged=True)
    if starts is None:
        starts = default_starts(model)
    eta_hat, fval, ok = _minimize_eta(obj, starts)
    if not ok:
        warnings.warn(
            f"MAP optimizer did not report convergence for patient "
            f"{timeline.patient_id} (n_obs_used={n_obs_used}); keeping the "
            "best point found", EstimationWarning, stacklevel=2)
    return IndividualEstimate(
        patient_id=timeline.patient_id,
        eta_hat=tuple(float(v) for v in eta_hat),
        n_obs_used=n_obs_used, objective=fval, converged=ok)


def _half_objective_hessian(obj: Callable[[np.ndarray], float],
                            x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference Hessian of obj/2, symmetrized."""
    m = len(x)
    f0 = obj(x)
    hess = np.empty((m, m))
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = h
        fpp = obj(x + ei)
        fmm = obj(x - ei)
        hess[i, i] = (fpp - 2.0 * f0 + fmm) / h ** 2
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = h
            fpq = obj(x + ei + ej)
            fpm = obj(x + ei - ej)
            fmp = obj(x - ei + ej)
            fmq = obj(x - ei - ej)
            hess[i, j] = hess[j, i] = (fpq - fpm - fmp + fmq) / (4.0 * h ** 2)
    return 0.5 * hess  # Hessian of obj/2


def laplace_from_objective(obj: Callable[[np.ndarray], float],
                           eta_hat: np.ndarray) -> float:
    """Laplace value objective(eta_hat) + ln det H, H from obj/2.

    The Hessian is repaired to positive-definite by flooring eigenvalues
    at HESSIAN_EIG_FLOOR.
    """
    hess = _half_objective_hessian(obj, np.asarray(eta_hat, dtype=float))
    if not np.all(np.isfinite(hess)):
        raise EstimationError("non-finite Hessian in Laplace approximation")
    eigvals = np.linalg.eigvalsh(hess)
    eigvals = np.maximum(eigvals, HESSIAN_EIG_FLOOR)
    value = float(obj(np.asarray(eta_hat, dtype=float))
                  + np.sum(np.log(eigvals)))
    if not math.isfinite(value):
        raise EstimationError("non-finite Laplace objective value")
    return value


def laplace_marginal(timeline: EventTimeline, model: PopulationModel,
                     starts: Optional[Sequence[np.ndarray]] = None,
                     ) -> float:
    """Laplace -2 log marginal-likelihood contribution of one patient.

    Equals the exact value minus n_obs * ln(2*pi); a patient whose
    observations are all masked contributes exactly 0.
    """
    n_obs = len(timeline.usable_observations)
    if n_obs == 0:
        return 0.0
    obj = IndividualObjective(timeline, model, n_obs)
    if starts is None:
        starts = default_starts(model)
    eta_hat, _, _ = _minimize_eta(obj, starts)
    return laplace_from_objective(obj, eta_hat)


# --------------------------------------------------------------------------
# Prior penalty
# --------------------------------------------------------------------------

def prior_penalty(model: PopulationModel, prior: Optional[PriorSpec]) -> float:
    """Informative-prior penalty on theta and omega.

    Any block with weight 0 contributes exactly 0; with no prior at all
    the penalty is exactly 0.0.
    """
    if prior is None:
        return 0.0
    penalty = 0.0
    for name, mean in prior.theta_mean.items():
        w = prior.weight(name)
        if w == 0.0:
            continue
        se = prior.theta_se[name]
        penalty += w * ((theta_value(model.theta, name) - mean) / se) ** 2
    if prior.omega_prior is not None:
        omega = model.omega
        if omega.shape != prior.omega_prior.shape:
            raise ConfigurationError(
                "omega prior shape does not match the model's omega")
        if model.omega_diagonal:
            for i, name in enumerate(model.eta_names):
                w = prior.weight(f"omega:{name}")
                if f"omega:{name}" not in prior.weights:
                    w = prior.weight("omega")
                if w == 0.0:
                    continue
                nu_eff = w * prior.nu
                penalty += nu_eff * (prior.omega_prior[i, i] / omega[i, i]
                                     + math.log(omega[i, i]))
        else:
            w = prior.weight("omega")
            if w > 0.0:
                nu_eff = w * prior.nu
                sign, logdet = np.linalg.slogdet(omega)
                if sign <= 0:
                    raise ConfigurationError("omega is singular")
                trace = float(np.trace(
                    np.linalg.solve(omega, prior.omega_prior)))
                penalty += nu_eff * (trace + logdet)
    return penalty


# --------------------------------------------------------------------------
# Population fit
# --------------------------------------------------------------------------

class _ParamPacker:
    """Maps the estimable parameter set to an unconstrained vector.

    Positive structural parameters are log-transformed; covariate
    coefficients stay untransformed; omega goes through a log-Cholesky
    (log standard deviations when diagonal); sigma components are
    log-transformed.
    """

    def __init__(self, model: PopulationModel):
        self.template = model
        self.theta_names = list(model.estimable)
        self.m = model.n_eta
        self.diagonal = model.omega_diagonal
        est_p, est_a = model.sigma_estimable
        self.fit_sigma_prop = bool(est_p and model.sigma_prop > 0)
        self.fit_sigma_add = bool(est_a and model.sigma_add > 0)
        self.labels: list[str] = []
        for name in self.theta_names:
            self.labels.append(name)
        if self.diagonal:
            self.labels.extend(f"omega:{n}" for n in model.eta_names)
        else:
            for i in range(self.m):
                for j in range(i + 1):
                    self.labels.append(f"omega_chol:{i}{j}")
        if self.fit_sigma_prop:
            self.labels.append("sigma_prop")
        if self.fit_sigma_add:
            self.labels.append("sigma_add")

    def pack(self, model: PopulationModel) -> np.ndarray:
        x: list[float] = []
        for name in self.theta_names:
            v = theta_value(model.theta, name)
            x.append(math.log(v) if is_positive_parameter(name) else v)
        if self.diagonal:
            x.extend(0.5 * math.log(model.omega[i, i])
                     for i in range(self.m))
        else:
            chol = np.linalg.cholesky(model.omega)
            for i in range(self.m):
                for j in range(i + 1):
                    x.append(math.log(chol[i, i]) if i == j
                             else chol[i, j])
        if self.fit_sigma_prop:
            x.append(math.log(model.sigma_prop))
        if self.fit_sigma_add:
            x.append(math.log(model.sigma_add))
        return np.array(x, dtype=float)

    def unpack(self, x: np.ndarray) -> PopulationModel:
        model = self.template
        theta = model.theta
        k = 0
        for name in self.theta_names:
            v = x[k]
            theta = theta_replace(
                theta, name,
                math.exp(v) if is_positive_parameter(name) else float(v))
            k += 1
        if self.diagonal:
            omega = np.diag([math.exp(2.0 * x[k + i])
                             for i in range(self.m)])
            k += self.m
        else:
            chol = np.zeros((self.m, self.m))
            for i in range(self.m):
                for j in range(i + 1):
                    chol[i, j] = math.exp(x[k]) if i == j else x[k]
                    k += 1
            omega = chol @ chol.T
        sigma_prop = model.sigma_prop
        sigma_add = model.sigma_add
        if self.fit_sigma_prop:
            sigma_prop = math.exp(x[k])
            k += 1
        if self.fit_sigma_add:
            sigma_add = math.exp(x[k])
            k += 1
        return replace(model, theta=theta, omega=omega,
                       sigma_prop=sigma_prop, sigma_add=sigma_add)


def fit_population(cohort: Sequence[EventTimeline],
                   init: PopulationModel,
                   prior: Optional[PriorSpec] = None,
                   *,
                   max_evals: int = 2000,
                   rel_tol: float = 1e-6,
                   compute_condition: bool = True) -> FitResult:
    """Fit population parameters by penalized Laplace likelihood.

    Nelder-Mead over the unconstrained parameterization; converges when
    the relative objective change drops below ``rel_tol`` (or the
    evaluation budget runs out, reported as converged=False).
    """
    with_obs = [t for t in cohort if t.usable_observations]
    excluded = [t.patient_id for t in cohort
                if not t.usable_observations]
    if len(with_obs) < 2:
        raise DataError("population fit needs >= 2 patients with "
                        "observations")
    for pid in excluded:
        warnings.warn(f"patient {pid} has no usable observations; "
                      "excluded from the fit", EstimationWarning,
                      stacklevel=2)
    flags: list[str] = []
    all_obs = [o.concentration for t in with_obs
               for o in t.usable_observations]
    if len(set(all_obs)) == 1:
        flags.append("degenerate-cohort")
    packer = _ParamPacker(init)
    # patients stay in a stable, order-independent sequence so the
    # objective (and thus the whole fit) is permutation invariant
    patients = sorted(with_obs, key=lambda t: t.patient_id)
    warm: dict[str, np.ndarray] = {}
    bad: set[str] = set()
    n_evals = 0

    def data_term(model: PopulationModel) -> float:
        total = 0.0
        for t in patients:
            if t.patient_id in bad:
                continue
            starts = [np.zeros(model.n_eta)]
            if t.patient_id in warm:
                starts.append(warm[t.patient_id])
            try:
                obj = IndividualObjective(t, model,
                                          len(t.usable_observations))
                eta_hat, _, _ = _minimize_eta(obj, starts)
                contrib = laplace_from_objective(obj, eta_hat)
            except EstimationError:
                warnings.warn(
                    f"patient {t.patient_id}: irreparable Laplace "
                    "contribution; excluded from the fit",
                    EstimationWarning, stacklevel=2)
                bad.add(t.patient_id)
                continue
            warm[t.patient_id] = eta_hat
            total += contrib
        return total

    def objective(x: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        try:
            model = packer.unpack(x)
        except (ConfigurationError, OverflowError):
            return 1e12
        value = data_term(model) + prior_penalty(model, prior)
        return value if math.isfinite(value) else 1e12

    x0 = packer.pack(init)
    f0 = objective(x0)
    fatol = rel_tol * max(1.0, abs(f0))
    res = optimize.minimize(
        objective, x0, method="Nelder-Mead",
        options={"fatol": fatol, "xatol": 1e-5,
                 "maxfev": max_evals, "maxiter": max_evals,
                 "adaptive": len(x0) > 4})
    xopt = np.asarray(res.x, dtype=float)
    model_hat = packer.unpack(xopt)
    data_hat = data_term(model_hat)
    penalty_hat = prior_penalty(model_hat, prior)
    converged = bool(res.success) and math.isfinite(data_hat + penalty_hat)
    condition = None
    if compute_condition:
        condition = _condition_report(objective, xopt, packer, model_hat)
    return FitResult(
        model=model_hat,
        minus2ll_data=data_hat,
        minus2ll_penalty=penalty_hat,
        converged=converged,
        n_function_evals=n_evals,
        condition_report=condition,
        flags=tuple(flags),
        excluded_patients=tuple(sorted(set(excluded) | bad)))


def _condition_report(objective: Callable[[np.ndarray], float],
                      x: np.ndarray, packer: _ParamPacker,
                      model: PopulationModel,
                      h: float = 5e-3) -> ConditionReport:
    """Numerical Hessian diagnostics of the outer objective.

    The RSE proxy is sqrt(diag(2 H^-1)); for log-transformed parameters
    that is directly a relative standard error.
    """
    hess = _half_objective_hessian(objective, x, h=h) * 2.0
    rse: dict[str, float] = {}
    try:
        eigvals = np.linalg.eigvalsh(0.5 * (hess + hess.T))
        if np.any(eigvals <= 0) or not np.all(np.isfinite(eigvals)):
            condition = math.inf
        else:
            condition = float(eigvals[-1] / eigvals[0])
        cov = 2.0 * np.linalg.pinv(hess)
        diag = np.diag(cov)
        for k, label in enumerate(packer.labels):
            se = math.sqrt(diag[k]) if diag[k] > 0 else math.inf
            if label in packer.theta_names and \
                    not is_positive_parameter(label):
                v = abs(theta_value(model.theta, label))
                se = se / v if v > 0 else math.inf
            rse[label] = se
    except np.linalg.LinAlgError:
        eigvals = np.full(len(x), math.nan)
        condition = math.inf
        rse = {label: math.inf for label in packer.labels}
    return ConditionReport(eigenvalues=tuple(float(v) for v in eigvals),
                           condition=condition, rse=rse)


def optimize_prior_weights(cohort: Sequence[EventTimeline],
                           init: PopulationModel,
                           prior: PriorSpec,
                           weight_grid: Sequence[float],
                           *,
                           rse_ceiling: float = 0.5,
                           max_evals: int = 2000,
                           ) -> tuple[PriorSpec, FitResult]:
    """Relax prior weights block by block while the fit stays identifiable.

    For each block the descending grid is walked toward 0 and the
    smallest weight kept whose refit converges with a finite condition
    report and all relative-standard-error proxies below the ceiling.
    A block that fails at every weight below 1 stays at 1 (with a
    warning when even the first step fails).
    """
    grid = list(weight_grid)
    if not grid or grid[0] != 1:
        raise ConfigurationError("weight grid must start at 1")
    if any(b > a for a, b in zip(grid, grid[1:])):
        raise ConfigurationError("weight grid must be descending")
    if any(w < 0 or w > 1 for w in grid):
        raise ConfigurationError("weight grid values must be in [0, 1]")

    def acceptable(result: FitResult) -> bool:
        if not result.converged:
            return False
        rep = result.condition_report
        if rep is None or not rep.finite:
            return False
        return all(v <= rse_ceiling for v in rep.rse.values())

    blocks = prior.block_keys(init)
    weights = {k: 1.0 for k in blocks}
    current = fit_population(cohort, init,
                             prior.with_weights(weights),
                             max_evals=max_evals)
    for block in blocks:
        passed = 1.0
        for w in grid[1:]:
            candidate = dict(weights)
            candidate[block] = w
            result = fit_population(cohort, init,
                                    prior.with_weights(candidate),
                                    max_evals=max_evals)
            if acceptable(result):
                passed = w
                weights = candidate
                current = result
            else:
                break
        if passed == 1.0 and len(grid) > 1:
            warnings.warn(
                f"prior block {block!r}: no weight below 1 passed; "
                "pinned at full informative weight",
                EstimationWarning, stacklevel=2)
    return prior.with_weights(weights), current
