"""Dataset ingestion, covariate imputation, splitting and model files.

Dataset contract (CSV, '.' decimal separator, LF line endings):

    ID, TIME, AMT, DV, MDV, POD, ALB, ASAT, WT [, TXDATE]

* ID        opaque patient identifier
* TIME      hours since POD 1 start (00:00 of transplant day + 1)
* AMT       dose in mg; empty on observation rows
* DV        trough in ng/mL; empty on dose rows
* MDV       0/1; 1 masks the observation from estimation
* POD       post-operative day (integer >= 1)
* ALB/ASAT/WT  daily labs; may be empty (filled by locf_fill)
* TXDATE    optional ISO transplant date, constant per patient; drives
            the estimation/prediction split order

A row with AMT empty, DV empty and MDV=1 is a covariate-only record.
Rows violating the contract go to the exclusion log; structural problems
(missing columns, non-monotone TIME within a patient) raise errors.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import mean, pstdev
from typing import Optional, Sequence, Union

import numpy as np
from jsonschema import Draft202012Validator

from .errors import ConfigurationError, DataError
from .estimation import PopulationModel, PriorSpec
from .pk import (CovariateEffect, CovariateState, Dose, EventTimeline,
                 Observation, StructuralTheta, make_events, pod_at)

REQUIRED_COLUMNS = ("ID", "TIME", "AMT", "DV", "MDV", "POD", "ALB",
                    "ASAT", "WT")
COVARIATE_FIELDS = ("alb", "asat", "weight")


class DataWarning(UserWarning):
    """Recoverable dataset issue (logged, processing continues)."""


@dataclass(frozen=True)
class Provenance:
    source: str
    digest: str
    n_rows: int
    exclusions: tuple[str, ...] = ()
    parent_digest: Optional[str] = None


@dataclass(frozen=True)
class Cohort:
    patients: tuple[EventTimeline, ...]
    provenance: Provenance

    def __post_init__(self) -> None:
        object.__setattr__(self, "patients", tuple(self.patients))
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate patient ids in cohort")

    def __len__(self) -> int:
        return len(self.patients)

    def patient(self, patient_id: str) -> EventTimeline:
        for p in self.patients:
            if p.patient_id == patient_id:
                return p
        raise DataError(f"unknown patient {patient_id!r}")


def _parse_float(text: str) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    return float(text)


def parse_dataset(path: Union[str, Path]) -> Cohort:
    """Parse a dataset CSV into a cohort of event timelines."""
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    reader = csv.DictReader(io.StringIO(raw.decode("utf-8")))
    header = reader.fieldnames or []
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise DataError(f"dataset is missing required column {col!r}")

    exclusions: list[str] = []
    events: dict[str, list] = {}
    raw_cov: dict[str, dict[str, dict[int, float]]] = {}
    tx_dates: dict[str, str] = {}
    last_time: dict[str, float] = {}
    n_rows = 0
    for lineno, row in enumerate(reader, start=2):
        n_rows += 1
        pid = (row.get("ID") or "").strip()
        if not pid:
            exclusions.append(f"row {lineno}: empty ID")
            continue
        try:
            time = float(row["TIME"])
            amt = _parse_float(row["AMT"])
            dv = _parse_float(row["DV"])
            mdv = int(float(row["MDV"])) if row["MDV"].strip() else 0
            pod = int(float(row["POD"]))
            alb = _parse_float(row["ALB"])
            asat = _parse_float(row["ASAT"])
            wt = _parse_float(row["WT"])
        except (ValueError, KeyError) as exc:
            exclusions.append(f"row {lineno}: unparseable value ({exc})")
            continue
        if mdv not in (0, 1):
            exclusions.append(f"row {lineno}: MDV must be 0 or 1, "
                              f"got {row['MDV']}")
            continue
        if pod < 1:
            exclusions.append(f"row {lineno}: POD must be >= 1, got {pod}")
            continue
        if amt is not None and dv is not None:
            exclusions.append(
                f"row {lineno}: both AMT and DV set; a row is either a "
                "dose or an observation")
            continue
        if pid in last_time and time < last_time[pid]:
            raise DataError(
                f"patient {pid}: TIME is non-monotone at row {lineno}")
        last_time[pid] = time
        txdate = (row.get("TXDATE") or "").strip() or None
        if txdate:
            if tx_dates.get(pid, txdate) != txdate:
                exclusions.append(
                    f"row {lineno}: conflicting TXDATE for patient {pid}")
                continue
            tx_dates[pid] = txdate
        per_field = raw_cov.setdefault(
            pid, {f: {} for f in COVARIATE_FIELDS})
        for name, value in (("alb", alb), ("asat", asat), ("weight", wt)):
            if value is not None:
                if value <= 0:
                    exclusions.append(
                        f"row {lineno}: non-positive {name.upper()} "
                        f"value {value}")
                else:
                    per_field[name][pod] = value
        try:
            if amt is not None:
                events.setdefault(pid, []).append(
                    Dose(time=time, amount=amt))
            elif dv is not None:
                events.setdefault(pid, []).append(
                    Observation(time=time, concentration=dv,
                                mdv=bool(mdv)))
            elif mdv == 1:
                events.setdefault(pid, [])  # covariate-only record
            else:
                exclusions.append(
                    f"row {lineno}: neither AMT nor DV set and MDV=0")
        except DataError as exc:
            exclusions.append(f"row {lineno}: {exc}")

    patients = []
    for pid in events:
        per_field = raw_cov.get(pid, {f: {} for f in COVARIATE_FIELDS})
        complete = {}
        pods = set().union(*(per_field[f] for f in COVARIATE_FIELDS))
        for pod in sorted(pods):
            vals = {f: per_field[f].get(pod) for f in COVARIATE_FIELDS}
            if all(v is not None for v in vals.values()):
                complete[pod] = CovariateState(
                    pod=pod, alb=vals["alb"], asat=vals["asat"],
                    weight=vals["weight"])
        patients.append(EventTimeline(
            patient_id=pid,
            events=make_events(events[pid]),
            covariates=complete,
            transplant_date=tx_dates.get(pid),
            raw_covariates={f: dict(per_field[f])
                            for f in COVARIATE_FIELDS}))
    return Cohort(
        patients=tuple(sorted(patients, key=lambda p: p.patient_id)),
        provenance=Provenance(source=str(path), digest=digest,
                              n_rows=n_rows,
                              exclusions=tuple(exclusions)))


def locf_fill(cohort: Cohort) -> Cohort:
    """Complete each patient's daily covariates over the event span.

    Missing days carry the previous day's value; days before the first
    measurement back-fill from it with a warning.  A covariate never
    observed for a patient is a configuration error.
    """
    filled = []
    for p in cohort.patients:
        if not p.events:
            filled.append(p)
            continue
        lo, hi = p.pod_span()
        per_field = {}
        if p.raw_covariates is not None:
            for f in COVARIATE_FIELDS:
                per_field[f] = dict(p.raw_covariates.get(f, {}))
        else:
            for f in COVARIATE_FIELDS:
                per_field[f] = {pod: cov.value(f)
                                for pod, cov in p.covariates.items()}
        series: dict[str, dict[int, float]] = {}
        for f in COVARIATE_FIELDS:
            measured = per_field[f]
            if not measured:
                raise ConfigurationError(
                    f"patient {p.patient_id}: covariate {f!r} never "
                    "observed")
            first_pod = min(measured)
            if first_pod > lo:
                warnings.warn(
                    f"patient {p.patient_id}: covariate {f!r} first "
                    f"observed on POD {first_pod}; back-filling PODs "
                    f"{lo}..{first_pod - 1}", DataWarning, stacklevel=2)
            out = {}
            current = measured[first_pod]
            for pod in range(lo, hi + 1):
                if pod in measured:
                    current = measured[pod]
                out[pod] = current
            series[f] = out
        covariates = {pod: CovariateState(pod=pod,
                                          alb=series["alb"][pod],
                                          asat=series["asat"][pod],
                                          weight=series["weight"][pod])
                      for pod in range(lo, hi + 1)}
        timeline = replace(p, covariates=covariates)
        timeline.check_covariate_coverage()
        filled.append(timeline)
    return Cohort(patients=tuple(filled), provenance=cohort.provenance)


def split(cohort: Cohort, fraction: float = 0.70,
          n_estimation: Optional[int] = None,
          ) -> tuple[Cohort, Cohort]:
    """Whole-patient estimation/prediction split by transplant date.

    Patients are ordered earliest transplant first (ties, and patients
    without a date, fall back to lexicographic patient id); the first
    ceil(fraction * N) go to estimation.  ``n_estimation`` overrides the
    count to reproduce published splits exactly.
    """
    if len(cohort) < 2:
        raise DataError("split needs at least 2 patients")
    if not 0 < fraction <= 1:
        raise DataError(f"fraction must be in (0, 1], got {fraction}")
    ordered = sorted(cohort.patients,
                     key=lambda p: (p.transplant_date or "9999-12-31",
                                    p.patient_id))
    n_est = n_estimation if n_estimation is not None \
        else math.ceil(fraction * len(ordered))
    n_est = max(0, min(len(ordered), n_est))
    if n_est == len(ordered):
        warnings.warn("prediction cohort is empty", DataWarning,
                      stacklevel=2)

    def child(patients: Sequence[EventTimeline], label: str) -> Cohort:
        return Cohort(
            patients=tuple(patients),
            provenance=Provenance(
                source=f"{cohort.provenance.source}#{label}",
                digest=hashlib.sha256(
                    (cohort.provenance.digest + label).encode()
                ).hexdigest(),
                n_rows=cohort.provenance.n_rows,
                parent_digest=cohort.provenance.digest))

    return (child(ordered[:n_est], "estimation"),
            child(ordered[n_est:], "prediction"))


# --------------------------------------------------------------------------
# Model definition files
# --------------------------------------------------------------------------

_SCHEMA_PATH = Path(__file__).resolve().parent / "schemas" / \
    "model_definition.schema.json"

DEFAULT_RANDOM_EFFECTS = {"names": ["cl", "v"],
                          "omega": [[0.09, 0.0], [0.0, 0.09]],
                          "diagonal": True}
DEFAULT_ERROR = {"sigma_prop": 0.2, "sigma_add": 0.5,
                 "estimable": [False, False]}


@dataclass(frozen=True)
class ModelDefinition:
    """A population model plus optional prior, as stored on disk."""

    name: str
    model: PopulationModel
    prior: Optional[PriorSpec]
    document: dict = field(repr=False, default_factory=dict)


def model_definition_schema() -> dict:
    return json.loads(_SCHEMA_PATH.read_text())


def _json_path(error) -> str:
    return "." + ".".join(str(p) for p in error.absolute_path)


def load_model_def(path: Union[str, Path],
                   strict: bool = True) -> ModelDefinition:
    """Load and validate a model-definition JSON document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    return model_def_from_dict(doc, strict=strict, source=str(path))


def model_def_from_dict(doc: dict, strict: bool = True,
                        source: str = "<dict>") -> ModelDefinition:
    schema = model_definition_schema()
    if not strict:
        schema = json.loads(json.dumps(schema))
        schema["additionalProperties"] = True
        known = set(schema["properties"])
        extra = set(doc) - known
        if extra:
            warnings.warn(f"{source}: ignoring unknown keys "
                          f"{sorted(extra)}", DataWarning, stacklevel=2)
    validator = Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: e.json_path)
    if errors:
        err = errors[0]
        raise ConfigurationError(
            f"{source}: invalid model definition at "
            f"{_json_path(err) or '.'}: {err.message}")

    structural = doc["structural"]
    if structural.get("ka", {}).get("estimable"):
        raise ConfigurationError(
            f"{source}: invalid model definition at .structural.ka: "
            "ka is fixed and never estimable")
    cov_block = doc.get("covariates", [])
    effects = tuple(CovariateEffect(covariate=c["name"], form=c["form"],
                                    coefficient=c["coefficient"],
                                    reference=c["reference"])
                    for c in cov_block)
    theta = StructuralTheta(
        cl_max=structural["cl_max"]["value"],
        tcl50=structural["tcl50"]["value"],
        gamma=structural["gamma"]["value"],
        v_f=structural["v_f"]["value"],
        ka=structural["ka"]["value"],
        cov_effects=effects)
    estimable = [name for name in ("cl_max", "tcl50", "gamma", "v_f")
                 if structural[name].get("estimable", False)]
    estimable += [f"cov:{c['name']}" for c in cov_block
                  if c.get("estimable", False)]
    re_block = doc.get("random_effects", DEFAULT_RANDOM_EFFECTS)
    err_block = doc.get("error", DEFAULT_ERROR)
    sig_est = err_block.get("estimable", [False, False])
    model = PopulationModel(
        theta=theta,
        omega=np.array(re_block["omega"], dtype=float),
        sigma_prop=err_block["sigma_prop"],
        sigma_add=err_block["sigma_add"],
        eta_names=tuple(re_block["names"]),
        estimable=tuple(estimable),
        omega_diagonal=bool(re_block.get("diagonal", True)),
        sigma_estimable=(bool(sig_est[0]), bool(sig_est[1])))
    prior = None
    if "prior" in doc:
        p = doc["prior"]
        prior = PriorSpec(
            theta_mean=dict(p.get("theta_mean", {})),
            theta_se=dict(p.get("theta_se", {})),
            omega_prior=(np.array(p["omega"], dtype=float)
                         if "omega" in p else None),
            nu=p.get("nu", 0.0),
            weights=dict(p.get("weights", {})))
    else:
        # no prior block: every weight defaults to 0 (uninformative)
        prior = PriorSpec(weights={"omega": 0.0})
    return ModelDefinition(name=doc.get("name", "unnamed"), model=model,
                           prior=prior, document=doc)


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2,
                      ensure_ascii=False) + "\n"


def save_model_def(definition: ModelDefinition,
                   path: Union[str, Path]) -> None:
    """Write the canonical serialization (sorted keys, 2-space indent)."""
    Path(path).write_text(canonical_json(definition.document),
                          newline="\n")


def model_def_to_dict(name: str, model: PopulationModel,
                      prior: Optional[PriorSpec] = None) -> dict:
    """Build a definition document from in-memory model objects."""
    structural = {}
    for field_name in ("cl_max", "tcl50", "gamma", "v_f", "ka"):
        entry = {"value": getattr(model.theta, field_name)}
        if field_name != "ka":
            entry["estimable"] = field_name in model.estimable
        else:
            entry["estimable"] = False
        structural[field_name] = entry
    doc = {
        "name": name,
        "structural": structural,
        "covariates": [
            {"name": e.covariate, "form": e.form,
             "coefficient": e.coefficient, "reference": e.reference,
             "estimable": f"cov:{e.covariate}" in model.estimable}
            for e in model.theta.cov_effects],
        "random_effects": {
            "names": list(model.eta_names),
            "omega": [[float(v) for v in row] for row in model.omega],
            "diagonal": model.omega_diagonal},
        "error": {"sigma_prop": model.sigma_prop,
                  "sigma_add": model.sigma_add,
                  "estimable": list(model.sigma_estimable)},
    }
    if prior is not None and (prior.theta_mean
                              or prior.omega_prior is not None):
        block: dict = {}
        if prior.theta_mean:
            block["theta_mean"] = dict(prior.theta_mean)
            block["theta_se"] = dict(prior.theta_se)
        if prior.omega_prior is not None:
            block["omega"] = [[float(v) for v in row]
                              for row in prior.omega_prior]
            block["nu"] = prior.nu
        if prior.weights:
            block["weights"] = dict(prior.weights)
        doc["prior"] = block
    return doc


# --------------------------------------------------------------------------
# Cohort summaries
# --------------------------------------------------------------------------

SUMMARY_HEADER = ("statistic", "value")


def summarize_cohort(cohort: Cohort) -> list[list]:
    """Demographic/clinical summary rows, CSV-ready."""
    rows: list[list] = []
    patients = cohort.patients
    rows.append(["n_patients", len(patients)])
    obs_counts = [len(p.usable_observations) for p in patients]
    rows.append(["n_observations", sum(obs_counts)])
    if patients:
        rows.append(["obs_per_patient_mean",
                     mean(obs_counts) if obs_counts else 0.0])
        rows.append(["obs_per_patient_min", min(obs_counts, default=0)])
        rows.append(["obs_per_patient_max", max(obs_counts, default=0)])
        for name in ("alb", "asat", "weight"):
            values = [cov.value(name) for p in patients
                      for cov in p.covariates.values()]
            if values:
                rows.append([f"{name}_mean", mean(values)])
                rows.append([f"{name}_sd",
                             pstdev(values) if len(values) > 1 else 0.0])
                rows.append([f"{name}_min", min(values)])
                rows.append([f"{name}_max", max(values)])
        pods = [pod_at(o.time) for p in patients
                for o in p.usable_observations]
        if pods:
            rows.append(["pod_mean", mean(pods)])
            rows.append(["pod_min", min(pods)])
            rows.append(["pod_max", max(pods)])
    return rows


def write_csv(path: Union[str, Path], header: Sequence[str],
              rows: Sequence[Sequence]) -> None:
    """CSV with '.' decimals and LF line endings."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_dataset_csv(cohort: Cohort, path: Union[str, Path]) -> None:
    """Emit a cohort back into the dataset CSV contract."""
    header = list(REQUIRED_COLUMNS) + ["TXDATE"]
    rows = []
    for p in cohort.patients:
        seen_pods: set[int] = set()
        for e in p.events:
            pod = pod_at(e.time)
            cov = p.covariates.get(pod)
            first = pod not in seen_pods
            seen_pods.add(pod)
            alb = f"{cov.alb:g}" if cov and first else ""
            asat = f"{cov.asat:g}" if cov and first else ""
            wt = f"{cov.weight:g}" if cov and first else ""
            if isinstance(e, Dose):
                rows.append([p.patient_id, f"{e.time:g}",
                             f"{e.amount:g}", "", 1, pod, alb, asat, wt,
                             p.transplant_date or ""])
            else:
                dv = "" if e.concentration is None \
                    else f"{e.concentration:.6g}"
                rows.append([p.patient_id, f"{e.time:g}", "", dv,
                             1 if e.mdv else 0, pod, alb, asat, wt,
                             p.transplant_date or ""])
    write_csv(path, header, rows)
