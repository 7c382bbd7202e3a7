"""HTTP API backing the interactive TDM console.

State model: one append-only JSON-lines journal per patient under the
data directory.  Each line is an audit entry (timestamped, versioned);
replaying the journal reconstructs the timeline exactly.  Mutations
require the caller's version token to match the current one (optimistic
concurrency, 409 on mismatch) and serialize per patient; reads never
mutate state.  MAP estimates are cached per (patient version, model id).

All numeric JSON fields are numbers, never strings.
"""

from __future__ import annotations

import json
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import __version__, pk
from .dataio import ModelDefinition, load_model_def
from .errors import TacroPKError
from .estimation import IndividualEstimate, map_estimate
from .evaluation import TargetRange, prediction_error, recommend_dose
from .pk import Dose, EventTimeline, Observation, make_events

_MODELS_DIR = Path(__file__).resolve().parent / "models"


class PatientCreate(BaseModel):
    patient_id: str = Field(min_length=1)
    covariates: dict[int, dict[str, float]]
    transplant_date: Optional[str] = None


class EventCreate(BaseModel):
    version: int
    type: str  # "dose" or "observation"
    time: float
    amount: Optional[float] = None
    concentration: Optional[float] = None
    covariates: Optional[dict[int, dict[str, float]]] = None


class WhatIfRequest(BaseModel):
    dose_mg: float
    interval_h: float
    start_time: float
    n_doses: int = 14
    model: Optional[str] = None


class PatientSession:
    """In-memory state rebuilt from one patient's journal."""

    def __init__(self, patient_id: str):
        self.patient_id = patient_id
        self.version = 0
        self.events: list = []
        self.covariates: dict[int, pk.CovariateState] = {}
        self.transplant_date: Optional[str] = None
        self.lock = threading.Lock()
        self.estimate_cache: dict[tuple[int, str], IndividualEstimate] = {}

    def timeline(self) -> EventTimeline:
        return EventTimeline(
            patient_id=self.patient_id,
            events=make_events(self.events),
            covariates=dict(self.covariates),
            transplant_date=self.transplant_date)

    def apply(self, entry: dict) -> None:
        """Replay one journal entry onto the session state."""
        action = entry["action"]
        data = entry["data"]
        if action == "create":
            self.transplant_date = data.get("transplant_date")
            self._merge_covariates(data.get("covariates", {}))
        elif action == "add-event":
            if data["type"] == "dose":
                self.events.append(Dose(time=data["time"],
                                        amount=data["amount"]))
            else:
                self.events.append(Observation(
                    time=data["time"],
                    concentration=data["concentration"]))
            self._merge_covariates(data.get("covariates") or {})
        else:
            raise TacroPKError(f"unknown journal action {action!r}")
        self.version = entry["version"]

    def _merge_covariates(self, block: dict) -> None:
        for pod_key, values in block.items():
            pod = int(pod_key)
            self.covariates[pod] = pk.CovariateState(
                pod=pod, alb=values["alb"], asat=values["asat"],
                weight=values["weight"])


class Store:
    """Journal-backed patient store."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, PatientSession] = {}
        self.lock = threading.Lock()
        for path in sorted(self.data_dir.glob("*.jsonl")):
            session = PatientSession(path.stem)
            for line in path.read_text().splitlines():
                session.apply(json.loads(line))
            self.sessions[session.patient_id] = session

    def _journal_path(self, patient_id: str) -> Path:
        return self.data_dir / f"{patient_id}.jsonl"

    def get(self, patient_id: str) -> PatientSession:
        session = self.sessions.get(patient_id)
        if session is None:
            raise HTTPException(404,
                                f"unknown patient {patient_id!r}")
        return session

    def append(self, session: PatientSession, action: str,
               data: dict) -> dict:
        """Append one audit entry and apply it. Caller holds the lock."""
        entry = {
            "version": session.version + 1,
            "action": action,
            "data": data,
            "at": datetime.now(timezone.utc).isoformat(),
        }
        with open(self._journal_path(session.patient_id), "a") as fh:
            fh.write(json.dumps(entry) + "\n")
        session.apply(entry)
        session.estimate_cache.clear()
        return entry

    def create(self, req: PatientCreate) -> PatientSession:
        with self.lock:
            if req.patient_id in self.sessions:
                raise HTTPException(
                    409, f"patient {req.patient_id!r} already exists")
            session = PatientSession(req.patient_id)
            self.sessions[req.patient_id] = session
        with session.lock:
            self.append(session, "create", {
                "covariates": {str(k): v
                               for k, v in req.covariates.items()},
                "transplant_date": req.transplant_date})
        return session


class ModelRegistry:
    def __init__(self, extra_dir: Optional[Path] = None):
        self.definitions: dict[str, ModelDefinition] = {}
        dirs = [_MODELS_DIR]
        if extra_dir is not None and extra_dir.is_dir():
            dirs.append(extra_dir)
        for d in dirs:
            for path in sorted(d.glob("*.json")):
                definition = load_model_def(path)
                self.definitions[definition.name] = definition

    def get(self, name: Optional[str]) -> ModelDefinition:
        if name is None:
            name = sorted(self.definitions)[0]
        if name not in self.definitions:
            raise HTTPException(404, f"unknown model {name!r}")
        return self.definitions[name]


def _estimate_for(session: PatientSession,
                  definition: ModelDefinition,
                  n_obs: Optional[int] = None) -> IndividualEstimate:
    timeline = session.timeline()
    total = len(timeline.usable_observations)
    if n_obs is None:
        n_obs = total
    if n_obs < 0 or n_obs > total:
        raise HTTPException(
            422, f"n_obs={n_obs} outside 0..{total}")
    key = (session.version, definition.name, n_obs)
    cached = session.estimate_cache.get(key)
    if cached is not None:
        return cached
    estimate = map_estimate(timeline, definition.model, n_obs)
    session.estimate_cache[key] = estimate
    return estimate


def _estimate_payload(session: PatientSession,
                      definition: ModelDefinition,
                      n_obs: Optional[int] = None) -> dict:
    timeline = session.timeline()
    estimate = _estimate_for(session, definition, n_obs)
    model = definition.model
    obs = timeline.usable_observations
    per_obs = []
    if obs:
        profile = pk.simulate(timeline, model.theta, estimate.eta_hat,
                              model.eta_names)
        conc_at = {p.time: p.concentration for p in profile.points}
        for i, o in enumerate(obs, start=1):
            ipred = conc_at[o.time]
            per_obs.append({
                "obs_index": i,
                "time": o.time,
                "pod": pk.pod_at(o.time),
                "obs": o.concentration,
                "ipred": ipred,
                "pe_percent": prediction_error(ipred, o.concentration),
            })
    return {
        "patient_id": session.patient_id,
        "version": session.version,
        "model": definition.name,
        "kind": "individual" if estimate.n_obs_used else "a-priori",
        "n_obs": estimate.n_obs_used,
        "eta_hat": list(estimate.eta_hat),
        "eta_names": list(model.eta_names),
        "converged": estimate.converged,
        "observations": per_obs,
    }


def _trajectory(timeline: EventTimeline, definition: ModelDefinition,
                estimate: IndividualEstimate,
                sample_times: list[float]) -> list[dict]:
    model = definition.model
    profile = pk.simulate(timeline, model.theta, estimate.eta_hat,
                          model.eta_names, sample_times=sample_times)
    wanted = set(sample_times)
    return [{"time": p.time, "pod": p.pod,
             "concentration": p.concentration}
            for p in profile.points if p.time in wanted]


def create_app(data_dir: Path,
               extra_models_dir: Optional[Path] = None,
               static_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="tacropk", version=__version__)
    store = Store(data_dir)
    registry = ModelRegistry(extra_models_dir)
    target = TargetRange()

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.get("/api/models")
    def models() -> dict:
        return {"models": [
            {"name": d.name,
             "eta_names": list(d.model.eta_names),
             "structural": {
                 "cl_max": d.model.theta.cl_max,
                 "tcl50": d.model.theta.tcl50,
                 "gamma": d.model.theta.gamma,
                 "v_f": d.model.theta.v_f,
                 "ka": d.model.theta.ka}}
            for d in registry.definitions.values()]}

    @app.post("/api/patients", status_code=201)
    def create_patient(req: PatientCreate) -> dict:
        try:
            session = store.create(req)
        except (TacroPKError, ValueError) as exc:
            raise HTTPException(422, str(exc))
        return {"patient_id": session.patient_id,
                "version": session.version}

    @app.get("/api/patients/{patient_id}")
    def get_patient(patient_id: str) -> dict:
        session = store.get(patient_id)
        timeline = session.timeline()
        return {
            "patient_id": patient_id,
            "version": session.version,
            "transplant_date": session.transplant_date,
            "doses": [{"time": d.time, "amount": d.amount}
                      for d in timeline.doses],
            "observations": [
                {"time": o.time, "concentration": o.concentration}
                for o in timeline.usable_observations],
            "covariates": {
                str(pod): {"alb": c.alb, "asat": c.asat,
                           "weight": c.weight}
                for pod, c in sorted(session.covariates.items())},
        }

    @app.post("/api/patients/{patient_id}/events", status_code=201)
    def add_event(patient_id: str, req: EventCreate) -> dict:
        session = store.get(patient_id)
        with session.lock:
            if req.version != session.version:
                raise HTTPException(
                    409, f"version {req.version} is stale; current is "
                         f"{session.version}")
            if req.type not in ("dose", "observation"):
                raise HTTPException(422, "type must be 'dose' or "
                                         "'observation'")
            data: dict = {"type": req.type, "time": req.time}
            try:
                if req.type == "dose":
                    if req.amount is None:
                        raise HTTPException(422,
                                            "dose requires 'amount'")
                    Dose(time=req.time, amount=req.amount)
                    data["amount"] = req.amount
                else:
                    if req.concentration is None:
                        raise HTTPException(
                            422, "observation requires 'concentration'")
                    Observation(time=req.time,
                                concentration=req.concentration)
                    data["concentration"] = req.concentration
                if req.covariates:
                    data["covariates"] = {
                        str(k): v for k, v in req.covariates.items()}
                # dry-run the full timeline invariants before committing
                trial = PatientSession(patient_id)
                trial.events = list(session.events)
                trial.covariates = dict(session.covariates)
                trial.apply({"version": session.version + 1,
                             "action": "add-event", "data": data})
                trial.timeline()
            except TacroPKError as exc:
                raise HTTPException(422, str(exc))
            entry = store.append(session, "add-event", data)
        return {"patient_id": patient_id,
                "version": session.version,
                "at": entry["at"]}

    @app.get("/api/patients/{patient_id}/estimate")
    def estimate(patient_id: str, model: Optional[str] = None,
                 n_obs: Optional[int] = None) -> dict:
        session = store.get(patient_id)
        definition = registry.get(model)
        try:
            return _estimate_payload(session, definition, n_obs)
        except TacroPKError as exc:
            raise HTTPException(422, str(exc))

    @app.post("/api/patients/{patient_id}/whatif")
    def whatif(patient_id: str, req: WhatIfRequest) -> dict:
        session = store.get(patient_id)
        definition = registry.get(req.model)
        if req.dose_mg <= 0 or req.interval_h <= 0 or req.n_doses < 1:
            raise HTTPException(422, "dose_mg, interval_h must be > 0 "
                                     "and n_doses >= 1")
        timeline = session.timeline()
        try:
            estimate = _estimate_for(session, definition)
            # hypothetical regimen: keep history before start_time,
            # append the proposed schedule
            kept = [e for e in timeline.events
                    if not (isinstance(e, Dose)
                            and e.time >= req.start_time)]
            hypo_doses = [Dose(time=req.start_time + i * req.interval_h,
                               amount=req.dose_mg)
                          for i in range(req.n_doses)]
            troughs = [d.time + req.interval_h for d in hypo_doses]
            hypo = EventTimeline(
                patient_id=patient_id,
                events=make_events(kept + hypo_doses),
                covariates=dict(session.covariates),
                transplant_date=session.transplant_date)
            trajectory = _trajectory(hypo, definition, estimate,
                                     troughs)
            # maintenance recommendation: scale the proposed dose so the
            # regimen's settled (last) trough hits the band midpoint
            recommended = recommend_dose(
                hypo, definition.model, estimate, target, troughs[-1])
        except TacroPKError as exc:
            raise HTTPException(422, str(exc))
        for point in trajectory:
            lo, hi = target.band(point["pod"])
            point["band_low"] = lo
            point["band_high"] = hi
        return {
            "patient_id": patient_id,
            "version": session.version,
            "model": definition.name,
            "n_obs": estimate.n_obs_used,
            "trajectory": trajectory,
            "recommended_dose_mg": recommended,
        }

    @app.get("/api/patients/{patient_id}/forecast")
    def forecast(patient_id: str, horizon_h: float = 24.0,
                 model: Optional[str] = None) -> dict:
        session = store.get(patient_id)
        definition = registry.get(model)
        timeline = session.timeline()
        if not timeline.events:
            raise HTTPException(422, "patient has no events to "
                                     "forecast from")
        t_next = timeline.events[-1].time + horizon_h
        try:
            estimate = _estimate_for(session, definition)
            zero = IndividualEstimate(
                patient_id=patient_id,
                eta_hat=tuple(0.0 for _ in definition.model.eta_names),
                n_obs_used=0, objective=0.0, converged=True)
            apriori = _trajectory(timeline, definition, zero, [t_next])
            bayes = _trajectory(timeline, definition, estimate,
                                [t_next])
        except TacroPKError as exc:
            raise HTTPException(422, str(exc))
        return {
            "patient_id": patient_id,
            "version": session.version,
            "model": definition.name,
            "n_obs": estimate.n_obs_used,
            "time": t_next,
            "a_priori": apriori[0]["concentration"],
            "bayesian": bayes[0]["concentration"],
            "band": list(target.band(pk.pod_at(t_next))),
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir),
                                   html=True), name="console")

    return app
