// Console wiring: forms on the left, chart on the right. Every number
// on screen is read from an API payload; the client only validates raw
// form input before sending and re-renders from the latest responses.

import * as api from './api.js';
import { renderChart } from './chart.js';
import {
  PeBadge,
  TimelineViewModel,
  WhatIfOverlay,
  buildTimeline,
  buildWhatIfOverlay,
  forecastBadge,
  validateDoseInput,
  validateObservationInput,
} from './viewmodel.js';
import type { EstimatePayload, PatientState } from './types.js';

interface AppState {
  patient: PatientState | null;
  model: string | null;
  badges: PeBadge[];
  overlay: WhatIfOverlay | null;
}

const state: AppState = {
  patient: null,
  model: null,
  badges: [],
  overlay: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function input(id: string): HTMLInputElement {
  return el<HTMLInputElement>(id);
}

function setStatus(message: string, isError = false): void {
  const node = el<HTMLElement>('status');
  node.textContent = message;
  node.className = isError ? 'status error' : 'status';
}

function showFieldErrors(prefix: string,
                         errors: Record<string, string>): void {
  for (const field of ['time', 'concentration', 'amount']) {
    const node = document.getElementById(`${prefix}-${field}-error`);
    if (node) node.textContent = errors[field] ?? '';
  }
}

async function refresh(): Promise<void> {
  if (!state.patient || !state.model) return;
  const id = state.patient.patient_id;
  state.patient = await api.getPatient(id);
  const estimate = await api.getEstimate(id, state.model);
  let apriori: EstimatePayload | null = null;
  if (estimate.n_obs > 0) {
    apriori = await api.getEstimate(id, state.model, 0);
  }
  // band ribbons come from what-if trajectories (which carry the API's
  // band values); the base chart shows series only
  const vm: TimelineViewModel = buildTimeline(
    state.patient, estimate, apriori, state.badges);
  el<HTMLElement>('chart').innerHTML = renderChart(vm, state.overlay);
  el<HTMLElement>('map-provenance').textContent =
    estimate.n_obs === 0
      ? 'a priori (no observations used)'
      : `individualized on ${estimate.n_obs} observation(s)`;
}

async function onCreatePatient(): Promise<void> {
  const id = input('patient-id').value.trim();
  if (!id) {
    setStatus('patient id is required', true);
    return;
  }
  const alb = Number(input('cov-alb').value || '32');
  const asat = Number(input('cov-asat').value || '50');
  const weight = Number(input('cov-weight').value || '75');
  const pods: Record<string, { alb: number; asat: number;
                               weight: number }> = {};
  // seed a 4-week covariate record; daily labs can refine it later
  for (let pod = 1; pod <= 28; pod += 1) {
    pods[String(pod)] = { alb, asat, weight };
  }
  try {
    await api.createPatient(id, pods);
    state.patient = await api.getPatient(id);
    state.badges = [];
    state.overlay = null;
    setStatus(`patient ${id} created`);
    await refresh();
  } catch (err) {
    setStatus(String(err), true);
  }
}

async function onLoadPatient(): Promise<void> {
  const id = input('patient-id').value.trim();
  try {
    state.patient = await api.getPatient(id);
    state.badges = [];
    state.overlay = null;
    setStatus(`patient ${id} loaded`);
    await refresh();
  } catch (err) {
    setStatus(String(err), true);
  }
}

async function onAddDose(): Promise<void> {
  if (!state.patient) return;
  const time = input('dose-time').value;
  const amount = input('dose-amount').value;
  const check = validateDoseInput(time, amount);
  showFieldErrors('dose', check.errors);
  if (!check.ok) return;
  try {
    await api.addDose(state.patient.patient_id, state.patient.version,
                      Number(time), Number(amount));
    state.overlay = null;
    await refresh();
    setStatus('dose recorded');
  } catch (err) {
    if (err instanceof api.ApiError && err.status === 409) {
      setStatus('patient changed elsewhere; reloading', true);
      await onLoadPatient();
      return;
    }
    setStatus(String(err), true);
  }
}

async function onAddObservation(): Promise<void> {
  if (!state.patient || !state.model) return;
  const time = input('obs-time').value;
  const conc = input('obs-concentration').value;
  const check = validateObservationInput(time, conc);
  showFieldErrors('obs', check.errors);
  if (!check.ok) return;   // malformed input: no request is sent
  const id = state.patient.patient_id;
  try {
    // the forecast badge uses the estimate available before this
    // observation existed: condition on the prior observation count
    const before = state.patient.observations.length;
    await api.addObservation(id, state.patient.version,
                             Number(time), Number(conc));
    const stepped = await api.getEstimate(id, state.model, before);
    const badge = forecastBadge(stepped, before + 1);
    if (badge) state.badges.push(badge);
    state.overlay = null;
    await refresh();
    setStatus('observation recorded');
  } catch (err) {
    if (err instanceof api.ApiError && err.status === 409) {
      setStatus('patient changed elsewhere; reloading', true);
      await onLoadPatient();
      return;
    }
    setStatus(String(err), true);
  }
}

async function onWhatIf(): Promise<void> {
  if (!state.patient || !state.model) return;
  const dose = Number(input('whatif-dose').value);
  const interval = Number(input('whatif-interval').value);
  const start = Number(input('whatif-start').value);
  if (!(dose > 0) || !(interval > 0) || !(start >= 0)) {
    setStatus('what-if needs positive dose/interval and a start time',
              true);
    return;
  }
  try {
    const payload = await api.whatIf(state.patient.patient_id, {
      dose_mg: dose,
      interval_h: interval,
      start_time: start,
      model: state.model,
    });
    state.overlay = buildWhatIfOverlay(payload);
    const chip = el<HTMLElement>('recommended-dose');
    chip.textContent = `${payload.recommended_dose_mg} mg`;
    chip.dataset.doseMg = String(payload.recommended_dose_mg);
    await refresh();
    setStatus('what-if trajectory updated');
  } catch (err) {
    setStatus(String(err), true);
  }
}

async function init(): Promise<void> {
  const models = await api.listModels();
  const select = el<HTMLSelectElement>('model-select');
  for (const m of models) {
    const option = document.createElement('option');
    option.value = m.name;
    option.textContent = m.name;
    select.appendChild(option);
  }
  state.model = models.length > 0 ? models[0].name : null;
  select.addEventListener('change', () => {
    state.model = select.value;
    state.badges = [];
    void refresh();
  });
  el('create-patient').addEventListener('click',
                                        () => void onCreatePatient());
  el('load-patient').addEventListener('click',
                                      () => void onLoadPatient());
  el('add-dose').addEventListener('click', () => void onAddDose());
  el('add-observation').addEventListener(
    'click', () => void onAddObservation());
  el('run-whatif').addEventListener('click', () => void onWhatIf());
  setStatus('ready');
}

if (typeof document !== 'undefined' &&
    document.getElementById('chart')) {
  void init();
}
