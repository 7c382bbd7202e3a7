// Thin fetch client for the tdm-service JSON API. All numerical truth
// lives on the server; these functions only move payloads.

import type {
  EstimatePayload,
  ForecastPayload,
  ModelInfo,
  PatientState,
  PodCovariates,
  WhatIfPayload,
} from './types.js';

// Same-origin by default (the service ships the built assets); tests
// point this at a spawned server.
let apiBase = '';

export function setApiBase(base: string): void {
  apiBase = base.replace(/\/$/, '');
}

export class ApiError extends Error {
  status: number;
  detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.status = status;
    this.detail = detail;
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(`${apiBase}${path}`, init);
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && body.detail !== undefined) {
        detail = typeof body.detail === 'string'
          ? body.detail : JSON.stringify(body.detail);
      }
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return res.json() as Promise<T>;
}

function post<T>(path: string, body: unknown): Promise<T> {
  return request<T>(path, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(body),
  });
}

export function health(): Promise<{ status: string; version: string }> {
  return request('/api/health');
}

export function listModels(): Promise<ModelInfo[]> {
  return request('/api/models');
}

export function createPatient(
  patientId: string,
  covariates: Record<string, PodCovariates>,
  transplantDate?: string,
): Promise<{ patient_id: string; version: number }> {
  return post('/api/patients', {
    patient_id: patientId,
    covariates,
    transplant_date: transplantDate ?? null,
  });
}

export function getPatient(patientId: string): Promise<PatientState> {
  return request(`/api/patients/${encodeURIComponent(patientId)}`);
}

export function addDose(
  patientId: string, version: number, time: number, amount: number,
): Promise<{ patient_id: string; version: number; at: string }> {
  return post(`/api/patients/${encodeURIComponent(patientId)}/events`, {
    version, type: 'dose', time, amount,
  });
}

export function addObservation(
  patientId: string, version: number, time: number,
  concentration: number,
  covariates?: Record<string, PodCovariates>,
): Promise<{ patient_id: string; version: number; at: string }> {
  return post(`/api/patients/${encodeURIComponent(patientId)}/events`, {
    version, type: 'observation', time, concentration,
    covariates: covariates ?? null,
  });
}

export function getEstimate(
  patientId: string, model?: string, nObs?: number,
): Promise<EstimatePayload> {
  const params = new URLSearchParams();
  if (model !== undefined) params.set('model', model);
  if (nObs !== undefined) params.set('n_obs', String(nObs));
  const query = params.toString();
  return request(
    `/api/patients/${encodeURIComponent(patientId)}/estimate`
    + (query ? `?${query}` : ''));
}

export function whatIf(
  patientId: string,
  body: {
    dose_mg: number; interval_h: number; start_time: number;
    n_doses?: number; model?: string;
  },
): Promise<WhatIfPayload> {
  return post(
    `/api/patients/${encodeURIComponent(patientId)}/whatif`, body);
}

export function getForecast(
  patientId: string, horizonH = 24.0, model?: string,
): Promise<ForecastPayload> {
  const params = new URLSearchParams({ horizon_h: String(horizonH) });
  if (model !== undefined) params.set('model', model);
  return request(
    `/api/patients/${encodeURIComponent(patientId)}/forecast`
    + `?${params.toString()}`);
}
