// Shapes of the tdm-service JSON payloads the console consumes.
// Every number displayed in the UI comes from one of these; the client
// never recomputes concentrations, prediction errors, or doses.

export interface ModelInfo {
  name: string;
  eta_names: string[];
  structural: Record<string, number>;
}

export interface PodCovariates {
  alb: number;
  asat: number;
  weight: number;
}

export interface PatientState {
  patient_id: string;
  version: number;
  transplant_date: string | null;
  doses: { time: number; amount: number }[];
  observations: { time: number; concentration: number }[];
  covariates: Record<string, PodCovariates>;
}

export interface EstimateObservation {
  obs_index: number;
  time: number;
  pod: number;
  obs: number;
  ipred: number;
  pe_percent: number;
}

export interface EstimatePayload {
  patient_id: string;
  version: number;
  model: string;
  kind: 'a-priori' | 'individual';
  n_obs: number;
  eta_hat: number[];
  eta_names: string[];
  converged: boolean;
  observations: EstimateObservation[];
}

export interface TrajectoryPoint {
  time: number;
  pod: number;
  concentration: number;
  band_low: number;
  band_high: number;
}

export interface WhatIfPayload {
  patient_id: string;
  version: number;
  model: string;
  n_obs: number;
  trajectory: TrajectoryPoint[];
  recommended_dose_mg: number;
}

export interface ForecastPayload {
  patient_id: string;
  version: number;
  model: string;
  n_obs: number;
  time: number;
  a_priori: number;
  bayesian: number;
  band: [number, number];
}
