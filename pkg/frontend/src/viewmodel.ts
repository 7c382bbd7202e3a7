// Declarative series model for the timeline chart. Builders here only
// rearrange API payloads into plottable series; no pharmacokinetic
// quantity is ever computed client-side.

import type {
  EstimatePayload,
  PatientState,
  TrajectoryPoint,
  WhatIfPayload,
} from './types.js';

export interface SeriesPoint {
  time: number;
  value: number;
}

export interface BandSegment {
  fromTime: number;
  toTime: number;
  low: number;
  high: number;
}

export interface DoseMarker {
  time: number;
  amount: number;
}

export interface PeBadge {
  obsIndex: number;
  time: number;
  nObs: number;
  observed: number;
  predicted: number;
  pePercent: number;
}

export interface TimelineViewModel {
  observed: SeriesPoint[];
  ipredCurve: SeriesPoint[];
  aprioriCurve: SeriesPoint[];
  bandSegments: BandSegment[];
  doseMarkers: DoseMarker[];
  badges: PeBadge[];
  nObs: number;
  converged: boolean;
}

export interface WhatIfOverlay {
  points: SeriesPoint[];
  bandSegments: BandSegment[];
  recommendedDoseMg: number;
}

const HOURS_PER_DAY = 24;

function podStartTime(pod: number): number {
  return (pod - 1) * HOURS_PER_DAY;
}

/**
 * Group trajectory points into contiguous target-band segments. The
 * band values come verbatim from the API; this only decides where one
 * colored ribbon ends and the next begins. A band change between PODs
 * is rendered exactly at the day boundary of the first point carrying
 * the new band, so the early/late switch after post-operative day 28
 * lands at t = 28 * 24 h regardless of where the samples fall.
 */
export function buildBandSegments(
  points: TrajectoryPoint[],
): BandSegment[] {
  if (points.length === 0) return [];
  const ordered = [...points].sort((a, b) => a.time - b.time);
  const segments: BandSegment[] = [];
  let current: BandSegment = {
    fromTime: ordered[0].time,
    toTime: ordered[0].time,
    low: ordered[0].band_low,
    high: ordered[0].band_high,
  };
  for (const p of ordered.slice(1)) {
    if (p.band_low === current.low && p.band_high === current.high) {
      current.toTime = p.time;
      continue;
    }
    const boundary = podStartTime(p.pod);
    current.toTime = boundary;
    segments.push(current);
    current = {
      fromTime: boundary,
      toTime: p.time,
      low: p.band_low,
      high: p.band_high,
    };
  }
  segments.push(current);
  return segments;
}

/** Forecast badge for one observation: the prediction error the model
 *  reported for observation `obsIndex` when conditioned on the payload's
 *  `n_obs` earlier observations. Returns null when the payload does not
 *  cover that observation. All numbers are passed through unchanged. */
export function forecastBadge(
  estimate: EstimatePayload, obsIndex: number,
): PeBadge | null {
  const row = estimate.observations.find(o => o.obs_index === obsIndex);
  if (!row) return null;
  return {
    obsIndex: row.obs_index,
    time: row.time,
    nObs: estimate.n_obs,
    observed: row.obs,
    predicted: row.ipred,
    pePercent: row.pe_percent,
  };
}

export function buildTimeline(
  patient: PatientState,
  estimate: EstimatePayload,
  apriori: EstimatePayload | null,
  badges: PeBadge[],
  bandPoints: TrajectoryPoint[] = [],
): TimelineViewModel {
  const observed = estimate.observations.map(
    o => ({ time: o.time, value: o.obs }));
  const ipredCurve = estimate.observations.map(
    o => ({ time: o.time, value: o.ipred }));
  const aprioriCurve = (apriori ? apriori.observations : []).map(
    o => ({ time: o.time, value: o.ipred }));
  return {
    observed,
    ipredCurve,
    aprioriCurve,
    bandSegments: buildBandSegments(bandPoints),
    doseMarkers: patient.doses.map(
      d => ({ time: d.time, amount: d.amount })),
    badges,
    nObs: estimate.n_obs,
    converged: estimate.converged,
  };
}

export function buildWhatIfOverlay(payload: WhatIfPayload): WhatIfOverlay {
  return {
    points: payload.trajectory.map(
      p => ({ time: p.time, value: p.concentration })),
    bandSegments: buildBandSegments(payload.trajectory),
    recommendedDoseMg: payload.recommended_dose_mg,
  };
}

export interface ValidationResult {
  ok: boolean;
  errors: Record<string, string>;
}

/** Client-side form checks that run before any request is sent. These
 *  guard obviously malformed input; the server remains the authority
 *  on timeline invariants. */
export function validateObservationInput(
  time: string, concentration: string,
): ValidationResult {
  const errors: Record<string, string> = {};
  const t = Number(time);
  const c = Number(concentration);
  if (time.trim() === '' || !Number.isFinite(t) || t < 0) {
    errors.time = 'time must be a non-negative number of hours';
  }
  if (concentration.trim() === '' || !Number.isFinite(c) || c <= 0) {
    errors.concentration = 'concentration must be positive';
  }
  return { ok: Object.keys(errors).length === 0, errors };
}

export function validateDoseInput(
  time: string, amount: string,
): ValidationResult {
  const errors: Record<string, string> = {};
  const t = Number(time);
  const a = Number(amount);
  if (time.trim() === '' || !Number.isFinite(t) || t < 0) {
    errors.time = 'time must be a non-negative number of hours';
  }
  if (amount.trim() === '' || !Number.isFinite(a) || a <= 0) {
    errors.amount = 'dose amount must be positive';
  }
  return { ok: Object.keys(errors).length === 0, errors };
}
