// SVG renderer for the timeline view model. The chart is generated as
// markup with data-* attributes mirroring the series model, so tests
// can assert on the displayed numbers without pixel comparison.

import type {
  BandSegment,
  SeriesPoint,
  TimelineViewModel,
  WhatIfOverlay,
} from './viewmodel.js';

const WIDTH = 900;
const HEIGHT = 360;
const MARGIN = { top: 16, right: 16, bottom: 28, left: 44 };

interface Scale {
  (v: number): number;
}

function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v: number) => r0 + ((v - d0) / span) * (r1 - r0);
}

function extent(values: number[], fallback: [number, number]):
    [number, number] {
  if (values.length === 0) return fallback;
  return [Math.min(...values), Math.max(...values)];
}

function esc(s: string): string {
  return s.replace(/&/g, '&amp;').replace(/</g, '&lt;')
    .replace(/"/g, '&quot;');
}

function pointsAttr(points: SeriesPoint[]): string {
  return esc(JSON.stringify(points.map(p => [p.time, p.value])));
}

function polyline(points: SeriesPoint[], cls: string, name: string,
                  x: Scale, y: Scale): string {
  if (points.length === 0) return '';
  const coords = points
    .map(p => `${x(p.time).toFixed(1)},${y(p.value).toFixed(1)}`)
    .join(' ');
  return `<polyline class="${cls}" data-series="${name}" `
    + `data-points="${pointsAttr(points)}" fill="none" `
    + `points="${coords}"/>`;
}

function markers(points: SeriesPoint[], cls: string, name: string,
                 x: Scale, y: Scale): string {
  return points.map(p =>
    `<circle class="${cls}" data-series="${name}" `
    + `data-time="${p.time}" data-value="${p.value}" `
    + `cx="${x(p.time).toFixed(1)}" cy="${y(p.value).toFixed(1)}" `
    + `r="4"/>`).join('');
}

function bandRects(segments: BandSegment[], x: Scale, y: Scale): string {
  return segments.map(s => {
    const x0 = x(s.fromTime);
    const x1 = x(s.toTime);
    const yTop = y(s.high);
    const yBot = y(s.low);
    return `<rect class="band" data-series="target-band" `
      + `data-from="${s.fromTime}" data-to="${s.toTime}" `
      + `data-low="${s.low}" data-high="${s.high}" `
      + `x="${x0.toFixed(1)}" y="${yTop.toFixed(1)}" `
      + `width="${Math.max(0, x1 - x0).toFixed(1)}" `
      + `height="${Math.max(0, yBot - yTop).toFixed(1)}"/>`;
  }).join('');
}

export function renderChart(
  vm: TimelineViewModel, overlay: WhatIfOverlay | null = null,
): string {
  const allPoints = [
    ...vm.observed, ...vm.ipredCurve, ...vm.aprioriCurve,
    ...(overlay ? overlay.points : []),
  ];
  const allBands = [
    ...vm.bandSegments, ...(overlay ? overlay.bandSegments : []),
  ];
  const times = [
    ...allPoints.map(p => p.time),
    ...allBands.flatMap(s => [s.fromTime, s.toTime]),
    ...vm.doseMarkers.map(d => d.time),
  ];
  const values = [
    ...allPoints.map(p => p.value),
    ...allBands.flatMap(s => [s.low, s.high]),
  ];
  const [t0, t1] = extent(times, [0, 24]);
  const [v0, v1] = extent(values, [0, 15]);
  const x = linearScale(t0, t1, MARGIN.left, WIDTH - MARGIN.right);
  const y = linearScale(Math.min(0, v0), v1 * 1.05,
                        HEIGHT - MARGIN.bottom, MARGIN.top);

  const doseTicks = vm.doseMarkers.map(d =>
    `<line class="dose" data-series="doses" data-time="${d.time}" `
    + `data-amount="${d.amount}" x1="${x(d.time).toFixed(1)}" `
    + `x2="${x(d.time).toFixed(1)}" `
    + `y1="${(HEIGHT - MARGIN.bottom).toFixed(1)}" `
    + `y2="${(HEIGHT - MARGIN.bottom - 8).toFixed(1)}"/>`).join('');

  const badgeLabels = vm.badges.map(b =>
    `<text class="badge" data-series="pe-badges" `
    + `data-obs-index="${b.obsIndex}" data-n-obs="${b.nObs}" `
    + `data-pe-percent="${b.pePercent}" `
    + `x="${x(b.time).toFixed(1)}" `
    + `y="${(y(b.observed) - 10).toFixed(1)}">`
    + `${b.pePercent.toFixed(1)}%</text>`).join('');

  const parts = [
    `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" data-n-obs="${vm.nObs}" `
    + `data-converged="${vm.converged}" role="img">`,
    bandRects(allBands, x, y),
    doseTicks,
    polyline(vm.aprioriCurve, 'apriori', 'a-priori', x, y),
    polyline(vm.ipredCurve, 'ipred', 'ipred', x, y),
    overlay
      ? polyline(overlay.points, 'whatif', 'what-if', x, y)
      : '',
    markers(vm.observed, 'obs', 'observed', x, y),
    badgeLabels,
    '</svg>',
  ];
  return parts.join('');
}
