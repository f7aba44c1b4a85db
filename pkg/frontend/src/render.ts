/** SVG snippets for tours, routes, item bars, objective scatter and HV curves.
 *
 * Pure string builders so they are testable without a DOM.  Every plotted
 * objective point carries a `data-objectives` attribute naming the service
 * response values it came from — the UI never fabricates objective values.
 */

import type { FrontEntry } from "./api";

const W = 420;
const H = 420;
const PAD = 30;

function sx(x: number): number {
  return PAD + x * (W - 2 * PAD);
}

function sy(y: number): number {
  return H - PAD - y * (H - 2 * PAD);
}

export function renderTour(coords: number[][], tour: number[]): string {
  const pts = tour.map((i) => `${sx(coords[i][0])},${sy(coords[i][1])}`);
  pts.push(pts[0]);
  const dots = coords
    .map((c, i) => `<circle cx="${sx(c[0])}" cy="${sy(c[1])}" r="4" class="node" data-node="${i}"/>`)
    .join("");
  return `<svg viewBox="0 0 ${W} ${H}"><polyline points="${pts.join(" ")}" class="tour" fill="none"/>${dots}</svg>`;
}

export function renderRoutes(depot: number[], coords: number[][], routes: number[][]): string {
  const palette = ["#2b6cb0", "#c05621", "#2f855a", "#6b46c1", "#b83280", "#4a5568"];
  const lines = routes
    .map((route, r) => {
      const pts = [
        `${sx(depot[0])},${sy(depot[1])}`,
        ...route.map((i) => `${sx(coords[i][0])},${sy(coords[i][1])}`),
        `${sx(depot[0])},${sy(depot[1])}`,
      ];
      return `<polyline points="${pts.join(" ")}" fill="none" stroke="${palette[r % palette.length]}" class="route" data-route="${r}"/>`;
    })
    .join("");
  const dots = coords
    .map((c, i) => `<circle cx="${sx(c[0])}" cy="${sy(c[1])}" r="3.5" class="node" data-node="${i}"/>`)
    .join("");
  const depotMark = `<rect x="${sx(depot[0]) - 5}" y="${sy(depot[1]) - 5}" width="10" height="10" class="depot"/>`;
  return `<svg viewBox="0 0 ${W} ${H}">${lines}${dots}${depotMark}</svg>`;
}

export function renderItems(weights: number[], selected: number[]): string {
  const chosen = new Set(selected);
  const bw = (W - 2 * PAD) / weights.length;
  const bars = weights
    .map((w, i) => {
      const h = w * (H - 2 * PAD);
      const cls = chosen.has(i) ? "item selected" : "item";
      return `<rect x="${PAD + i * bw + 1}" y="${H - PAD - h}" width="${bw - 2}" height="${h}" class="${cls}" data-item="${i}"/>`;
    })
    .join("");
  return `<svg viewBox="0 0 ${W} ${H}">${bars}</svg>`;
}

export interface ScatterOptions {
  front?: FrontEntry[];
  current?: number[] | null;
  historyPoints?: number[][];
  maximize?: boolean;
}

/** Objective-space view: cached front, history trail and the current point.
 * Every marker's data-objectives attribute is the originating response value. */
export function renderObjectiveScatter(opts: ScatterOptions): string {
  const pts: number[][] = [
    ...(opts.front ?? []).map((e) => e.objectives),
    ...(opts.historyPoints ?? []),
    ...(opts.current ? [opts.current] : []),
  ];
  if (pts.length === 0) {
    return `<svg viewBox="0 0 ${W} ${H}"><text x="${W / 2}" y="${H / 2}" text-anchor="middle">no data yet</text></svg>`;
  }
  const lo = [Math.min(...pts.map((p) => p[0])), Math.min(...pts.map((p) => p[1]))];
  const hi = [Math.max(...pts.map((p) => p[0])), Math.max(...pts.map((p) => p[1]))];
  const span = [Math.max(hi[0] - lo[0], 1e-9), Math.max(hi[1] - lo[1], 1e-9)];
  const px = (p: number[]) => sx((p[0] - lo[0]) / span[0]);
  const py = (p: number[]) => sy((p[1] - lo[1]) / span[1]);
  const tag = (p: number[]) => `data-objectives="${p.join(",")}"`;

  const front = (opts.front ?? [])
    .map((e) => `<circle cx="${px(e.objectives)}" cy="${py(e.objectives)}" r="3" class="front" ${tag(e.objectives)} data-lambda="${e.lambda.join(",")}"/>`)
    .join("");
  const trail = (opts.historyPoints ?? [])
    .map((p) => `<circle cx="${px(p)}" cy="${py(p)}" r="2.5" class="history" ${tag(p)}/>`)
    .join("");
  const cur = opts.current
    ? `<circle cx="${px(opts.current)}" cy="${py(opts.current)}" r="6" class="current" ${tag(opts.current)}/>`
    : "";
  return `<svg viewBox="0 0 ${W} ${H}">${front}${trail}${cur}</svg>`;
}

/** Adaptation progress: the polyline is exactly the service's hv_curve array. */
export function renderHvCurve(curve: number[]): string {
  if (curve.length === 0) {
    return `<svg viewBox="0 0 ${W} ${H}"></svg>`;
  }
  const lo = Math.min(...curve);
  const hi = Math.max(...curve);
  const span = Math.max(hi - lo, 1e-12);
  const pts = curve.map((v, i) => {
    const x = sx(curve.length === 1 ? 0.5 : i / (curve.length - 1));
    const y = sy((v - lo) / span);
    return `${x},${y}`;
  });
  return `<svg viewBox="0 0 ${W} ${H}" data-curve="${curve.join(",")}"><polyline points="${pts.join(" ")}" fill="none" class="hv-curve"/></svg>`;
}
