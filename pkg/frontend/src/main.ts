/** DOM wiring for the preference explorer (served by `moco serve --static`). */

import { ExplorerClient } from "./api";
import { fromSlider, fromSliders, fromTernary, isValidPreference } from "./simplex";
import { SessionState } from "./state";
import { renderHvCurve, renderItems, renderObjectiveScatter, renderRoutes, renderTour } from "./render";

const state = new SessionState();
const client = new ExplorerClient("");
let instanceRecord: Record<string, unknown> | null = null;
let ternaryPoint: [number, number] = [0.5, Math.sqrt(3) / 6]; // centroid

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function banner(message: string | null): void {
  const b = el<HTMLDivElement>("banner");
  b.textContent = message ?? "";
  b.style.display = message ? "block" : "none";
}

function currentPreference(): number[] {
  if (state.m === 2) {
    const slider = document.querySelector<HTMLInputElement>("input.pref");
    return fromSlider(slider ? parseFloat(slider.value) : 0.5);
  }
  if (state.m === 3) {
    return fromTernary(ternaryPoint[0], ternaryPoint[1]);
  }
  const sliders = Array.from(document.querySelectorAll<HTMLInputElement>("input.pref"));
  return fromSliders(sliders.map((s) => parseFloat(s.value)));
}

/** Rebuild the preference control for the registered instance's m. */
function buildControls(): void {
  const host = el<HTMLDivElement>("pref-controls");
  host.innerHTML = "";
  if (state.m === 2) {
    host.innerHTML =
      `<label>preference λ₁ <input class="pref" type="range" min="0" max="1" step="0.001" value="0.5"/></label>`;
  } else if (state.m === 3) {
    const h = Math.sqrt(3) / 2;
    host.innerHTML =
      `<svg id="ternary" viewBox="-0.05 -0.05 1.1 ${h + 0.1}" style="width:240px;height:220px">` +
      `<polygon points="0,${h} 1,${h} 0.5,0" fill="#edf2f7" stroke="#4a5568" stroke-width="0.01"/>` +
      `<circle id="ternary-marker" cx="0.5" cy="${h - Math.sqrt(3) / 6}" r="0.03" fill="#c53030"/></svg>` +
      `<div>click inside the triangle to set λ</div>`;
    el("ternary").addEventListener("click", (ev) => {
      const svg = el<HTMLElement>("ternary") as unknown as SVGSVGElement;
      const rect = svg.getBoundingClientRect();
      const x = ((ev as MouseEvent).clientX - rect.left) / rect.width * 1.1 - 0.05;
      const yTop = ((ev as MouseEvent).clientY - rect.top) / rect.height * (h + 0.1) - 0.05;
      ternaryPoint = [x, h - yTop]; // svg y is flipped
      const marker = el<HTMLElement>("ternary-marker");
      marker.setAttribute("cx", String(x));
      marker.setAttribute("cy", String(yTop));
      void solveCurrent();
    });
  } else {
    host.innerHTML = Array.from({ length: state.m }, (_, i) =>
      `<label>λ${i + 1} <input class="pref" type="range" min="0" max="1" step="0.001" value="${(1 / state.m).toFixed(3)}"/></label>`,
    ).join("<br/>");
  }
  document.querySelectorAll<HTMLInputElement>("input.pref").forEach((slider) => {
    slider.addEventListener("input", () => void solveCurrent());
  });
}

function renderHistoryList(): void {
  el("history-list").innerHTML = state.history
    .map((entry, i) =>
      `<li data-history="${i}">λ=[${entry.lambda.map((v) => v.toFixed(3)).join(", ")}] → ` +
      `[${entry.objectives.map((v) => v.toFixed(4)).join(", ")}]</li>`)
    .join("");
}

function renderSolutionView(): void {
  if (!state.current || !instanceRecord) return;
  const solution = state.current.solution;
  const kind = instanceRecord.kind as string;
  let svg = "";
  if (kind === "motsp") {
    const coords = (instanceRecord.coords as number[][]).map((row) => row.slice(0, 2));
    svg = renderTour(coords, solution as number[]);
  } else if (kind === "mocvrp") {
    svg = renderRoutes(instanceRecord.depot as number[], instanceRecord.coords as number[][],
                       solution as number[][]);
  } else {
    svg = renderItems(instanceRecord.weights as number[], solution as number[]);
  }
  el("solution-view").innerHTML = svg;
  el("objective-view").innerHTML = renderObjectiveScatter({
    front: state.cachedFront ?? undefined,
    current: state.current.objectives.slice(0, 2),
    historyPoints: state.history.map((h) => h.objectives.slice(0, 2)),
  });
  el("readout").textContent =
    `objectives [${state.current.objectives.map((v) => v.toFixed(4)).join(", ")}]  ` +
    `scalarized ${state.current.scalarized_cost.toFixed(4)}  ` +
    `latency ${state.current.latency_ms.toFixed(0)} ms`;
  renderHistoryList();
}

async function solveCurrent(): Promise<void> {
  if (state.instanceId === null) return;
  const lam = currentPreference();
  if (!isValidPreference(lam)) {
    banner(`invalid preference ${lam.join(",")}`);
    return;
  }
  const ticket = state.nextSolveTicket();
  try {
    const resp = await client.solve(state.instanceId, lam);
    if (state.acceptSolve(ticket, lam, resp)) {
      banner(null);
      renderSolutionView();
    }
  } catch (err) {
    banner(`solve failed: ${(err as Error).message}`); // keep the last good view
  }
}

async function registerInstance(): Promise<void> {
  try {
    instanceRecord = JSON.parse(el<HTMLTextAreaElement>("instance-json").value);
    const { id } = await client.registerInstance(instanceRecord!);
    state.instanceId = id;
    state.m = (instanceRecord!.m as number) ?? 2;
    banner(null);
    el("instance-label").textContent = `instance #${id} (${instanceRecord!.kind}, n=${instanceRecord!.n})`;
    buildControls();
    await solveCurrent();
  } catch (err) {
    banner(`register failed: ${(err as Error).message}`);
  }
}

async function sweepFront(): Promise<void> {
  if (state.instanceId === null) return;
  try {
    const weights = state.m === 2 ? { grid: 101 as number } : { dasdennis: 13 as number };
    const resp = await client.front(state.instanceId, weights as { grid: number });
    state.replaceFront(resp.entries);
    banner(null);
    renderSolutionView();
    el("front-label").textContent = resp.normalized_hv !== null
      ? `front of ${resp.entries.length}, normalized HV ${resp.normalized_hv.toFixed(4)}`
      : `front of ${resp.entries.length}`;
  } catch (err) {
    banner(`sweep failed: ${(err as Error).message}`);
  }
}

async function steerAdaptation(): Promise<void> {
  if (state.instanceId === null || !state.beginAdaptation()) return;
  const button = el<HTMLButtonElement>("adapt-button");
  button.disabled = true;
  button.title = "adaptation already running";
  try {
    const steps = parseInt(el<HTMLInputElement>("adapt-steps").value, 10) || 50;
    const resp = await client.adapt(state.instanceId, steps, 1e-4);
    el("curve-view").innerHTML = renderHvCurve(resp.hv_curve);
    state.endAdaptation();
    await sweepFront(); // refresh the front from the adapted snapshot
  } catch (err) {
    state.endAdaptation();
    banner(`adaptation failed: ${(err as Error).message}`);
  } finally {
    button.disabled = false;
    button.title = "";
  }
}

function restoreHistory(index: number): void {
  const entry = state.history[index];
  if (!entry || state.m !== entry.lambda.length) return;
  if (state.m === 2) {
    const slider = document.querySelector<HTMLInputElement>("input.pref");
    if (slider) slider.value = String(entry.lambda[0]);
  } else if (state.m === 3) {
    const h = Math.sqrt(3) / 2;
    ternaryPoint = [entry.lambda[1] + entry.lambda[2] * 0.5, entry.lambda[2] * h];
  } else {
    const sliders = Array.from(document.querySelectorAll<HTMLInputElement>("input.pref"));
    entry.lambda.forEach((v, i) => { if (sliders[i]) sliders[i].value = String(v); });
  }
  void solveCurrent();
}

export function bootstrap(): void {
  el("register-button").addEventListener("click", () => void registerInstance());
  el("sweep-button").addEventListener("click", () => void sweepFront());
  el("adapt-button").addEventListener("click", () => void steerAdaptation());
  el("history-list").addEventListener("click", (ev) => {
    const item = (ev.target as HTMLElement).closest("[data-history]");
    if (item) restoreHistory(parseInt(item.getAttribute("data-history")!, 10));
  });
  buildControls();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  bootstrap();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", bootstrap);
}
