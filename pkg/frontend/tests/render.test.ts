import { describe, expect, it } from "vitest";

import { renderHvCurve, renderItems, renderObjectiveScatter, renderRoutes, renderTour } from "../src/render";

describe("rendering", () => {
  it("every plotted objective point is traceable to a supplied response value", () => {
    const front = [
      { lambda: [1, 0], objectives: [1.5, 4.25] },
      { lambda: [0, 1], objectives: [3.75, 2.5] },
    ];
    const history = [[2.0, 3.0]];
    const current = [1.9, 3.1];
    const svg = renderObjectiveScatter({ front, current, historyPoints: history });
    const plotted = [...svg.matchAll(/data-objectives="([^"]+)"/g)].map((m) => m[1]);
    const sources = new Set([
      ...front.map((e) => e.objectives.join(",")),
      history[0].join(","),
      current.join(","),
    ]);
    expect(plotted.length).toBe(4);
    for (const p of plotted) {
      expect(sources.has(p)).toBe(true); // nothing plotted that the service did not return
    }
  });

  it("scatter survives an empty session", () => {
    expect(renderObjectiveScatter({})).toContain("no data yet");
  });

  it("tour rendering closes the cycle and draws every node", () => {
    const coords = [[0, 0], [1, 0], [1, 1]];
    const svg = renderTour(coords, [0, 2, 1]);
    expect((svg.match(/<circle/g) ?? []).length).toBe(3);
    const pts = svg.match(/points="([^"]+)"/)![1].split(" ");
    expect(pts[0]).toBe(pts[pts.length - 1]);
  });

  it("route rendering draws one polyline per route through the depot", () => {
    const svg = renderRoutes([0.5, 0.5], [[0, 0], [1, 0], [1, 1]], [[0, 1], [2]]);
    expect((svg.match(/<polyline/g) ?? []).length).toBe(2);
    expect(svg).toContain("depot");
  });

  it("item bars mark selected items", () => {
    const svg = renderItems([0.2, 0.5, 0.9], [1]);
    expect((svg.match(/class="item selected"/g) ?? []).length).toBe(1);
    expect((svg.match(/<rect/g) ?? []).length).toBe(3);
  });

  it("hv curve is a pass-through of the service array", () => {
    const curve = [0.1, 0.15, 0.15, 0.2];
    const svg = renderHvCurve(curve);
    expect(svg).toContain(`data-curve="${curve.join(",")}"`);
    const pts = svg.match(/points="([^"]+)"/)![1].split(" ");
    expect(pts).toHaveLength(curve.length);
  });
});
