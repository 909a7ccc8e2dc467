import { describe, expect, it } from "vitest";

import {
  buildDashboardCharts,
  renderChartSvg,
  seriesFrom,
  toSvgCoords,
} from "../src/charts";
import type { HistoryRow, StatsResponse } from "../src/types";

function row(iteration: number, positivity: number | null,
             valSpec: number | null): HistoryRow {
  return {
    seed: 0,
    iteration,
    strategy_used: "entropy",
    n_labeled: iteration * 10,
    n_pos_found: iteration,
    positivity_rate: positivity,
    val_spec_at_95sens: valSpec,
    test_spec_at_95sens: valSpec,
  };
}

function stats(history: HistoryRow[], simulation = true): StatsResponse {
  return {
    run_id: "run",
    iteration: history.length,
    is_simulation: simulation,
    dataset_positivity: 0.02,
    pool_counts: { unlabeled: 10, positive: 1, negative: 0, pseudo_positive: 0 },
    history,
  };
}

describe("chart series", () => {
  it("zero iterations yields an empty chart", () => {
    expect(seriesFrom([], "positivity_rate")).toEqual([]);
    const svg = renderChartSvg(
      { title: "t", points: [], color: "#000" },
      { width: 100, height: 50, padding: 5, maxIteration: 1 });
    expect(svg).not.toContain("polyline");
    expect(svg).toContain("<svg");
  });

  it("three rows yield exactly three points", () => {
    const history = [row(1, 0.1, 0.5), row(2, 0.2, 0.6), row(3, 0.3, 0.7)];
    expect(seriesFrom(history, "positivity_rate")).toHaveLength(3);
    expect(seriesFrom(history, "val_spec_at_95sens")).toHaveLength(3);
  });

  it("plotted values equal the payload exactly", () => {
    const history = [row(1, 0.125, 0.5), row(2, 0.25, 0.625)];
    const points = seriesFrom(history, "positivity_rate");
    expect(points).toEqual([
      { iteration: 1, value: 0.125 },
      { iteration: 2, value: 0.25 },
    ]);
  });

  it("null metrics are not plotted", () => {
    const history = [row(1, null, null), row(2, 0.2, 0.6)];
    expect(seriesFrom(history, "positivity_rate")).toHaveLength(1);
    expect(seriesFrom(history, "val_spec_at_95sens")).toHaveLength(1);
  });

  it("svg coordinates are monotone in iteration and value", () => {
    const coords = toSvgCoords(
      [{ iteration: 1, value: 0.2 }, { iteration: 2, value: 0.8 }],
      { width: 200, height: 100, padding: 10, maxIteration: 2 });
    expect(coords[1].x).toBeGreaterThan(coords[0].x);
    expect(coords[1].y).toBeLessThan(coords[0].y); // higher value, higher up
  });

  it("dashboard draws the dashed dataset line only for simulations", () => {
    const history = [row(1, 0.1, 0.5)];
    const sim = buildDashboardCharts(stats(history, true));
    const live = buildDashboardCharts(stats(history, false));
    expect(sim).toContain("stroke-dasharray");
    expect(live).not.toContain("stroke-dasharray");
  });
});
