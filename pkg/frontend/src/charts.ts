/** SVG chart construction for the stats dashboard.
 *
 * Every plotted value comes verbatim from the /stats payload; nothing is
 * recomputed client-side. Rows whose metric is null (undefined server-side)
 * are simply not plotted.
 */

import type { HistoryRow, StatsResponse } from "./types.js";

export interface ChartPoint {
  iteration: number;
  value: number;
}

export function seriesFrom(
  history: HistoryRow[],
  field: "positivity_rate" | "val_spec_at_95sens" | "test_spec_at_95sens",
): ChartPoint[] {
  const points: ChartPoint[] = [];
  for (const row of history) {
    const value = row[field];
    if (value !== null && value !== undefined && Number.isFinite(value)) {
      points.push({ iteration: row.iteration, value });
    }
  }
  return points;
}

export interface ChartGeometry {
  width: number;
  height: number;
  padding: number;
  maxIteration: number;
}

export function toSvgCoords(
  points: ChartPoint[],
  geom: ChartGeometry,
): Array<{ x: number; y: number }> {
  const innerW = geom.width - 2 * geom.padding;
  const innerH = geom.height - 2 * geom.padding;
  const maxIter = Math.max(geom.maxIteration, 1);
  return points.map((p) => ({
    x: geom.padding + (p.iteration / maxIter) * innerW,
    y: geom.padding + (1 - clamp01(p.value)) * innerH,
  }));
}

function clamp01(v: number): number {
  return Math.min(1, Math.max(0, v));
}

function polyline(points: Array<{ x: number; y: number }>): string {
  return points.map((p) => `${round2(p.x)},${round2(p.y)}`).join(" ");
}

function round2(v: number): number {
  return Math.round(v * 100) / 100;
}

export interface ChartSpec {
  title: string;
  points: ChartPoint[];
  /** Horizontal reference (e.g. dataset-wide positivity) drawn dashed. */
  dashedY?: number | null;
  color: string;
}

export function renderChartSvg(spec: ChartSpec, geom: ChartGeometry): string {
  const coords = toSvgCoords(spec.points, geom);
  const parts: string[] = [];
  parts.push(
    `<svg viewBox="0 0 ${geom.width} ${geom.height}" class="chart" ` +
      `role="img" aria-label="${spec.title}">`,
  );
  parts.push(
    `<text x="${geom.padding}" y="12" class="chart-title">${spec.title}</text>`,
  );
  const axisY = geom.height - geom.padding;
  parts.push(
    `<line x1="${geom.padding}" y1="${axisY}" x2="${geom.width - geom.padding}" ` +
      `y2="${axisY}" class="axis"/>`,
  );
  parts.push(
    `<line x1="${geom.padding}" y1="${geom.padding}" x2="${geom.padding}" ` +
      `y2="${axisY}" class="axis"/>`,
  );
  if (spec.dashedY !== null && spec.dashedY !== undefined) {
    const y = round2(
      geom.padding + (1 - clamp01(spec.dashedY)) * (geom.height - 2 * geom.padding),
    );
    parts.push(
      `<line x1="${geom.padding}" y1="${y}" x2="${geom.width - geom.padding}" ` +
        `y2="${y}" stroke-dasharray="6 4" class="reference"/>`,
    );
  }
  if (coords.length > 0) {
    parts.push(
      `<polyline points="${polyline(coords)}" fill="none" ` +
        `stroke="${spec.color}" stroke-width="2"/>`,
    );
    for (const c of coords) {
      parts.push(
        `<circle cx="${round2(c.x)}" cy="${round2(c.y)}" r="3" ` +
          `fill="${spec.color}"/>`,
      );
    }
  }
  parts.push("</svg>");
  return parts.join("");
}

export function buildDashboardCharts(stats: StatsResponse): string {
  const geom: ChartGeometry = {
    width: 420,
    height: 180,
    padding: 24,
    maxIteration: Math.max(stats.iteration, 1),
  };
  const positivity = renderChartSvg(
    {
      title: "Positivity rate vs iteration",
      points: seriesFrom(stats.history, "positivity_rate"),
      dashedY: stats.is_simulation ? stats.dataset_positivity : null,
      color: "#0b7285",
    },
    geom,
  );
  const spec = renderChartSvg(
    {
      title: "Validation specificity @ 95% sensitivity",
      points: seriesFrom(stats.history, "val_spec_at_95sens"),
      color: "#c2255c",
    },
    geom,
  );
  return positivity + spec;
}
