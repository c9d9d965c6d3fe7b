// Canvas renderers. Every draw call guards a null 2D context (headless DOM
// in tests has none); layout and interaction still work without it.

import { minMaxDecimate, shouldDecimate } from "./decimate";
import { linearScale, polylinePoints, seriesExtent, Scale } from "./chartGeometry";

const PAD = { left: 42, right: 8, top: 8, bottom: 20 };

export interface LineChartHandle {
  xScale: Scale;
  plotWidth: number;
}

export function drawLineChart(canvas: HTMLCanvasElement, values: number[],
                              options: { color?: string; yLabel?: string } = {},
                              ): LineChartHandle {
  const width = canvas.width;
  const height = canvas.height;
  const plotWidth = width - PAD.left - PAD.right;
  const plotHeight = height - PAD.top - PAD.bottom;
  const xScale = linearScale(0, Math.max(1, values.length - 1),
                             PAD.left, PAD.left + plotWidth);
  const ctx = canvas.getContext("2d");
  if (!ctx) return { xScale, plotWidth };
  const [lo, hi] = seriesExtent(values);
  const yScale = linearScale(lo, hi, PAD.top + plotHeight, PAD.top);
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(PAD.left, PAD.top, plotWidth, plotHeight);
  ctx.fillStyle = "#555";
  ctx.font = "10px sans-serif";
  ctx.fillText(hi.toFixed(0), 2, PAD.top + 10);
  ctx.fillText(lo.toFixed(0), 2, PAD.top + plotHeight);
  if (options.yLabel) ctx.fillText(options.yLabel, 2, height - 6);
  ctx.strokeStyle = options.color ?? "#01579b";
  ctx.lineWidth = 1;
  ctx.beginPath();
  if (shouldDecimate(values.length)) {
    const columns = minMaxDecimate(values, plotWidth);
    const colScale = linearScale(0, Math.max(1, values.length - 1),
                                 PAD.left, PAD.left + plotWidth);
    for (const col of columns) {
      const x = colScale(col.index);
      ctx.moveTo(x, yScale(col.min));
      ctx.lineTo(x, yScale(col.max));
    }
  } else {
    const points = polylinePoints(values, xScale, yScale);
    points.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
  }
  ctx.stroke();
  return { xScale, plotWidth };
}

export interface OverlaySeries {
  values: number[];
  color: string;
  visible: boolean;
}

/** Importance maps share a fixed [0, 1] axis. */
export function drawOverlays(canvas: HTMLCanvasElement,
                             overlays: OverlaySeries[]): LineChartHandle {
  const width = canvas.width;
  const height = canvas.height;
  const plotWidth = width - PAD.left - PAD.right;
  const plotHeight = height - PAD.top - PAD.bottom;
  const length = Math.max(...overlays.map((o) => o.values.length), 2);
  const xScale = linearScale(0, length - 1, PAD.left, PAD.left + plotWidth);
  const ctx = canvas.getContext("2d");
  if (!ctx) return { xScale, plotWidth };
  const yScale = linearScale(0, 1, PAD.top + plotHeight, PAD.top);
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(PAD.left, PAD.top, plotWidth, plotHeight);
  ctx.fillStyle = "#555";
  ctx.font = "10px sans-serif";
  ctx.fillText("1", 2, PAD.top + 10);
  ctx.fillText("0", 2, PAD.top + plotHeight);
  for (const overlay of overlays) {
    if (!overlay.visible) continue;
    ctx.strokeStyle = overlay.color;
    ctx.lineWidth = 1.2;
    ctx.beginPath();
    polylinePoints(overlay.values, xScale, yScale)
      .forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.stroke();
  }
  return { xScale, plotWidth };
}
