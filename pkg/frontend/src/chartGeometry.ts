// Pure chart-space geometry: scales, polyline points, region rectangles,
// and hit testing, all in chart-local pixel coordinates.

import type { SaeRegion } from "./types";

export interface PlotArea {
  x: number;
  y: number;
  width: number;
  height: number;
}

export interface Scale {
  (value: number): number;
  invert(px: number): number;
}

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  const scale = ((value: number) => r0 + ((value - d0) / span) * (r1 - r0)) as Scale;
  scale.invert = (px: number) => d0 + ((px - r0) / (r1 - r0 || 1)) * span;
  return scale;
}

export function seriesExtent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!isFinite(lo)) return [0, 1];
  if (lo === hi) return [lo - 1, hi + 1];
  return [lo, hi];
}

export function polylinePoints(values: number[], xScale: Scale,
                               yScale: Scale): Array<[number, number]> {
  return values.map((v, i) => [xScale(i), yScale(v)]);
}

export interface RegionRect {
  regionIndex: number;
  x: number;
  width: number;
}

/** Shaded spans for discrepancy regions, in chart pixels over the window axis. */
export function regionRects(regions: SaeRegion[], xScale: Scale): RegionRect[] {
  return regions.map((region, regionIndex) => {
    const x0 = xScale(region.start);
    const x1 = xScale(region.end + 1); // inclusive end index
    return { regionIndex, x: x0, width: Math.max(1, x1 - x0) };
  });
}

/** Last-drawn region wins, mirroring paint order. */
export function hitTestRegions(px: number, rects: RegionRect[]): number | null {
  for (let i = rects.length - 1; i >= 0; i--) {
    const r = rects[i];
    if (px >= r.x && px <= r.x + r.width) return r.regionIndex;
  }
  return null;
}
