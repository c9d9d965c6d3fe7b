// Min-max decimation for long series: one (min, max) pair per pixel column
// keeps spikes visible while bounding the number of drawn segments.
// Raw data is never modified; this is a rendering concern only.

export const DECIMATION_THRESHOLD = 20_000;

export interface Column {
  index: number; // source index of the column's first sample
  min: number;
  max: number;
}

export function shouldDecimate(length: number): boolean {
  return length > DECIMATION_THRESHOLD;
}

/** Partition `values` into `columns` contiguous buckets and keep min/max of each. */
export function minMaxDecimate(values: number[], columns: number): Column[] {
  if (columns < 1) throw new Error("columns must be >= 1");
  if (values.length <= columns) {
    return values.map((v, i) => ({ index: i, min: v, max: v }));
  }
  const out: Column[] = [];
  for (let c = 0; c < columns; c++) {
    const start = Math.floor((c * values.length) / columns);
    const end = Math.max(start + 1, Math.floor(((c + 1) * values.length) / columns));
    let lo = values[start];
    let hi = values[start];
    for (let i = start + 1; i < end; i++) {
      if (values[i] < lo) lo = values[i];
      if (values[i] > hi) hi = values[i];
    }
    out.push({ index: start, min: lo, max: hi });
  }
  return out;
}
