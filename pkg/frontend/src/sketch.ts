/**
 * Sketch capture model: a freehand drawing reduced to an x-monotone
 * polyline (one y per integer x column), with a fixed-length preview that
 * mirrors the server's resampling exactly. All functions here are pure so
 * they can be tested without a DOM.
 */

export const PREVIEW_LENGTH = 30;
export const MIN_K = 1;
export const MAX_K = 20;

export interface SketchState {
  /** y value per captured integer x column */
  columns: Map<number, number>;
  k: number;
}

export function createSketchState(k = 9): SketchState {
  return { columns: new Map(), k: clampK(k) };
}

export function clampK(k: number): number {
  if (!Number.isFinite(k)) return MIN_K;
  return Math.min(MAX_K, Math.max(MIN_K, Math.round(k)));
}

export function clearSketch(state: SketchState): void {
  state.columns.clear();
}

export function hasSketch(state: SketchState): boolean {
  return state.columns.size >= 2;
}

/**
 * Record one stroke segment. Every integer column between the endpoints is
 * set by linear interpolation, so later strokes overwrite whatever earlier
 * strokes put into the same x range.
 */
export function addStrokeSegment(
  state: SketchState,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
): void {
  const from = Math.round(x0);
  const to = Math.round(x1);
  if (from === to) {
    state.columns.set(to, y1);
    return;
  }
  const step = to > from ? 1 : -1;
  for (let x = from; x !== to + step; x += step) {
    const t = (x - from) / (to - from);
    state.columns.set(x, y0 + t * (y1 - y0));
  }
}

/**
 * The captured polyline as a dense, evenly spaced y sequence. Gaps between
 * strokes are bridged by linear interpolation so the result is a function
 * over the full captured x span.
 */
export function sketchPoints(state: SketchState): number[] {
  const xs = Array.from(state.columns.keys()).sort((a, b) => a - b);
  if (xs.length < 2) {
    return [];
  }
  const lo = xs[0];
  const hi = xs[xs.length - 1];
  const out: number[] = new Array(hi - lo + 1);
  let seg = 0;
  for (let x = lo; x <= hi; x++) {
    while (seg < xs.length - 1 && xs[seg + 1] <= x) seg++;
    const known = state.columns.get(x);
    if (known !== undefined) {
      out[x - lo] = known;
      continue;
    }
    const xa = xs[seg];
    const xb = xs[seg + 1];
    const ya = state.columns.get(xa)!;
    const yb = state.columns.get(xb)!;
    out[x - lo] = ya + ((x - xa) / (xb - xa)) * (yb - ya);
  }
  return out;
}

/**
 * Piecewise-linear resampling of evenly spaced samples onto `n` evenly
 * spaced positions; must agree with the server's resampler.
 */
export function resample(values: number[], n: number): number[] {
  if (values.length === 0) return [];
  if (values.length === 1) return new Array(n).fill(values[0]);
  const out = new Array<number>(n);
  const scale = (values.length - 1) / (n - 1);
  for (let i = 0; i < n; i++) {
    const pos = i * scale;
    const left = Math.min(values.length - 2, Math.floor(pos));
    const t = pos - left;
    out[i] = values[left] * (1 - t) + values[left + 1] * t;
  }
  return out;
}

/**
 * The 30-point preview of the current sketch in chart orientation
 * (canvas y grows downward, so values are flipped to price orientation).
 */
export function sketchPreview(state: SketchState, canvasHeight: number): number[] {
  const points = sketchPoints(state);
  if (points.length < 2) return [];
  return resample(points, PREVIEW_LENGTH).map((y) => canvasHeight - y);
}

/** Payload for the sketch query endpoint: price-oriented raw points. */
export function sketchRequestPoints(state: SketchState, canvasHeight: number): number[] {
  return sketchPoints(state).map((y) => canvasHeight - y);
}

/**
 * Load a retrieved series back onto the canvas as the next query (the
 * explore-refine loop). The series is stretched across the given canvas
 * size; values are expected in [0, 1].
 */
export function loadSeriesIntoSketch(
  state: SketchState,
  series: number[],
  canvasWidth: number,
  canvasHeight: number,
): void {
  state.columns.clear();
  if (series.length < 2) return;
  const margin = 0.1 * canvasHeight;
  const usable = canvasHeight - 2 * margin;
  const xs = series.map((_, i) => (i / (series.length - 1)) * (canvasWidth - 1));
  const ys = series.map((v) => canvasHeight - (margin + v * usable));
  for (let i = 1; i < series.length; i++) {
    addStrokeSegment(state, xs[i - 1], ys[i - 1], xs[i], ys[i]);
  }
}

/** Least-squares slope of a value sequence against its index. */
export function fittedSlope(values: number[]): number {
  const n = values.length;
  if (n < 2) return 0;
  const xMean = (n - 1) / 2;
  const yMean = values.reduce((a, b) => a + b, 0) / n;
  let num = 0;
  let den = 0;
  for (let i = 0; i < n; i++) {
    num += (i - xMean) * (values[i] - yMean);
    den += (i - xMean) * (i - xMean);
  }
  return num / den;
}

/** Min-max normalization matching the server's rule (constant -> 0.5). */
export function minmax(values: number[]): number[] {
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  if (hi <= lo) return values.map(() => 0.5);
  return values.map((v) => (v - lo) / (hi - lo));
}
