/** Minimal canvas line-chart helpers (no chart library). */

export interface ChartPoint {
  x: number;
  y: number;
}

/**
 * Map a value sequence onto pixel coordinates inside a w x h box, top
 * padding included; y axis flipped to price orientation.
 */
export function valuesToPath(
  values: number[],
  width: number,
  height: number,
  pad = 4,
): ChartPoint[] {
  if (values.length === 0) return [];
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi > lo ? hi - lo : 1;
  const usableW = width - 2 * pad;
  const usableH = height - 2 * pad;
  return values.map((v, i) => ({
    x: pad + (values.length === 1 ? 0 : (i / (values.length - 1)) * usableW),
    y: pad + usableH - ((v - lo) / span) * usableH,
  }));
}

export function drawSeries(
  ctx: CanvasRenderingContext2D,
  values: number[],
  width: number,
  height: number,
  color: string,
  lineWidth = 1.5,
): void {
  const path = valuesToPath(values, width, height);
  if (path.length < 2) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = lineWidth;
  ctx.beginPath();
  ctx.moveTo(path[0].x, path[0].y);
  for (const point of path.slice(1)) {
    ctx.lineTo(point.x, point.y);
  }
  ctx.stroke();
}
