/** Canvas <-> normalized coordinate transforms. */

import type { NormBox } from "./types.js";

export interface PixelRect {
  x: number;
  y: number;
  width: number;
  height: number;
}

/** Corner-form normalized bbox to canvas pixels. */
export function bboxToCanvas(
  bbox: [number, number, number, number],
  canvasWidth: number,
  canvasHeight: number,
): PixelRect {
  const [x0, y0, x1, y1] = bbox;
  return {
    x: x0 * canvasWidth,
    y: y0 * canvasHeight,
    width: (x1 - x0) * canvasWidth,
    height: (y1 - y0) * canvasHeight,
  };
}

/** A mouse drag (any corner order) to a normalized center-form box, clamped
 * to the image bounds. Returns null for degenerate drags. */
export function dragToNormBox(
  startX: number,
  startY: number,
  endX: number,
  endY: number,
  canvasWidth: number,
  canvasHeight: number,
): NormBox | null {
  const clamp = (v: number) => Math.min(1, Math.max(0, v));
  const x0 = clamp(Math.min(startX, endX) / canvasWidth);
  const x1 = clamp(Math.max(startX, endX) / canvasWidth);
  const y0 = clamp(Math.min(startY, endY) / canvasHeight);
  const y1 = clamp(Math.max(startY, endY) / canvasHeight);
  const w = x1 - x0;
  const h = y1 - y0;
  if (w <= 1e-6 || h <= 1e-6) return null;
  return { cx: x0 + w / 2, cy: y0 + h / 2, w, h };
}

export function normBoxToCornerArray(box: NormBox): [number, number, number, number] {
  return [box.cx - box.w / 2, box.cy - box.h / 2, box.cx + box.w / 2, box.cy + box.h / 2];
}
