/** Detection overlays: a pure function of (image, detections, threshold). */

import { bboxToCanvas } from "./geometry.js";
import type { Detection } from "./types.js";

const PALETTE = [
  "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
  "#42d4f4", "#f032e6", "#bfef45", "#fabed4", "#469990",
];

export function colorForQuery(queryIndex: number): string {
  return PALETTE[queryIndex % PALETTE.length];
}

/** Minimal slice of CanvasRenderingContext2D the overlay needs; tests supply
 * a recording stub. */
export interface DrawContext {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

/** Draw every detection at or above the threshold. The full detection list
 * stays client-side, so the slider re-renders without another request. */
export function renderDetections(
  ctx: DrawContext,
  detections: Detection[],
  threshold: number,
  canvasWidth: number,
  canvasHeight: number,
): number {
  let drawn = 0;
  for (const det of detections) {
    if (det.score < threshold) continue;
    const rect = bboxToCanvas(det.bbox, canvasWidth, canvasHeight);
    ctx.strokeStyle = colorForQuery(det.query_index);
    ctx.lineWidth = 2;
    ctx.strokeRect(rect.x, rect.y, rect.width, rect.height);
    ctx.fillStyle = colorForQuery(det.query_index);
    ctx.font = "12px sans-serif";
    ctx.fillText(
      `${det.query_name} ${det.score.toFixed(2)}`,
      rect.x + 2,
      Math.max(10, rect.y - 3),
    );
    drawn += 1;
  }
  return drawn;
}
