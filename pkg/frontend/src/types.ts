/** Wire formats of the detection service plus workbench session state. */

export interface Detection {
  /** Corner-form box, normalized to [0, 1]. */
  bbox: [number, number, number, number];
  score: number;
  query_index: number;
  query_name: string;
}

export interface DetectResponse {
  detections: Detection[];
  image_query_fallbacks: boolean[];
  timing_ms: number;
}

export interface QueryHandle {
  handle: string;
  name: string;
  n_prompts?: number;
  /** Set when the service fell back to the generic-object text query. */
  fallback?: boolean;
}

/** Normalized center-form box, the representation the model uses. */
export interface NormBox {
  cx: number;
  cy: number;
  w: number;
  h: number;
}

export interface TextQuerySpec {
  kind: "text";
  text: string;
}

export interface ImageQuerySpec {
  kind: "image";
  /** Base64 PNG of the source image the box was drawn on. */
  imageB64: string;
  box: NormBox;
  /** Patches sharing a group are averaged into one few-shot query. */
  kShotGroup: string;
}

export type QuerySpec = TextQuerySpec | ImageQuerySpec;

export interface Snapshot {
  queries: QuerySpec[];
  threshold: number;
  detections: Detection[];
  fallbacks: boolean[];
  at: number;
}

export interface SessionState {
  imageB64: string | null;
  queries: QuerySpec[];
  threshold: number;
  /** Append-only; replaying it must reproduce identical responses. */
  history: Snapshot[];
}
