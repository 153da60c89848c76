/** Workbench session: query editing, handle caching, append-only history.
 *
 * The session is a strict client of the HTTP service. Embedding handles for
 * unchanged queries are reused across runs, at most one detect request is in
 * flight (later edits cancel and replace it), and every completed run lands
 * in an append-only history whose replay must reproduce identical overlays
 * because the service is pure over its model snapshot.
 */

import type { ApiClient } from "./api.js";
import type {
  ImageQuerySpec,
  QuerySpec,
  SessionState,
  Snapshot,
} from "./types.js";

const DETECT_TOP_K = 200;

function specKey(spec: QuerySpec): string {
  if (spec.kind === "text") return `text:${spec.text}`;
  return `image:${spec.kShotGroup}:${spec.box.cx},${spec.box.cy},${spec.box.w},${spec.box.h}:${spec.imageB64.length}:${spec.imageB64.slice(0, 64)}`;
}

export class WorkbenchSession {
  state: SessionState;
  /** query key -> server-side embedding handle */
  private handleCache = new Map<string, string>();
  /** query key -> fallback flag from image-query extraction */
  private fallbackFlags = new Map<string, boolean>();
  private inflight: AbortController | null = null;

  constructor(
    private readonly client: ApiClient,
    state?: SessionState,
  ) {
    this.state = state ?? { imageB64: null, queries: [], threshold: 0.1, history: [] };
  }

  setImage(imageB64: string): void {
    this.state.imageB64 = imageB64;
  }

  setThreshold(threshold: number): void {
    this.state.threshold = Math.min(1, Math.max(0, threshold));
  }

  addTextQuery(text: string): void {
    const trimmed = text.trim();
    if (trimmed) this.state.queries.push({ kind: "text", text: trimmed });
  }

  addImageQuery(spec: Omit<ImageQuerySpec, "kind">): void {
    this.state.queries.push({ kind: "image", ...spec });
  }

  removeQuery(index: number): void {
    this.state.queries.splice(index, 1);
  }

  /** Inline validation message, or null when a run is possible. */
  validate(): string | null {
    if (!this.state.imageB64) return "load a target image first";
    if (this.state.queries.length === 0) return "add at least one query";
    return null;
  }

  fallbackFor(spec: QuerySpec): boolean {
    return this.fallbackFlags.get(specKey(spec)) ?? false;
  }

  private async ensureHandles(queries: QuerySpec[]): Promise<void> {
    const missingText = queries.filter(
      (q): q is Extract<QuerySpec, { kind: "text" }> =>
        q.kind === "text" && !this.handleCache.has(specKey(q)),
    );
    if (missingText.length > 0) {
      const handles = await this.client.textQueries(missingText.map((q) => q.text));
      handles.forEach((h, i) => this.handleCache.set(specKey(missingText[i]), h.handle));
    }
    for (const q of queries) {
      if (q.kind !== "image" || this.handleCache.has(specKey(q))) continue;
      const handle = await this.client.imageQuery(q.imageB64, q.box, `image:${q.kShotGroup}`);
      this.handleCache.set(specKey(q), handle.handle);
      this.fallbackFlags.set(specKey(q), handle.fallback ?? false);
    }
  }

  /** Handle payload for a detect call: text handles stay separate, image
   * patches sharing a k-shot group are averaged into one query server-side. */
  private handlePayload(queries: QuerySpec[]): (string | { handles: string[]; name: string })[] {
    const payload: (string | { handles: string[]; name: string })[] = [];
    const groups = new Map<string, string[]>();
    for (const q of queries) {
      const handle = this.handleCache.get(specKey(q));
      if (!handle) throw new Error(`no handle for query ${specKey(q)}`);
      if (q.kind === "text") {
        payload.push(handle);
      } else {
        const members = groups.get(q.kShotGroup) ?? [];
        members.push(handle);
        groups.set(q.kShotGroup, members);
      }
    }
    for (const [group, handles] of [...groups.entries()].sort()) {
      payload.push({ handles, name: `image:${group}` });
    }
    return payload;
  }

  private async detectWith(queries: QuerySpec[], signal?: AbortSignal) {
    await this.ensureHandles(queries);
    return this.client.detect(
      this.state.imageB64!,
      this.handlePayload(queries) as unknown as string[],
      0.0, // fetch unfiltered; the threshold slider filters client-side
      DETECT_TOP_K,
      signal,
    );
  }

  /** Run detection for the current query set; appends a history snapshot.
   * A newer run cancels and replaces any in-flight one. */
  async run(): Promise<Snapshot> {
    const problem = this.validate();
    if (problem) throw new Error(problem);
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const queries = this.state.queries.map((q) => ({ ...q }));
    const response = await this.detectWith(queries, controller.signal);
    if (this.inflight === controller) this.inflight = null;
    const snapshot: Snapshot = {
      queries,
      threshold: this.state.threshold,
      detections: response.detections,
      fallbacks: queries.map((q) => this.fallbackFor(q)),
      at: this.state.history.length,
    };
    this.state.history.push(snapshot); // append-only
    return snapshot;
  }

  /** Re-issue every historical query set and compare the responses; the
   * service is pure, so replay must reproduce identical detections. */
  async replay(): Promise<{ identical: boolean; mismatches: number[] }> {
    const mismatches: number[] = [];
    for (const snapshot of this.state.history) {
      const response = await this.detectWith(snapshot.queries);
      if (JSON.stringify(response.detections) !== JSON.stringify(snapshot.detections)) {
        mismatches.push(snapshot.at);
      }
    }
    return { identical: mismatches.length === 0, mismatches };
  }

  serialize(): string {
    return JSON.stringify(this.state);
  }

  static deserialize(json: string, client: ApiClient): WorkbenchSession {
    const state = JSON.parse(json) as SessionState;
    if (!Array.isArray(state.history)) throw new Error("corrupt session payload");
    return new WorkbenchSession(client, state);
  }
}
