/** Typed client for the detection service. The UI never computes model
 * math; everything goes through these endpoints. */

import type { DetectResponse, NormBox, QueryHandle } from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async post<T>(path: string, payload: unknown, signal?: AbortSignal): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
      signal,
    });
    const body = await resp.json();
    if (!resp.ok) {
      throw new ApiError(resp.status, body.error ?? `HTTP ${resp.status}`);
    }
    return body as T;
  }

  async health(): Promise<boolean> {
    try {
      const resp = await this.fetchImpl(this.baseUrl + "/v1/health");
      return resp.ok;
    } catch {
      return false;
    }
  }

  async textQueries(categories: string[]): Promise<QueryHandle[]> {
    const body = await this.post<{ queries: QueryHandle[] }>(
      "/v1/queries/text",
      { categories, mode: "eval" },
    );
    return body.queries;
  }

  async imageQuery(imageB64: string, box: NormBox, name: string): Promise<QueryHandle> {
    return this.post<QueryHandle & { fallback: boolean }>("/v1/queries/image", {
      image: imageB64,
      box: [box.cx, box.cy, box.w, box.h],
      name,
    });
  }

  async detect(
    imageB64: string,
    queryHandles: string[],
    threshold: number,
    topK: number,
    signal?: AbortSignal,
  ): Promise<DetectResponse> {
    return this.post<DetectResponse>(
      "/v1/detect",
      {
        image: imageB64,
        query_handles: queryHandles,
        threshold,
        top_k: topK,
      },
      signal,
    );
  }
}
