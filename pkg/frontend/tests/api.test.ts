import { describe, expect, it } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";

function fakeFetch(status: number, body: unknown) {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const impl = async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return {
      ok: status >= 200 && status < 300,
      status,
      json: async () => body,
    } as Response;
  };
  return { impl, calls };
}

describe("ApiClient", () => {
  it("posts detect requests with handles and threshold", async () => {
    const { impl, calls } = fakeFetch(200, {
      detections: [], image_query_fallbacks: [], timing_ms: 1,
    });
    const client = new ApiClient("http://svc", impl);
    await client.detect("PNGB64", ["h1", "h2"], 0.25, 40);
    expect(calls[0].url).toBe("http://svc/v1/detect");
    const payload = JSON.parse(calls[0].init!.body as string);
    expect(payload).toEqual({
      image: "PNGB64", query_handles: ["h1", "h2"], threshold: 0.25, top_k: 40,
    });
  });

  it("requests eval-mode text query embeddings", async () => {
    const { impl, calls } = fakeFetch(200, { queries: [{ handle: "h", name: "cat" }] });
    const client = new ApiClient("http://svc", impl);
    const handles = await client.textQueries(["cat"]);
    expect(handles).toEqual([{ handle: "h", name: "cat" }]);
    const payload = JSON.parse(calls[0].init!.body as string);
    expect(payload.mode).toBe("eval");
  });

  it("sends image query boxes in center form", async () => {
    const { impl, calls } = fakeFetch(200, { handle: "h", name: "q", fallback: false });
    const client = new ApiClient("http://svc", impl);
    await client.imageQuery("IMG", { cx: 0.5, cy: 0.4, w: 0.2, h: 0.1 }, "q");
    const payload = JSON.parse(calls[0].init!.body as string);
    expect(payload.box).toEqual([0.5, 0.4, 0.2, 0.1]);
  });

  it("maps service errors to ApiError with status", async () => {
    const { impl } = fakeFetch(400, { error: "threshold must lie in [0, 1]" });
    const client = new ApiClient("http://svc", impl);
    await expect(client.detect("IMG", [], 1.5, 10)).rejects.toThrowError(ApiError);
    await expect(client.detect("IMG", [], 1.5, 10)).rejects.toThrow(/threshold/);
  });

  it("health returns false on unreachable service", async () => {
    const client = new ApiClient("http://svc", async () => {
      throw new Error("connection refused");
    });
    expect(await client.health()).toBe(false);
  });
});
