import { beforeEach, describe, expect, it } from "vitest";
import type { ApiClient } from "../src/api.js";
import { WorkbenchSession } from "../src/session.js";
import type { DetectResponse, Detection, NormBox } from "../src/types.js";

/** Deterministic fake service: per-handle scores derived from the handle
 * name, independent across queries (mirrors the column-independence of the
 * real scoring head). */
class FakeClient {
  textQueryCalls = 0;
  imageQueryCalls = 0;
  detectCalls = 0;
  private counter = 0;

  async textQueries(categories: string[]) {
    this.textQueryCalls += 1;
    return categories.map((name) => ({ handle: `h-text-${name}`, name }));
  }

  async imageQuery(_imageB64: string, box: NormBox, name: string) {
    this.imageQueryCalls += 1;
    // tiny boxes have no overlapping prediction: generic-object fallback
    const fallback = box.w < 0.05;
    return { handle: `h-img-${name}-${this.counter++}`, name, fallback };
  }

  async detect(
    _imageB64: string,
    queryHandles: (string | { handles: string[]; name: string })[],
  ): Promise<DetectResponse> {
    this.detectCalls += 1;
    const detections: Detection[] = queryHandles.map((spec, i) => {
      const name = typeof spec === "string" ? spec.replace("h-text-", "") : spec.name;
      const seed = [...name].reduce((a, c) => a + c.charCodeAt(0), 0);
      return {
        bbox: [0.1, 0.1, 0.5, 0.5],
        score: ((seed % 83) + 1) / 100,
        query_index: i,
        query_name: name,
      };
    });
    detections.sort((a, b) => b.score - a.score);
    return { detections, image_query_fallbacks: [], timing_ms: 1 };
  }

  async health() {
    return true;
  }
}

const PNG = "iVBORw0KGgoAAAANSUhEUg==";

describe("WorkbenchSession", () => {
  let client: FakeClient;
  let session: WorkbenchSession;

  beforeEach(() => {
    client = new FakeClient();
    session = new WorkbenchSession(client as unknown as ApiClient);
    session.setImage(PNG);
  });

  it("validates: no queries means detect is disabled", () => {
    expect(session.validate()).toMatch(/at least one query/);
    session.addTextQuery("red circle");
    expect(session.validate()).toBeNull();
    session.removeQuery(0);
    expect(session.validate()).toMatch(/at least one query/);
  });

  it("runs and appends an append-only history", async () => {
    session.addTextQuery("red circle");
    await session.run();
    session.addTextQuery("blue square");
    await session.run();
    expect(session.state.history).toHaveLength(2);
    expect(session.state.history[0].queries).toHaveLength(1);
    expect(session.state.history[1].queries).toHaveLength(2);
    // earlier snapshots are untouched by later edits
    session.removeQuery(0);
    expect(session.state.history[1].queries).toHaveLength(2);
  });

  it("reuses cached embedding handles for unchanged queries", async () => {
    session.addTextQuery("red circle");
    await session.run();
    expect(client.textQueryCalls).toBe(1);
    await session.run();
    expect(client.textQueryCalls).toBe(1); // cache hit, no re-embedding
    session.addTextQuery("blue square");
    await session.run();
    expect(client.textQueryCalls).toBe(2); // only the new query embeds
  });

  it("unchanged query set reproduces the previous snapshot (purity)", async () => {
    session.addTextQuery("red circle");
    const first = await session.run();
    const second = await session.run();
    expect(second.detections).toEqual(first.detections);
  });

  it("adding one query never changes other queries' scores", async () => {
    session.addTextQuery("red circle");
    const before = await session.run();
    session.addTextQuery("blue square");
    const after = await session.run();
    const score = (snap: typeof before, name: string) =>
      snap.detections.find((d) => d.query_name === name)?.score;
    expect(score(after, "red circle")).toBe(score(before, "red circle"));
  });

  it("replay reproduces identical responses", async () => {
    session.addTextQuery("red circle");
    await session.run();
    session.addTextQuery("blue square");
    await session.run();
    const result = await session.replay();
    expect(result.identical).toBe(true);
    expect(result.mismatches).toEqual([]);
  });

  it("groups image patches into one few-shot query", async () => {
    const box = { cx: 0.5, cy: 0.5, w: 0.4, h: 0.4 };
    for (let i = 0; i < 3; i++) {
      session.addImageQuery({ imageB64: PNG + i, box, kShotGroup: "shots" });
    }
    const snapshot = await session.run();
    expect(client.imageQueryCalls).toBe(3);
    // three patches, one pooled query
    expect(snapshot.detections).toHaveLength(1);
    expect(snapshot.detections[0].query_name).toBe("image:shots");
  });

  it("surfaces the generic-object fallback flag", async () => {
    session.addImageQuery({
      imageB64: PNG,
      box: { cx: 0.5, cy: 0.5, w: 0.01, h: 0.01 },
      kShotGroup: "tiny",
    });
    await session.run();
    expect(session.fallbackFor(session.state.queries[0])).toBe(true);
  });

  it("serializes and restores across reloads", async () => {
    session.addTextQuery("red circle");
    session.setThreshold(0.35);
    await session.run();
    const revived = WorkbenchSession.deserialize(
      session.serialize(),
      client as unknown as ApiClient,
    );
    expect(revived.state.threshold).toBe(0.35);
    expect(revived.state.queries).toEqual(session.state.queries);
    expect(revived.state.history).toHaveLength(1);
    const replay = await revived.replay();
    expect(replay.identical).toBe(true);
  });

  it("rejects corrupt session payloads", () => {
    expect(() =>
      WorkbenchSession.deserialize("{}", client as unknown as ApiClient),
    ).toThrow(/corrupt/);
  });
});
