/**
 * Live end-to-end check against a real detection service.
 *
 * Skipped unless OVDET_E2E_FIXTURE points at a JSON file containing base64
 * PNGs of a donor scene (with a query box around one object) and a target
 * scene containing another instance of the same category, plus the target's
 * truth box. demos/08_workbench_e2e.py prepares the fixture, serves the
 * trained checkpoint, and runs this suite.
 */

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { WorkbenchSession } from "../src/session.js";

interface Fixture {
  serviceUrl: string;
  category: string;
  donorB64: string;
  donorBox: { cx: number; cy: number; w: number; h: number };
  targetB64: string;
  targetTruth: [number, number, number, number];
}

const fixturePath = process.env.OVDET_E2E_FIXTURE;
const maybe = fixturePath ? describe : describe.skip;

function iouXyxy(a: number[], b: number[]): number {
  const iw = Math.max(0, Math.min(a[2], b[2]) - Math.max(a[0], b[0]));
  const ih = Math.max(0, Math.min(a[3], b[3]) - Math.max(a[1], b[1]));
  const inter = iw * ih;
  const areaA = (a[2] - a[0]) * (a[3] - a[1]);
  const areaB = (b[2] - b[0]) * (b[3] - b[1]);
  return inter / (areaA + areaB - inter);
}

maybe("workbench against a live service", () => {
  // the body runs even for skipped suites, so load lazily
  const fixture: Fixture = fixturePath
    ? JSON.parse(readFileSync(fixturePath, "utf-8"))
    : ({} as Fixture);
  const client = new ApiClient(fixture.serviceUrl ?? "http://unset");

  it("drawing a query box on a rendered shape highlights matches elsewhere", async () => {
    expect(await client.health()).toBe(true);
    const session = new WorkbenchSession(client);
    session.setImage(fixture.targetB64);
    session.addImageQuery({
      imageB64: fixture.donorB64,
      box: fixture.donorBox,
      kShotGroup: "demo",
    });
    const snapshot = await session.run();
    expect(snapshot.detections.length).toBeGreaterThan(0);
    const top = snapshot.detections[0];
    expect(iouXyxy(top.bbox, fixture.targetTruth)).toBeGreaterThanOrEqual(0.5);
  }, 60_000);

  it("session replay reproduces identical overlays", async () => {
    const session = new WorkbenchSession(client);
    session.setImage(fixture.targetB64);
    session.addTextQuery(fixture.category);
    await session.run();
    session.addImageQuery({
      imageB64: fixture.donorB64,
      box: fixture.donorBox,
      kShotGroup: "demo",
    });
    await session.run();
    const replay = await session.replay();
    expect(replay.identical).toBe(true);

    // and a deserialized session replays identically too (reload survival)
    const revived = WorkbenchSession.deserialize(session.serialize(), client);
    const replay2 = await revived.replay();
    expect(replay2.identical).toBe(true);
  }, 120_000);
});
