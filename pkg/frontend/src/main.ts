/** DOM wiring for the workbench page. */

import { ApiClient } from "./api.js";
import { dragToNormBox } from "./geometry.js";
import { renderDetections } from "./overlay.js";
import { WorkbenchSession } from "./session.js";

const STORAGE_KEY = "ovdet-workbench-session";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function fileToPngB64(file: File): Promise<string> {
  const buf = await file.arrayBuffer();
  let binary = "";
  for (const byte of new Uint8Array(buf)) binary += String.fromCharCode(byte);
  return btoa(binary);
}

function drawImage(canvas: HTMLCanvasElement, imageB64: string): Promise<void> {
  return new Promise((resolve) => {
    const img = new Image();
    img.onload = () => {
      canvas.width = 480;
      canvas.height = 480;
      const ctx = canvas.getContext("2d")!;
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
      resolve();
    };
    img.src = `data:image/png;base64,${imageB64}`;
  });
}

export function boot(): void {
  const client = new ApiClient(
    (el<HTMLInputElement>("server-url") as HTMLInputElement).value || "http://127.0.0.1:8000",
  );
  let session: WorkbenchSession;
  const stored = localStorage.getItem(STORAGE_KEY);
  try {
    session = stored
      ? WorkbenchSession.deserialize(stored, client)
      : new WorkbenchSession(client);
  } catch {
    session = new WorkbenchSession(client);
  }

  const targetCanvas = el<HTMLCanvasElement>("target-canvas");
  const queryCanvas = el<HTMLCanvasElement>("query-canvas");
  const status = el<HTMLDivElement>("status");
  const queryList = el<HTMLUListElement>("query-list");
  const slider = el<HTMLInputElement>("threshold");
  let queryImageB64: string | null = null;
  let lastDetections = session.state.history.at(-1)?.detections ?? [];
  let kShotCounter = 0;

  const persist = () => localStorage.setItem(STORAGE_KEY, session.serialize());

  const redraw = async () => {
    if (session.state.imageB64) {
      await drawImage(targetCanvas, session.state.imageB64);
      const ctx = targetCanvas.getContext("2d")!;
      renderDetections(ctx, lastDetections, session.state.threshold,
        targetCanvas.width, targetCanvas.height);
    }
    queryList.innerHTML = "";
    session.state.queries.forEach((q, i) => {
      const item = document.createElement("li");
      const label = q.kind === "text" ? `"${q.text}"` : `patch (k-group ${q.kShotGroup})`;
      const badge = session.fallbackFor(q)
        ? ' <span class="badge">generic-object fallback</span>' : "";
      item.innerHTML = `${label}${badge} <button data-i="${i}">remove</button>`;
      item.querySelector("button")!.addEventListener("click", () => {
        session.removeQuery(i);
        persist();
        void redraw();
      });
      queryList.appendChild(item);
    });
    const problem = session.validate();
    el<HTMLButtonElement>("run").disabled = problem !== null;
    status.textContent = problem ?? `${lastDetections.length} detections cached; ` +
      `history length ${session.state.history.length}`;
  };

  el<HTMLInputElement>("target-file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    session.setImage(await fileToPngB64(file));
    lastDetections = [];
    persist();
    void redraw();
  });

  el<HTMLInputElement>("query-file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    queryImageB64 = await fileToPngB64(file);
    await drawImage(queryCanvas, queryImageB64);
  });

  el<HTMLButtonElement>("add-text").addEventListener("click", () => {
    session.addTextQuery(el<HTMLInputElement>("text-query").value);
    el<HTMLInputElement>("text-query").value = "";
    persist();
    void redraw();
  });

  let dragStart: [number, number] | null = null;
  queryCanvas.addEventListener("mousedown", (ev) => {
    dragStart = [ev.offsetX, ev.offsetY];
  });
  queryCanvas.addEventListener("mouseup", (ev) => {
    if (!dragStart || !queryImageB64) return;
    const box = dragToNormBox(dragStart[0], dragStart[1], ev.offsetX, ev.offsetY,
      queryCanvas.width, queryCanvas.height);
    dragStart = null;
    if (!box) return;
    const group = el<HTMLInputElement>("kshot-group").value || `g${kShotCounter++}`;
    session.addImageQuery({ imageB64: queryImageB64, box, kShotGroup: group });
    persist();
    void redraw();
  });

  slider.addEventListener("input", () => {
    session.setThreshold(Number(slider.value));
    persist();
    void redraw(); // client-side filtering only, no refetch
  });

  el<HTMLButtonElement>("run").addEventListener("click", async () => {
    status.textContent = "running detection...";
    try {
      const snapshot = await session.run();
      lastDetections = snapshot.detections;
      persist();
      await redraw();
    } catch (err) {
      status.textContent = `error: ${(err as Error).message}`;
    }
  });

  el<HTMLButtonElement>("replay").addEventListener("click", async () => {
    status.textContent = "replaying history...";
    const result = await session.replay();
    status.textContent = result.identical
      ? `replay reproduced all ${session.state.history.length} snapshots exactly`
      : `replay mismatch at snapshots ${result.mismatches.join(", ")}`;
  });

  void redraw();
}

if (typeof document !== "undefined" && document.getElementById("target-canvas")) {
  boot();
}
