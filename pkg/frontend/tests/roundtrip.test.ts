/**
 * Scripted browser round-trip against a real edit service.
 *
 * Builds a small scene + briefly trained checkpoint through the CLI, serves
 * it, drives the UI (JSDOM) like a user: click a known region pixel, submit
 * a red-metallic edit, and assert from raw service renders that exactly the
 * selected region changed (IoU >= 0.99) and that an identity edit is
 * pixel-identical.
 */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { JSDOM } from "jsdom";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { EditorApp } from "../src/ui.js";
import { parseNpy } from "./npy.js";

const PORT = 8731;
const BASE = `http://127.0.0.1:${PORT}`;
let server: ChildProcess | null = null;
let workdir: string;

async function fetchRaw(path: string): Promise<ArrayBuffer> {
  const res = await fetch(BASE + path);
  if (!res.ok) throw new Error(`${path} -> ${res.status}`);
  return await res.arrayBuffer();
}

async function waitForServer(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${BASE}/api/views`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 500));
  }
  throw new Error("edit service did not come up");
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "vqmat-ui-"));
  const scene = join(workdir, "scene");
  const run = join(workdir, "run");
  execFileSync("vqmat", [
    "gen", "--preset", "matpair", "--out", scene, "--views", "4", "--res", "32",
  ]);
  execFileSync(
    "vqmat",
    [
      "train", "--scene", scene, "--out", run, "--steps", "250", "--m0", "4",
      "--batch-size", "192", "--pair-limit", "48", "--seed", "0",
    ],
    { timeout: 240_000 },
  );
  server = spawn(
    "vqmat",
    [
      "serve", "--ckpt", join(run, "ckpt.vqnf"), "--scene", scene,
      "--addr", `127.0.0.1:${PORT}`, "--session-dir", join(workdir, "session"),
    ],
    { stdio: "ignore" },
  );
  await waitForServer();
}, 300_000);

afterAll(() => {
  server?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe("UI round-trip against the live service", () => {
  it(
    "click, edit, and verify locality from service renders",
    { timeout: 120_000 },
    async () => {
      const dom = new JSDOM("<div id='app'></div>", { url: BASE });
      const root = dom.window.document.getElementById("app") as HTMLElement;
      const app = new EditorApp(new ApiClient(BASE), root);
      await app.start();
      expect(app.state.views.length).toBe(4);

      // find a pixel of some material region from the segmentation map
      const seg = parseNpy(await fetchRaw("/api/segmentation?view=0&format=npy"));
      const [h, w] = seg.shape;
      let px = -1, py = -1;
      outer: for (let y = 0; y < h; y++) {
        for (let x = 0; x < w; x++) {
          if (seg.data[y * w + x] >= 0) {
            px = x;
            py = y;
            break outer;
          }
        }
      }
      expect(px).toBeGreaterThanOrEqual(0);

      // user clicks that pixel on the segmentation pane (displayed 1:1)
      const img = root.querySelector("#pane-seg") as HTMLImageElement;
      img.getBoundingClientRect = () =>
        ({ left: 0, top: 0, width: w, height: h }) as DOMRect;
      const before = parseNpy(await fetchRaw("/api/render?view=0&branch=edited&format=npy"));
      await app.handleSegClick({ clientX: px + 0.5, clientY: py + 0.5 } as MouseEvent);
      const index = app.state.selected;
      expect(index).not.toBeNull();
      expect(index).toBe(seg.data[py * w + px]);

      // submit a strong red-metallic edit through the form state
      app.state = {
        ...app.state,
        pending: { k_d: [0.9, 0.05, 0.05], k_m: 0.85, k_r: 0.15 },
      };
      await app.submitEdit();
      const after = parseNpy(await fetchRaw("/api/render?view=0&branch=edited&format=npy"));

      // changed-pixel set vs the selected codeword's region: IoU >= 0.99
      let inter = 0;
      let union = 0;
      for (let i = 0; i < h * w; i++) {
        let diff = 0;
        for (let c = 0; c < 3; c++) {
          diff = Math.max(
            diff,
            Math.abs((after.data[i * 3 + c] as number) - (before.data[i * 3 + c] as number)),
          );
        }
        const changed = diff > 1e-4;
        const region = seg.data[i] === index;
        if (changed && region) inter++;
        if (changed || region) union++;
      }
      expect(union).toBeGreaterThan(0);
      expect(inter / union).toBeGreaterThanOrEqual(0.99);

      // identity edit: resubmit the material's own attributes -> no change
      const mats = app.state.materials;
      const mine = mats.find((m) => m.index === index)!;
      app.state = {
        ...app.state,
        pending: { k_d: [...mine.k_d] as [number, number, number], k_m: mine.k_m, k_r: mine.k_r },
      };
      await app.submitEdit();
      const again = parseNpy(await fetchRaw("/api/render?view=0&branch=edited&format=npy"));
      expect(Buffer.from(again.data.buffer).equals(Buffer.from(after.data.buffer))).toBe(true);
    },
  );

  it("background click answers 422 and the UI shows a notice", { timeout: 60_000 }, async () => {
    const dom = new JSDOM("<div id='app'></div>", { url: BASE });
    const root = dom.window.document.getElementById("app") as HTMLElement;
    const app = new EditorApp(new ApiClient(BASE), root);
    await app.start();
    const seg = parseNpy(await fetchRaw("/api/segmentation?view=0&format=npy"));
    const [h, w] = seg.shape;
    let bx = -1, by = -1;
    outer: for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        if (seg.data[y * w + x] < 0) {
          bx = x;
          by = y;
          break outer;
        }
      }
    }
    await app.selectAt(bx, by);
    expect(app.state.selected).toBeNull();
    expect(root.querySelector("#notice")?.textContent).toBe("no material here");
  });
});
