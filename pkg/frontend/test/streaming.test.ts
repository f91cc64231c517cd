import { describe, expect, it } from "vitest";

import { Layout, Vec3, cellKey } from "../src/math.js";
import { ReferenceLru, StreamerState } from "../src/streaming.js";

function gridLayout(k: number, active?: Vec3[]): Layout {
  const cells: Vec3[] = active ?? [];
  if (!active) {
    for (let u = 0; u < k; u++)
      for (let v = 0; v < k; v++)
        for (let w = 0; w < k; w++) cells.push([u, v, w]);
  }
  return {
    gridSize: k,
    scale: 1,
    center: [0, 0, 0],
    contractionPrescale: 0.8,
    activeCells: cells,
  };
}

/** Mulberry32: tiny deterministic PRNG for the property walks. */
function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

describe("streaming state machine", () => {
  it("ping-pongs across a boundary with the predicted fetch sequence", () => {
    // the scripted boundary-crossing trajectory of the streaming UX check
    const layout = gridLayout(2, [
      [0, 0, 0],
      [1, 0, 0],
    ]);
    const s = new StreamerState(layout, 4);
    const fetches: string[] = [];
    const renders: Array<string | null> = [];
    const loaded = new Set<string>();

    const drive = (pos: Vec3) => {
      const d = s.onCamera(pos);
      renders.push(d.renderWith ? cellKey(d.renderWith) : null);
      if (d.renderWith) {
        expect(loaded.has(cellKey(d.renderWith)), "rendered an unloaded bundle").toBe(true);
      }
      for (const a of d.actions) {
        if (a.kind === "fetch") {
          fetches.push(cellKey(a.cell));
          loaded.add(cellKey(a.cell)); // fetch completes before next frame
          s.onFetchComplete(a.cell, pos);
        }
      }
    };

    // start deep in cell A, glide across the x=0 face into cell B, return
    const xs = [-0.7, -0.5, -0.3, -0.1, -0.005, 0.005, 0.1, 0.3, 0.5, 0.3, 0.1, -0.1, -0.4];
    for (const x of xs) drive([x, -0.5, -0.5]);

    expect(fetches).toEqual(["0_0_0", "1_0_0"]);
    // hysteresis holds the old cell through the shallow crossing at 0.005
    expect(renders[5]).toBe("0_0_0");
    // decisive entry swaps; return trip is a cache hit (no further fetches)
    expect(renders[7]).toBe("1_0_0");
    expect(renders[renders.length - 1]).toBe("0_0_0");
  });

  it("holds the invariants over 100k random-walk steps and matches LRU", () => {
    const k = 3;
    const layout = gridLayout(k);
    const s = new StreamerState(layout, 3);
    const ref = new ReferenceLru(3);
    const rand = rng(7);
    const pos: Vec3 = [0, 0, 0];
    const pending: Vec3[] = [];
    let maxGpu = 0;

    for (let step = 0; step < 100_000; step++) {
      for (let d = 0; d < 3; d++) {
        pos[d] = Math.min(Math.max(pos[d] + (rand() - 0.5) * 0.5, -k / 2), k / 2);
      }
      const dec = s.onCamera([pos[0], pos[1], pos[2]]);
      if (dec.renderWith) {
        expect(s.cpuCells.some((c) => cellKey(c) === cellKey(dec.renderWith!))).toBe(true);
        ref.access(cellKey(dec.renderWith), s.gpuCells.map(cellKey));
      }
      for (const a of dec.actions) {
        if (a.kind === "fetch") pending.push(a.cell);
      }
      maxGpu = Math.max(maxGpu, s.gpuCells.length);
      if (pending.length && rand() < 0.6) {
        const cell = pending.shift()!;
        s.onFetchComplete(cell, [pos[0], pos[1], pos[2]]);
        ref.access(cellKey(cell), s.gpuCells.map(cellKey));
        maxGpu = Math.max(maxGpu, s.gpuCells.length);
      }
      expect(s.cpuCells.length).toBeLessThanOrEqual(3);
      expect(new Set(s.cpuCells.map(cellKey))).toEqual(new Set(ref.entries));
    }
    expect(maxGpu).toBeLessThanOrEqual(2);
  });

  it("backs off exponentially on fetch failures", () => {
    const layout = gridLayout(2);
    const s = new StreamerState(layout, 4);
    s.onCamera([-0.5, -0.5, -0.5]);
    const delays = [];
    for (let i = 0; i < 6; i++) {
      delays.push(s.onFetchFailed([0, 0, 0]).actions[0].delayS);
    }
    expect(delays).toEqual([0.25, 0.5, 1.0, 2.0, 4.0, 4.0]);
  });
});
