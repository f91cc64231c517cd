/** Client-side submodel streaming state machine.
 *
 * Mirrors the asset pipeline's streamer contract exactly: ping-pong GPU
 * slots (at most two resident), an LRU CPU tier with pinned GPU entries,
 * boundary hysteresis, and exponential fetch backoff.
 */

import {
  Layout,
  Vec3,
  assignSubmodel,
  cellDistance,
  cellKey,
  compareCells,
} from "./math.js";

export const HYSTERESIS = 0.02;
export const RETRY_BASE_S = 0.25;
export const RETRY_CAP_S = 4.0;

export interface Action {
  kind: "fetch" | "promote" | "evict" | "retry";
  cell: Vec3;
  tier?: "gpu" | "cpu";
  delayS?: number;
}

export interface Decision {
  renderWith: Vec3 | null;
  actions: Action[];
}

function interiorMargin(layout: Layout, pos: Vec3, cell: Vec3): number {
  let m = Infinity;
  for (let d = 0; d < 3; d++) {
    const lo = cell[d] - layout.gridSize / 2;
    const hi = lo + 1;
    m = Math.min(m, pos[d] - lo, hi - pos[d]);
  }
  return m;
}

export class StreamerState {
  layout: Layout;
  cpuCapacity: number;
  hysteresis: number;
  active: Vec3 | null = null;
  private loading: Vec3 | null = null;
  pending = new Set<string>();
  retries = new Map<string, number>();
  private cpu: Vec3[] = []; // LRU order, oldest first

  constructor(layout: Layout, cpuCapacity = 4, hysteresis = HYSTERESIS) {
    if (cpuCapacity < 2) throw new Error("cpu tier needs at least two slots");
    this.layout = layout;
    this.cpuCapacity = cpuCapacity;
    this.hysteresis = hysteresis;
  }

  get gpuCells(): Vec3[] {
    const out: Vec3[] = [];
    if (this.active) out.push(this.active);
    if (this.loading && (!this.active || compareCells(this.loading, this.active) !== 0)) {
      out.push(this.loading);
    }
    return out;
  }

  get cpuCells(): Vec3[] {
    return [...this.cpu];
  }

  private touch(cell: Vec3): void {
    this.cpu = this.cpu.filter((c) => compareCells(c, cell) !== 0);
    this.cpu.push(cell);
  }

  private inCpu(cell: Vec3): boolean {
    return this.cpu.some((c) => compareCells(c, cell) === 0);
  }

  private evictOverflow(actions: Action[]): void {
    while (this.cpu.length > this.cpuCapacity) {
      const pinned = this.gpuCells;
      const victim = this.cpu.find(
        (c) => !pinned.some((p) => compareCells(p, c) === 0),
      );
      if (!victim) break;
      this.cpu = this.cpu.filter((c) => compareCells(c, victim) !== 0);
      actions.push({ kind: "evict", cell: victim, tier: "cpu" });
    }
  }

  private swapTo(cell: Vec3, actions: Action[]): void {
    this.loading = cell;
    actions.push({ kind: "promote", cell });
    const old = this.active;
    this.active = cell;
    this.loading = null;
    this.touch(cell);
    if (old) actions.push({ kind: "evict", cell: old, tier: "gpu" });
  }

  private targetFor(pos: Vec3): Vec3 {
    const target = assignSubmodel(this.layout, pos);
    if (!this.active || compareCells(target, this.active) === 0) return target;
    if (cellDistance(this.layout, pos, target) > 0) return target;
    const margin = interiorMargin(this.layout, pos, target);
    if (
      margin < this.hysteresis &&
      cellDistance(this.layout, pos, this.active) <= this.hysteresis
    ) {
      return this.active;
    }
    return target;
  }

  onCamera(pos: Vec3): Decision {
    const actions: Action[] = [];
    const target = this.targetFor(pos);
    if (!this.active || compareCells(target, this.active) !== 0) {
      if (this.inCpu(target)) {
        this.swapTo(target, actions);
      } else if (!this.pending.has(cellKey(target))) {
        this.pending.add(cellKey(target));
        actions.push({ kind: "fetch", cell: target });
      }
    }
    if (this.active) this.touch(this.active);
    return { renderWith: this.active, actions };
  }

  onFetchComplete(cell: Vec3, pos?: Vec3): Decision {
    const actions: Action[] = [];
    this.pending.delete(cellKey(cell));
    this.retries.delete(cellKey(cell));
    this.touch(cell);
    this.evictOverflow(actions);
    const wanted = pos ? this.targetFor(pos) : cell;
    if (
      !this.active ||
      (compareCells(cell, wanted) === 0 && compareCells(cell, this.active) !== 0)
    ) {
      this.swapTo(cell, actions);
    }
    return { renderWith: this.active, actions };
  }

  onFetchFailed(cell: Vec3): Decision {
    const attempts = (this.retries.get(cellKey(cell)) ?? 0) + 1;
    this.retries.set(cellKey(cell), attempts);
    const delayS = Math.min(RETRY_BASE_S * 2 ** (attempts - 1), RETRY_CAP_S);
    return {
      renderWith: this.active,
      actions: [{ kind: "retry", cell, delayS }],
    };
  }
}

/** Brute-force LRU used as the oracle in the property tests. */
export class ReferenceLru {
  capacity: number;
  entries: string[] = [];
  evicted: string[] = [];

  constructor(capacity: number) {
    this.capacity = capacity;
  }

  access(key: string, pinned: string[] = []): void {
    this.entries = this.entries.filter((k) => k !== key);
    this.entries.push(key);
    while (this.entries.length > this.capacity) {
      const victim = this.entries.find((k) => !pinned.includes(k));
      if (victim === undefined) break;
      this.entries = this.entries.filter((k) => k !== victim);
      this.evicted.push(victim);
    }
  }
}
