/** Scene-space math mirroring the reference renderer semantics. */

export type Vec3 = [number, number, number];

export const SQUASH_MIN = -2.0;
export const SQUASH_MAX = 2.0;

export function contract(x: Vec3): Vec3 {
  const ax = Math.abs(x[0]);
  const ay = Math.abs(x[1]);
  const az = Math.abs(x[2]);
  const n = Math.max(ax, ay, az);
  if (n <= 1.0) return [x[0], x[1], x[2]];
  const out: Vec3 = [0, 0, 0];
  const a = [ax, ay, az];
  for (let d = 0; d < 3; d++) {
    if (a[d] >= n) {
      out[d] = (2.0 - 1.0 / a[d]) * Math.sign(x[d]);
    } else {
      out[d] = x[d] / n;
    }
  }
  return out;
}

/** Norm of the contraction Jacobian applied to dvec at point z. */
export function contractDirectionScale(z: Vec3, dvec: Vec3): number {
  const ax = Math.abs(z[0]);
  const ay = Math.abs(z[1]);
  const az = Math.abs(z[2]);
  const n = Math.max(ax, ay, az);
  if (n <= 1.0) {
    return Math.hypot(dvec[0], dvec[1], dvec[2]);
  }
  let argmax = 0;
  if (ay > ax && ay >= az) argmax = 1;
  else if (az > ax && az > ay) argmax = 2;
  const za = z[argmax];
  const ua = dvec[argmax];
  const s = Math.sign(za);
  const jd: Vec3 = [0, 0, 0];
  for (let d = 0; d < 3; d++) {
    jd[d] = dvec[d] / n - (z[d] * s * ua) / (n * n);
  }
  jd[argmax] = ua / (n * n);
  return Math.hypot(jd[0], jd[1], jd[2]);
}

export interface Layout {
  gridSize: number;
  scale: number;
  center: Vec3;
  contractionPrescale: number;
  activeCells: Vec3[];
}

export function cellCenter(layout: Layout, cell: Vec3): Vec3 {
  const h = (layout.gridSize - 1) / 2.0;
  return [cell[0] - h, cell[1] - h, cell[2] - h];
}

export function cellDistance(layout: Layout, pos: Vec3, cell: Vec3): number {
  let worst = 0;
  for (let d = 0; d < 3; d++) {
    const lo = cell[d] - layout.gridSize / 2.0;
    const hi = lo + 1.0;
    const gap = Math.max(lo - pos[d], pos[d] - hi, 0.0);
    worst = Math.max(worst, gap);
  }
  return worst;
}

/** Nearest active cell under Chebyshev distance, lexicographic ties. */
export function assignSubmodel(layout: Layout, pos: Vec3): Vec3 {
  let best: Vec3 | null = null;
  let bestD = Infinity;
  const cells = [...layout.activeCells].sort(compareCells);
  for (const cell of cells) {
    const d = cellDistance(layout, pos, cell);
    if (d < bestD) {
      best = cell;
      bestD = d;
    }
  }
  if (!best) throw new Error("layout has no active cells");
  return best;
}

export function compareCells(a: Vec3, b: Vec3): number {
  return a[0] - b[0] || a[1] - b[1] || a[2] - b[2];
}

export function cellKey(cell: Vec3): string {
  return `${cell[0]}_${cell[1]}_${cell[2]}`;
}

export function worldToSubmodel(layout: Layout, cell: Vec3, p: Vec3): Vec3 {
  const c = cellCenter(layout, cell);
  return [2 * (p[0] - c[0]), 2 * (p[1] - c[1]), 2 * (p[2] - c[2])];
}

export function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function sigmoid(x: number): number {
  if (x >= 0) return 1 / (1 + Math.exp(-x));
  const e = Math.exp(x);
  return e / (1 + e);
}

export function elu(x: number): number {
  return x > 0 ? x : Math.expm1(x);
}
