/** Deferred appearance MLP: lattice parameter trilerp and evaluation. */

import { Lattice, MlpParams } from "./assets.js";
import { Vec3, elu, sigmoid } from "./math.js";

/** Trilinearly blend the eight lattice vertices around a local origin. */
export function interpolateParams(lattice: Lattice, originLocal: Vec3): MlpParams {
  const p = lattice.size;
  const { inputDim, hidden } = lattice;
  const out: MlpParams = {
    w1: new Float64Array(inputDim * hidden),
    b1: new Float64Array(hidden),
    w2: new Float64Array(hidden * hidden),
    b2: new Float64Array(hidden),
    w3: new Float64Array(hidden * 3),
    b3: new Float64Array(3),
    inputDim,
    hidden,
  };
  const names: Array<keyof MlpParams> = ["w1", "b1", "w2", "b2", "w3", "b3"];
  if (p === 1) {
    for (const n of names) {
      (out[n] as Float64Array).set(lattice.vertices[0][n] as Float64Array);
    }
    return out;
  }
  const idx: number[] = [];
  const frac: number[] = [];
  for (let d = 0; d < 3; d++) {
    let u = ((originLocal[d] + 1) / 2) * (p - 1);
    u = Math.min(Math.max(u, 0), p - 1);
    const i0 = Math.min(Math.floor(u), p - 2);
    idx.push(i0);
    frac.push(u - i0);
  }
  for (let du = 0; du <= 1; du++) {
    for (let dv = 0; dv <= 1; dv++) {
      for (let dw = 0; dw <= 1; dw++) {
        const w =
          (du ? frac[0] : 1 - frac[0]) *
          (dv ? frac[1] : 1 - frac[1]) *
          (dw ? frac[2] : 1 - frac[2]);
        if (w === 0) continue;
        const v = ((idx[0] + du) * p + (idx[1] + dv)) * p + (idx[2] + dw);
        const vert = lattice.vertices[v];
        for (const n of names) {
          const dst = out[n] as Float64Array;
          const src = vert[n] as Float64Array;
          for (let i = 0; i < dst.length; i++) dst[i] += w * src[i];
        }
      }
    }
  }
  return out;
}

/** rgb = clamp(diffuse + sigmoid(mlp([dir, diffuse, features]))). */
export function shade(
  params: MlpParams,
  diffuse: Vec3,
  features: Float64Array,
  dir: Vec3,
): Vec3 {
  const { inputDim, hidden } = params;
  const x = new Float64Array(inputDim);
  x[0] = dir[0];
  x[1] = dir[1];
  x[2] = dir[2];
  x[3] = diffuse[0];
  x[4] = diffuse[1];
  x[5] = diffuse[2];
  for (let i = 0; i < features.length; i++) x[6 + i] = features[i];

  const h1 = new Float64Array(hidden);
  for (let j = 0; j < hidden; j++) {
    let acc = params.b1[j];
    for (let i = 0; i < inputDim; i++) acc += x[i] * params.w1[i * hidden + j];
    h1[j] = elu(acc);
  }
  const h2 = new Float64Array(hidden);
  for (let j = 0; j < hidden; j++) {
    let acc = params.b2[j];
    for (let i = 0; i < hidden; i++) acc += h1[i] * params.w2[i * hidden + j];
    h2[j] = elu(acc);
  }
  const out: Vec3 = [0, 0, 0];
  for (let j = 0; j < 3; j++) {
    let acc = params.b3[j];
    for (let i = 0; i < hidden; i++) acc += h2[i] * params.w3[i * 3 + j];
    out[j] = Math.min(Math.max(diffuse[j] + sigmoid(acc), 0), 1);
  }
  return out;
}
