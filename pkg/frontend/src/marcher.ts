/** Scalar CPU ray marcher over a decoded bundle.
 *
 * This is the viewer's dense-march debug path and the testable twin of the
 * fragment shader: same stepping recurrence, distance-grid skipping, gated
 * feature aggregation, and deferred shading as the reference renderer.
 */

import { Bundle, CHANNELS, MlpParams } from "./assets.js";
import { Vec3, contract, contractDirectionScale, sigmoid } from "./math.js";
import { shade } from "./mlp.js";

const SIGMA_CLAMP = 1e4;
export const EARLY_TERMINATION = 2e-3;

function samplePlane(
  plane: Float32Array,
  r: number,
  a: number,
  b: number,
  out: Float64Array,
): void {
  const h = 4.0 / r;
  let u = (a + 2.0) / h - 0.5;
  let v = (b + 2.0) / h - 0.5;
  const i0 = Math.min(Math.max(Math.floor(u), 0), r - 2);
  const j0 = Math.min(Math.max(Math.floor(v), 0), r - 2);
  const fu = Math.min(Math.max(u - i0, 0), 1);
  const fv = Math.min(Math.max(v - j0, 0), 1);
  const w00 = (1 - fu) * (1 - fv);
  const w10 = fu * (1 - fv);
  const w01 = (1 - fu) * fv;
  const w11 = fu * fv;
  const base00 = (i0 * r + j0) * CHANNELS;
  const base10 = ((i0 + 1) * r + j0) * CHANNELS;
  const base01 = (i0 * r + j0 + 1) * CHANNELS;
  const base11 = ((i0 + 1) * r + j0 + 1) * CHANNELS;
  for (let c = 0; c < CHANNELS; c++) {
    out[c] =
      w00 * plane[base00 + c] +
      w10 * plane[base10 + c] +
      w01 * plane[base01 + c] +
      w11 * plane[base11 + c];
  }
}

function sampleGrid(grid: Float32Array, l: number, p: Vec3, out: Float64Array): void {
  const h = 4.0 / l;
  const idx: number[] = [];
  const frac: number[] = [];
  for (let d = 0; d < 3; d++) {
    const u = (p[d] + 2.0) / h - 0.5;
    const i0 = Math.min(Math.max(Math.floor(u), 0), l - 2);
    idx.push(i0);
    frac.push(Math.min(Math.max(u - i0, 0), 1));
  }
  out.fill(0);
  for (let du = 0; du <= 1; du++) {
    for (let dv = 0; dv <= 1; dv++) {
      for (let dw = 0; dw <= 1; dw++) {
        const w =
          (du ? frac[0] : 1 - frac[0]) *
          (dv ? frac[1] : 1 - frac[1]) *
          (dw ? frac[2] : 1 - frac[2]);
        if (w === 0) continue;
        const base = (((idx[0] + du) * l + idx[1] + dv) * l + idx[2] + dw) * CHANNELS;
        for (let c = 0; c < CHANNELS; c++) out[c] += w * grid[base + c];
      }
    }
  }
}

export interface MarchResult {
  rgb: Vec3;
  opacity: number;
  samples: number;
  steps: number;
}

/** March one ray (submodel-local origin, unit direction). */
export function marchRay(
  bundle: Bundle,
  params: MlpParams,
  originLocal: Vec3,
  dirLocal: Vec3,
  useSkip = true,
  earlyTermination = EARLY_TERMINATION,
  maxSteps?: number,
): MarchResult {
  const r = bundle.manifest.plane_resolution;
  const l = bundle.manifest.grid_resolution;
  const rho = bundle.manifest.layout.contraction_prescale;
  const gated = bundle.manifest.feature_gating;
  const hStep = 4.0 / r;
  const hL = 4.0 / l;
  const steps = maxSteps ?? 6 * r;
  const tMax = 1e5;

  const featDim = gated ? 12 : 4;
  const diffuseAcc: Vec3 = [0, 0, 0];
  const featureAcc = new Float64Array(featDim);
  let trans = 1.0;
  let t = 0.0;
  let used = 0;
  let samples = 0;

  const rhoDir: Vec3 = [rho * dirLocal[0], rho * dirLocal[1], rho * dirLocal[2]];
  const px = new Float64Array(CHANNELS);
  const py = new Float64Array(CHANNELS);
  const pz = new Float64Array(CHANNELS);
  const vv = new Float64Array(CHANNELS);

  const posAt = (tt: number): Vec3 => [
    rho * (originLocal[0] + tt * dirLocal[0]),
    rho * (originLocal[1] + tt * dirLocal[1]),
    rho * (originLocal[2] + tt * dirLocal[2]),
  ];
  const voxelOf = (y: Vec3): Vec3 => [
    Math.min(Math.max(Math.floor((y[0] + 2) / hL), 0), l - 1),
    Math.min(Math.max(Math.floor((y[1] + 2) / hL), 0), l - 1),
    Math.min(Math.max(Math.floor((y[2] + 2) / hL), 0), l - 1),
  ];

  while (used < steps && t <= tMax) {
    const z = posAt(t);
    const y = contract(z);
    const vox = voxelOf(y);
    const dist = bundle.distance[(vox[0] * l + vox[1]) * l + vox[2]];
    const dt = hStep / Math.max(contractDirectionScale(z, rhoDir), 1e-9);

    if (dist === 0) {
      samplePlane(bundle.planes[0], r, y[1], y[2], px);
      samplePlane(bundle.planes[1], r, y[0], y[2], py);
      samplePlane(bundle.planes[2], r, y[0], y[1], pz);
      sampleGrid(bundle.grid, l, y, vv);
      const gate = gated ? vv[7] : 1.0;
      const t0 = gated
        ? gate * (px[0] + py[0] + pz[0]) + vv[0]
        : px[0] + py[0] + pz[0] + vv[0];
      const sigma = Math.min(Math.exp(Math.min(t0, Math.log(SIGMA_CLAMP))), SIGMA_CLAMP);
      const sd = sigma * dt;
      const alpha = -Math.expm1(-sd);
      const w = trans * alpha;
      for (let c = 0; c < 3; c++) {
        const tc = gated
          ? gate * (px[1 + c] + py[1 + c] + pz[1 + c]) + vv[1 + c]
          : px[1 + c] + py[1 + c] + pz[1 + c] + vv[1 + c];
        diffuseAcc[c] += w * sigmoid(tc);
      }
      for (let c = 0; c < 4; c++) {
        const tc = gated
          ? gate * (px[4 + c] + py[4 + c] + pz[4 + c]) + vv[4 + c]
          : px[4 + c] + py[4 + c] + pz[4 + c] + vv[4 + c];
        featureAcc[c] += w * sigmoid(tc);
      }
      if (gated) {
        for (let c = 0; c < CHANNELS; c++) featureAcc[4 + c] += w * sigmoid(vv[c]);
      }
      trans *= Math.exp(-sd);
      samples++;
    }

    t += dt;
    used++;

    if (useSkip && dist > 1) {
      const radius = dist - 1;
      while (used < steps) {
        const zs = posAt(t);
        const ys = contract(zs);
        const vs = voxelOf(ys);
        const cheb = Math.max(
          Math.abs(vs[0] - vox[0]),
          Math.abs(vs[1] - vox[1]),
          Math.abs(vs[2] - vox[2]),
        );
        if (cheb > radius) break;
        t += hStep / Math.max(contractDirectionScale(zs, rhoDir), 1e-9);
        used++;
      }
    }

    if (earlyTermination > 0 && trans < earlyTermination) break;
  }

  const rgb = shade(params, diffuseAcc, featureAcc, dirLocal);
  return { rgb, opacity: 1 - trans, samples, steps: used };
}
