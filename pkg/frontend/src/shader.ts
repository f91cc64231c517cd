/** WebGL2 fragment-shader ray marcher over a decoded bundle.
 *
 * Scene constants (resolutions, prescale, step sizes) are baked into the
 * generated source rather than passed as uniforms, so the compiler can
 * fold them. The per-frame interpolated MLP parameters arrive as plain
 * uniform float arrays.
 */

import { Bundle } from "./assets.js";

export const VERTEX_SHADER = `#version 300 es
precision highp float;
const vec2 corners[3] = vec2[3](vec2(-1.0, -1.0), vec2(3.0, -1.0), vec2(-1.0, 3.0));
out vec2 ndc;
void main() {
  vec2 p = corners[gl_VertexID];
  ndc = p;
  gl_Position = vec4(p, 0.0, 1.0);
}
`;

export function fragmentShaderSource(bundle: Bundle): string {
  const m = bundle.manifest;
  const r = m.plane_resolution;
  const l = m.grid_resolution;
  const rho = m.layout.contraction_prescale;
  const inputDim = m.mlp_input_dim;
  const hidden = m.mlp_hidden;
  if (!m.feature_gating) {
    throw new Error("shader build supports gated bundles only");
  }
  return `#version 300 es
precision highp float;
precision highp sampler3D;
precision highp usampler3D;

const float R = ${r.toFixed(1)};
const float L = ${l.toFixed(1)};
const float RHO = ${rho.toExponential(8)};
const float H_STEP = ${(4.0 / r).toExponential(8)};
const float H_L = ${(4.0 / l).toExponential(8)};
const float Q_LO = ${m.quantization.lo[0].toFixed(1)};
const float Q_HI = ${m.quantization.hi[0].toFixed(1)};
const int MAX_STEPS = ${6 * r};
const float EARLY_T = 2e-3;
const int IN_DIM = ${inputDim};
const int HIDDEN = ${hidden};

uniform sampler2D planeX0; uniform sampler2D planeX1;
uniform sampler2D planeY0; uniform sampler2D planeY1;
uniform sampler2D planeZ0; uniform sampler2D planeZ1;
uniform sampler3D grid0;   uniform sampler3D grid1;
uniform usampler3D distanceGrid;

uniform vec3 cameraPos;      // submodel-local
uniform mat3 cameraBasis;    // columns: right, trueUp, forward
uniform vec2 tanHalf;        // (tan * aspect, tan)
uniform float w1[IN_DIM * HIDDEN];
uniform float b1[HIDDEN];
uniform float w2[HIDDEN * HIDDEN];
uniform float b2[HIDDEN];
uniform float w3[HIDDEN * 3];
uniform float b3[3];

in vec2 ndc;
out vec4 fragColor;

vec3 contractPoint(vec3 z) {
  vec3 a = abs(z);
  float n = max(a.x, max(a.y, a.z));
  if (n <= 1.0) return z;
  vec3 proj = z / n;
  vec3 edge = (2.0 - 1.0 / max(a, vec3(1e-12))) * sign(z);
  return mix(proj, edge, vec3(greaterThanEqual(a, vec3(n))));
}

float directionScale(vec3 z, vec3 d) {
  vec3 a = abs(z);
  float n = max(a.x, max(a.y, a.z));
  if (n <= 1.0) return length(d);
  int am = (a.y > a.x && a.y >= a.z) ? 1 : ((a.z > a.x && a.z > a.y) ? 2 : 0);
  float za = z[am];
  float ua = d[am];
  vec3 jd = d / n - z * (sign(za) * ua / (n * n));
  jd[am] = ua / (n * n);
  return length(jd);
}

vec4 deq(vec4 t) { return t * (Q_HI - Q_LO) + vec4(Q_LO); }

vec2 planeUv(float a, float b) {
  // texel centers: sampler UV in [0,1]; clamp handled by CLAMP_TO_EDGE
  return vec2((b + 2.0) / 4.0, (a + 2.0) / 4.0); // tex x = column = axis b
}

void samplePoint(vec3 y, out float sigma, out vec3 diffuse, out float feat[12]) {
  vec4 px0 = deq(texture(planeX0, planeUv(y.y, y.z)));
  vec4 px1 = deq(texture(planeX1, planeUv(y.y, y.z)));
  vec4 py0 = deq(texture(planeY0, planeUv(y.x, y.z)));
  vec4 py1 = deq(texture(planeY1, planeUv(y.x, y.z)));
  vec4 pz0 = deq(texture(planeZ0, planeUv(y.x, y.y)));
  vec4 pz1 = deq(texture(planeZ1, planeUv(y.x, y.y)));
  vec3 uvw = (y + 2.0) / 4.0;
  vec4 v0 = deq(texture(grid0, uvw.zyx));
  vec4 v1 = deq(texture(grid1, uvw.zyx));
  float gate = v1.w;
  vec4 t0 = gate * (px0 + py0 + pz0) + v0;
  vec4 t1 = gate * (px1 + py1 + pz1) + v1;
  sigma = exp(min(t0.x, log(1e4)));
  diffuse = 1.0 / (1.0 + exp(-vec3(t0.y, t0.z, t0.w)));
  vec4 f0 = 1.0 / (1.0 + exp(-t1));
  feat[0] = f0.x; feat[1] = f0.y; feat[2] = f0.z; feat[3] = f0.w;
  vec4 g0 = 1.0 / (1.0 + exp(-v0));
  vec4 g1 = 1.0 / (1.0 + exp(-v1));
  feat[4] = g0.x; feat[5] = g0.y; feat[6] = g0.z; feat[7] = g0.w;
  feat[8] = g1.x; feat[9] = g1.y; feat[10] = g1.z; feat[11] = g1.w;
}

vec3 shadePixel(vec3 diffuseAcc, float featureAcc[12], vec3 dir) {
  float x[IN_DIM];
  x[0] = dir.x; x[1] = dir.y; x[2] = dir.z;
  x[3] = diffuseAcc.x; x[4] = diffuseAcc.y; x[5] = diffuseAcc.z;
  for (int i = 0; i < 12; i++) x[6 + i] = featureAcc[i];
  float h1[HIDDEN];
  for (int j = 0; j < HIDDEN; j++) {
    float acc = b1[j];
    for (int i = 0; i < IN_DIM; i++) acc += x[i] * w1[i * HIDDEN + j];
    h1[j] = acc > 0.0 ? acc : exp(acc) - 1.0;
  }
  float h2[HIDDEN];
  for (int j = 0; j < HIDDEN; j++) {
    float acc = b2[j];
    for (int i = 0; i < HIDDEN; i++) acc += h1[i] * w2[i * HIDDEN + j];
    h2[j] = acc > 0.0 ? acc : exp(acc) - 1.0;
  }
  vec3 outc;
  for (int j = 0; j < 3; j++) {
    float acc = b3[j];
    for (int i = 0; i < HIDDEN; i++) acc += h2[i] * w3[i * 3 + j];
    outc[j] = clamp(diffuseAcc[j] + 1.0 / (1.0 + exp(-acc)), 0.0, 1.0);
  }
  return outc;
}

void main() {
  vec3 dir = normalize(cameraBasis * vec3(ndc.x * tanHalf.x, ndc.y * tanHalf.y, 1.0));
  vec3 rhoDir = RHO * dir;
  float t = 0.0;
  float trans = 1.0;
  vec3 diffuseAcc = vec3(0.0);
  float featureAcc[12];
  for (int i = 0; i < 12; i++) featureAcc[i] = 0.0;

  for (int step = 0; step < MAX_STEPS; step++) {
    vec3 z = RHO * (cameraPos + t * dir);
    vec3 y = contractPoint(z);
    ivec3 vox = ivec3(clamp(floor((y + 2.0) / H_L), vec3(0.0), vec3(L - 1.0)));
    uint dist = texelFetch(distanceGrid, vox.zyx, 0).r;
    float dt = H_STEP / max(directionScale(z, rhoDir), 1e-9);

    if (dist == 0u) {
      float sigma; vec3 diffuse; float feat[12];
      samplePoint(y, sigma, diffuse, feat);
      float sd = sigma * dt;
      float alpha = 1.0 - exp(-sd);
      float w = trans * alpha;
      diffuseAcc += w * diffuse;
      for (int i = 0; i < 12; i++) featureAcc[i] += w * feat[i];
      trans *= exp(-sd);
    }
    t += dt;

    if (dist > 1u) {
      int radius = int(dist) - 1;
      for (int inner = 0; inner < MAX_STEPS; inner++) {
        vec3 zs = RHO * (cameraPos + t * dir);
        vec3 ys = contractPoint(zs);
        ivec3 vs = ivec3(clamp(floor((ys + 2.0) / H_L), vec3(0.0), vec3(L - 1.0)));
        ivec3 dvox = abs(vs - vox);
        if (max(dvox.x, max(dvox.y, dvox.z)) > radius) break;
        t += H_STEP / max(directionScale(zs, rhoDir), 1e-9);
      }
    }
    if (trans < EARLY_T) break;
  }
  fragColor = vec4(shadePixel(diffuseAcc, featureAcc, dir), 1.0);
}
`;
}
