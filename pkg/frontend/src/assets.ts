/** Bundle fetching and decoding: gunzip, dequantize, atlas to dense grid. */

import { Layout, Vec3 } from "./math.js";

export const EMPTY_SLOT = 0xffffffff;
export const CHANNELS = 8;

export interface QuantRange {
  lo: number[];
  hi: number[];
}

export interface Manifest {
  magic: string;
  format_version: number;
  cell: number[];
  plane_resolution: number;
  grid_resolution: number;
  block_size: number;
  lattice_size: number;
  mlp_input_dim: number;
  mlp_hidden: number;
  feature_gating: boolean;
  exposure: boolean;
  quantized: boolean;
  quantization: QuantRange;
  layout: LayoutJson;
  files: Record<string, { bytes: number; sha256: string }>;
}

export interface LayoutJson {
  grid_size: number;
  scale: number;
  center: number[];
  contraction_prescale: number;
  active_cells: number[][];
}

export interface SceneIndex {
  magic: string;
  format_version: number;
  layout: LayoutJson;
  feature_gating: boolean;
  exposure: boolean;
  submodels: string[];
}

export interface MlpParams {
  w1: Float64Array; // [inputDim][hidden] row-major
  b1: Float64Array;
  w2: Float64Array;
  b2: Float64Array;
  w3: Float64Array;
  b3: Float64Array;
  inputDim: number;
  hidden: number;
}

export interface Lattice {
  size: number;
  inputDim: number;
  hidden: number;
  vertices: MlpParams[]; // lexicographic (u, v, w)
}

export interface Bundle {
  manifest: Manifest;
  planes: Float32Array[]; // 3 of (R * R * 8), dequantized
  grid: Float32Array; // (L * L * L * 8) dense, zeros where not resident
  distance: Uint8Array; // (L * L * L)
  lattice: Lattice;
}

export function layoutFromJson(j: LayoutJson): Layout {
  return {
    gridSize: j.grid_size,
    scale: j.scale,
    center: j.center as Vec3,
    contractionPrescale: j.contraction_prescale,
    activeCells: j.active_cells.map((c) => c as Vec3),
  };
}

/** Gunzip raw stored bytes (used when the transport did not decode). */
export async function gunzip(raw: ArrayBuffer): Promise<ArrayBuffer> {
  const ds = new DecompressionStream("gzip");
  const stream = new Blob([raw]).stream().pipeThrough(ds);
  return await new Response(stream).arrayBuffer();
}

/** Fetch one asset; Content-Encoding passthrough means the browser may have
 * gunzipped already, so fall back on the gzip magic-byte check. */
export async function fetchAsset(baseUrl: string, path: string): Promise<ArrayBuffer> {
  const resp = await fetch(`${baseUrl}/${path}`);
  if (!resp.ok) throw new Error(`GET ${path}: ${resp.status}`);
  const buf = await resp.arrayBuffer();
  const head = new Uint8Array(buf, 0, Math.min(2, buf.byteLength));
  if (head.length === 2 && head[0] === 0x1f && head[1] === 0x8b) {
    return gunzip(buf);
  }
  return buf;
}

export function dequantize(q: Uint8Array, lo: number, hi: number): Float32Array {
  const out = new Float32Array(q.length);
  const s = (hi - lo) / 255.0;
  for (let i = 0; i < q.length; i++) out[i] = q[i] * s + lo;
  return out;
}

export function gridFromAtlas(
  atlasBytes: Uint8Array,
  indirection: Uint32Array,
  l: number,
  blockSize: number,
  lo: number,
  hi: number,
): Float32Array {
  const nb = l / blockSize;
  const out = new Float32Array(l * l * l * CHANNELS); // zero-filled
  const s = (hi - lo) / 255.0;
  const blockVoxels = blockSize * blockSize * blockSize * CHANNELS;
  for (let bi = 0; bi < nb; bi++) {
    for (let bj = 0; bj < nb; bj++) {
      for (let bk = 0; bk < nb; bk++) {
        const slot = indirection[(bi * nb + bj) * nb + bk];
        if (slot === EMPTY_SLOT) continue;
        const base = slot * blockVoxels;
        for (let x = 0; x < blockSize; x++) {
          for (let y = 0; y < blockSize; y++) {
            for (let z = 0; z < blockSize; z++) {
              const src = base + ((x * blockSize + y) * blockSize + z) * CHANNELS;
              const gx = bi * blockSize + x;
              const gy = bj * blockSize + y;
              const gz = bk * blockSize + z;
              const dst = ((gx * l + gy) * l + gz) * CHANNELS;
              for (let c = 0; c < CHANNELS; c++) {
                out[dst + c] = atlasBytes[src + c] * s + lo;
              }
            }
          }
        }
      }
    }
  }
  return out;
}

export function parseLattice(
  raw: ArrayBuffer,
  size: number,
  inputDim: number,
  hidden: number,
): Lattice {
  const f32 = new Float32Array(raw);
  const shapes: Array<[keyof MlpParams, number]> = [
    ["w1", inputDim * hidden],
    ["b1", hidden],
    ["w2", hidden * hidden],
    ["b2", hidden],
    ["w3", hidden * 3],
    ["b3", 3],
  ];
  const perVertex = shapes.reduce((acc, [, n]) => acc + n, 0);
  const count = size * size * size;
  if (f32.length !== perVertex * count) {
    throw new Error(`lattice payload: ${f32.length} floats != ${perVertex * count}`);
  }
  const vertices: MlpParams[] = [];
  let off = 0;
  for (let v = 0; v < count; v++) {
    const p: Partial<MlpParams> = { inputDim, hidden };
    for (const [name, n] of shapes) {
      (p as Record<string, unknown>)[name as string] = Float64Array.from(
        f32.subarray(off, off + n),
      );
      off += n;
    }
    vertices.push(p as MlpParams);
  }
  return { size, inputDim, hidden, vertices };
}

function expectBytes(manifest: Manifest, name: string, got: number): void {
  const want = manifest.files[name]?.bytes;
  if (want !== undefined && want !== got) {
    throw new Error(`${name}: payload is ${got} bytes, manifest says ${want}`);
  }
}

/** Decode already-gunzipped payloads into render-ready arrays. */
export function decodeBundle(
  manifest: Manifest,
  payloads: Record<string, ArrayBuffer>,
): Bundle {
  if (manifest.magic !== "smerf-bundle") throw new Error("bad bundle magic");
  if (!manifest.quantized) throw new Error("viewer expects quantized bundles");
  const r = manifest.plane_resolution;
  const l = manifest.grid_resolution;
  const lo = manifest.quantization.lo[0];
  const hi = manifest.quantization.hi[0];

  const planeNames = ["plane_x.bin.gz", "plane_y.bin.gz", "plane_z.bin.gz"];
  const planes = planeNames.map((name) => {
    const bytes = new Uint8Array(payloads[name]);
    expectBytes(manifest, name, bytes.length);
    if (bytes.length !== r * r * CHANNELS) throw new Error(`${name}: wrong size`);
    return dequantize(bytes, lo, hi);
  });

  const indirection = new Uint32Array(payloads["grid_indirection.bin.gz"]);
  expectBytes(manifest, "grid_indirection.bin.gz", indirection.byteLength);
  const atlas = new Uint8Array(payloads["grid_atlas.bin.gz"]);
  expectBytes(manifest, "grid_atlas.bin.gz", atlas.length);
  const grid = gridFromAtlas(atlas, indirection, l, manifest.block_size, lo, hi);

  const distance = new Uint8Array(payloads["distance.bin.gz"]);
  expectBytes(manifest, "distance.bin.gz", distance.length);
  if (distance.length !== l * l * l) throw new Error("distance grid: wrong size");

  const lattice = parseLattice(
    payloads["mlp_lattice.bin.gz"],
    manifest.lattice_size,
    manifest.mlp_input_dim,
    manifest.mlp_hidden,
  );
  return { manifest, planes, grid, distance, lattice };
}

export const BUNDLE_ASSETS = [
  "plane_x.bin.gz",
  "plane_y.bin.gz",
  "plane_z.bin.gz",
  "grid_atlas.bin.gz",
  "grid_indirection.bin.gz",
  "distance.bin.gz",
  "mlp_lattice.bin.gz",
];

/** Fetch, validate, and decode a full submodel bundle. */
export async function fetchBundle(baseUrl: string, cellId: string): Promise<Bundle> {
  const manifestResp = await fetch(`${baseUrl}/submodels/${cellId}/manifest.json`);
  if (!manifestResp.ok) throw new Error(`manifest: ${manifestResp.status}`);
  const manifest = (await manifestResp.json()) as Manifest;
  const payloads: Record<string, ArrayBuffer> = {};
  await Promise.all(
    BUNDLE_ASSETS.map(async (name) => {
      payloads[name] = await fetchAsset(baseUrl, `submodels/${cellId}/${name}`);
    }),
  );
  return decodeBundle(manifest, payloads);
}
