/** Node-side fixture loading for the vitest suites. */

import { gunzipSync } from "node:zlib";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { BUNDLE_ASSETS, Bundle, Manifest, SceneIndex, decodeBundle } from "../src/assets.js";

const here = dirname(fileURLToPath(import.meta.url));
export const TESTDATA = join(here, "..", "testdata");

export function loadSceneIndex(): SceneIndex {
  return JSON.parse(readFileSync(join(TESTDATA, "scene", "scene.json"), "utf8"));
}

export function loadManifest(cellId = "0_0_0"): Manifest {
  return JSON.parse(
    readFileSync(join(TESTDATA, "scene", "submodels", cellId, "manifest.json"), "utf8"),
  );
}

export function loadPayloads(cellId = "0_0_0"): Record<string, ArrayBuffer> {
  const payloads: Record<string, ArrayBuffer> = {};
  for (const name of BUNDLE_ASSETS) {
    const raw = gunzipSync(
      readFileSync(join(TESTDATA, "scene", "submodels", cellId, name)),
    );
    payloads[name] = raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength);
  }
  return payloads;
}

export function loadBundle(cellId = "0_0_0"): Bundle {
  return decodeBundle(loadManifest(cellId), loadPayloads(cellId));
}

export interface GoldenCamera {
  file: string;
  position: [number, number, number];
  look_at: [number, number, number];
  up: [number, number, number];
  vfov_deg: number;
  width: number;
  height: number;
}

export function loadGoldens(): Array<{ cam: GoldenCamera; pixels: Float32Array }> {
  const cams: GoldenCamera[] = JSON.parse(
    readFileSync(join(TESTDATA, "golden", "cameras.json"), "utf8"),
  );
  return cams.map((cam) => {
    const raw = readFileSync(join(TESTDATA, "golden", cam.file));
    return {
      cam,
      pixels: new Float32Array(raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength)),
    };
  });
}
