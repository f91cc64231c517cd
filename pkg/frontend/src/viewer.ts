/** Interactive viewer: WebGL2 marcher with client-side streaming.
 *
 * Per frame: consume input, drive the streaming state machine from the
 * camera origin, trilerp the active bundle's MLP parameters on the CPU,
 * upload them as uniforms, and draw one full-screen triangle. Bundle
 * fetches and decodes run off the render path; GPU state mutates only
 * between frames. A scalar-CPU fallback (?debug=cpu) renders through the
 * same march for parity debugging.
 */

import { Bundle, SceneIndex, fetchBundle, layoutFromJson } from "./assets.js";
import { Camera, InputState, stepCamera } from "./camera.js";
import { EARLY_TERMINATION, marchRay } from "./marcher.js";
import { Layout, Vec3, cellKey, worldToSubmodel } from "./math.js";
import { interpolateParams } from "./mlp.js";
import { Action, RETRY_CAP_S, StreamerState } from "./streaming.js";
import { VERTEX_SHADER, fragmentShaderSource } from "./shader.js";

interface GpuBundle {
  bundle: Bundle;
  program: WebGLProgram;
  textures: WebGLTexture[];
}

export interface ViewerStats {
  fps: number;
  cell: string;
  resident: number;
  bytesFetched: number;
  fetching: string;
}

export class Viewer {
  private gl: WebGL2RenderingContext | null;
  private canvas: HTMLCanvasElement;
  private layout: Layout;
  private streamer: StreamerState;
  private bundles = new Map<string, Bundle>();
  private gpuBundles = new Map<string, GpuBundle>();
  private baseUrl: string;
  private camera: Camera;
  private input: InputState = { keys: new Set(), mouseDx: 0, mouseDy: 0, orbit: false };
  private bytesFetched = 0;
  private fetching = "";
  private frames = 0;
  private lastFpsTime = performance.now();
  private fps = 0;
  private cpuDebug: boolean;
  private hud: HTMLElement | null;
  private exposure: number;

  constructor(
    canvas: HTMLCanvasElement,
    scene: SceneIndex,
    baseUrl: string,
    opts: { startPos?: Vec3; cpuDebug?: boolean; hud?: HTMLElement | null; exposure?: number } = {},
  ) {
    this.canvas = canvas;
    this.baseUrl = baseUrl;
    this.layout = layoutFromJson(scene.layout);
    this.streamer = new StreamerState(this.layout, 4);
    this.cpuDebug = opts.cpuDebug ?? false;
    this.hud = opts.hud ?? null;
    this.exposure = opts.exposure ?? 0;
    const start = opts.startPos ?? [0, 0, 0];
    this.camera = new Camera(start, [start[0], start[1] + 1, start[2]], 55,
                             canvas.width, canvas.height);
    this.gl = this.cpuDebug ? null : canvas.getContext("webgl2");
    if (!this.cpuDebug && !this.gl) {
      throw new Error("WebGL2 unavailable; retry with ?debug=cpu");
    }
    this.bindInput();
  }

  private bindInput(): void {
    window.addEventListener("keydown", (e) => {
      if (e.key === "o") this.input.orbit = !this.input.orbit;
      this.input.keys.add(e.key.toLowerCase());
    });
    window.addEventListener("keyup", (e) => this.input.keys.delete(e.key.toLowerCase()));
    this.canvas.addEventListener("mousemove", (e) => {
      if (e.buttons & 1) {
        this.input.mouseDx += e.movementX;
        this.input.mouseDy += e.movementY;
      }
    });
  }

  private handleActions(actions: Action[]): void {
    for (const a of actions) {
      if (a.kind === "fetch") {
        this.startFetch(a.cell, 0);
      } else if (a.kind === "evict") {
        const key = cellKey(a.cell);
        if (a.tier === "cpu") {
          this.bundles.delete(key);
          this.releaseGpu(key);
        } else {
          this.releaseGpu(key);
        }
      }
    }
  }

  private releaseGpu(key: string): void {
    const active = this.streamer.active;
    if (active && cellKey(active) === key) return; // never drop the renderer
    const res = this.gpuBundles.get(key);
    if (res && this.gl) {
      for (const t of res.textures) this.gl.deleteTexture(t);
      this.gl.deleteProgram(res.program);
    }
    this.gpuBundles.delete(key);
  }

  private startFetch(cell: Vec3, attempt: number): void {
    const key = cellKey(cell);
    this.fetching = key;
    fetchBundle(this.baseUrl, key)
      .then((bundle) => {
        this.bundles.set(key, bundle);
        this.bytesFetched += Object.values(bundle.manifest.files).reduce(
          (acc, f) => acc + f.bytes, 0);
        this.fetching = "";
        this.handleActions(
          this.streamer.onFetchComplete(cell, this.camera.position).actions,
        );
      })
      .catch(() => {
        const d = this.streamer.onFetchFailed(cell);
        const delay = d.actions[0]?.delayS ?? RETRY_CAP_S;
        setTimeout(() => this.startFetch(cell, attempt + 1), delay * 1000);
      });
  }

  start(): void {
    this.handleActions(this.streamer.onCamera(this.camera.position).actions);
    let last = performance.now();
    const tick = () => {
      const now = performance.now();
      stepCamera(this.camera, this.input, Math.min((now - last) / 1000, 0.1));
      last = now;
      this.renderFrame();
      requestAnimationFrame(tick);
    };
    requestAnimationFrame(tick);
  }

  renderFrame(): void {
    const decision = this.streamer.onCamera(this.camera.position);
    this.handleActions(decision.actions);
    const cell = decision.renderWith;
    if (!cell) {
      this.updateHud("loading…");
      return;
    }
    const bundle = this.bundles.get(cellKey(cell));
    if (!bundle) return; // never render a partially loaded bundle
    const originLocal = worldToSubmodel(this.layout, cell, this.camera.position);
    const params = interpolateParams(bundle.lattice, originLocal);

    if (this.cpuDebug || !this.gl) {
      this.renderCpu(bundle, params, originLocal);
    } else {
      this.renderGl(cellKey(cell), bundle, params, originLocal);
    }

    this.frames++;
    const now = performance.now();
    if (now - this.lastFpsTime > 500) {
      this.fps = (this.frames * 1000) / (now - this.lastFpsTime);
      this.frames = 0;
      this.lastFpsTime = now;
    }
    this.updateHud(cellKey(cell));
  }

  private renderCpu(bundle: Bundle, params: ReturnType<typeof interpolateParams>,
                    originLocal: Vec3): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const w = Math.min(this.canvas.width, 160);
    const h = Math.min(this.canvas.height, 120);
    const probe = new Camera(this.camera.position, this.camera.lookAt,
                             this.camera.vfovDeg, w, h);
    const img = ctx.createImageData(w, h);
    for (let row = 0; row < h; row++) {
      for (let col = 0; col < w; col++) {
        const dir = probe.rayDirection(row, col);
        const { rgb } = marchRay(bundle, params, originLocal, dir, true, EARLY_TERMINATION);
        const o = (row * w + col) * 4;
        img.data[o] = Math.round(rgb[0] * 255);
        img.data[o + 1] = Math.round(rgb[1] * 255);
        img.data[o + 2] = Math.round(rgb[2] * 255);
        img.data[o + 3] = 255;
      }
    }
    ctx.putImageData(img, 0, 0);
  }

  private renderGl(key: string, bundle: Bundle,
                   params: ReturnType<typeof interpolateParams>, originLocal: Vec3): void {
    const gl = this.gl!;
    let res = this.gpuBundles.get(key);
    if (!res) {
      res = uploadBundle(gl, bundle);
      this.gpuBundles.set(key, res);
    }
    gl.viewport(0, 0, this.canvas.width, this.canvas.height);
    gl.useProgram(res.program);

    const { forward, right, trueUp } = this.camera.basis();
    const tan = Math.tan((this.camera.vfovDeg * Math.PI) / 360);
    const aspect = this.canvas.width / this.canvas.height;
    gl.uniform3fv(gl.getUniformLocation(res.program, "cameraPos"), originLocal);
    gl.uniformMatrix3fv(gl.getUniformLocation(res.program, "cameraBasis"), false, [
      right[0], right[1], right[2],
      trueUp[0], trueUp[1], trueUp[2],
      forward[0], forward[1], forward[2],
    ]);
    gl.uniform2f(gl.getUniformLocation(res.program, "tanHalf"), tan * aspect, tan);
    const names: Array<[string, Float64Array]> = [
      ["w1", params.w1], ["b1", params.b1], ["w2", params.w2],
      ["b2", params.b2], ["w3", params.w3], ["b3", params.b3],
    ];
    for (const [name, arr] of names) {
      gl.uniform1fv(gl.getUniformLocation(res.program, name), Float32Array.from(arr));
    }
    for (let unit = 0; unit < res.textures.length; unit++) {
      gl.activeTexture(gl.TEXTURE0 + unit);
      const is3d = unit >= 6;
      gl.bindTexture(is3d ? gl.TEXTURE_3D : gl.TEXTURE_2D, res.textures[unit]);
    }
    gl.drawArrays(gl.TRIANGLES, 0, 3);
  }

  private updateHud(cell: string): void {
    if (!this.hud) return;
    this.hud.textContent =
      `fps ${this.fps.toFixed(1)} | cell ${cell} | resident ` +
      `${this.streamer.cpuCells.length} | fetched ` +
      `${(this.bytesFetched / 1e6).toFixed(1)} MB` +
      (this.fetching ? ` | fetching ${this.fetching}` : "");
  }

  stats(): ViewerStats {
    return {
      fps: this.fps,
      cell: this.streamer.active ? cellKey(this.streamer.active) : "",
      resident: this.streamer.cpuCells.length,
      bytesFetched: this.bytesFetched,
      fetching: this.fetching,
    };
  }
}

const SAMPLER_NAMES = [
  "planeX0", "planeX1", "planeY0", "planeY1", "planeZ0", "planeZ1",
  "grid0", "grid1", "distanceGrid",
];

function compile(gl: WebGL2RenderingContext, kind: number, src: string): WebGLShader {
  const sh = gl.createShader(kind)!;
  gl.shaderSource(sh, src);
  gl.compileShader(sh);
  if (!gl.getShaderParameter(sh, gl.COMPILE_STATUS)) {
    const log = gl.getShaderInfoLog(sh);
    throw new Error(`shader compile failed: ${log}`);
  }
  return sh;
}

function planeBytes(plane: Float32Array, r: number, half: number,
                    lo: number, hi: number): Uint8Array {
  const out = new Uint8Array(r * r * 4);
  const s = 255 / (hi - lo);
  for (let i = 0; i < r * r; i++) {
    for (let c = 0; c < 4; c++) {
      out[i * 4 + c] = Math.round((plane[i * 8 + half * 4 + c] - lo) * s);
    }
  }
  return out;
}

function gridBytes(grid: Float32Array, l: number, half: number,
                   lo: number, hi: number): Uint8Array {
  const out = new Uint8Array(l * l * l * 4);
  const s = 255 / (hi - lo);
  for (let i = 0; i < l * l * l; i++) {
    for (let c = 0; c < 4; c++) {
      out[i * 4 + c] = Math.round((grid[i * 8 + half * 4 + c] - lo) * s);
    }
  }
  return out;
}

export function uploadBundle(gl: WebGL2RenderingContext, bundle: Bundle): GpuBundle {
  const m = bundle.manifest;
  const r = m.plane_resolution;
  const l = m.grid_resolution;
  const lo = m.quantization.lo[0];
  const hi = m.quantization.hi[0];
  const program = gl.createProgram()!;
  gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERTEX_SHADER));
  gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, fragmentShaderSource(bundle)));
  gl.linkProgram(program);
  if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
    throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
  }
  gl.useProgram(program);
  const textures: WebGLTexture[] = [];
  const make2d = (data: Uint8Array): WebGLTexture => {
    const tex = gl.createTexture()!;
    gl.bindTexture(gl.TEXTURE_2D, tex);
    gl.texImage2D(gl.TEXTURE_2D, 0, gl.RGBA8, r, r, 0, gl.RGBA, gl.UNSIGNED_BYTE, data);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.LINEAR);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.LINEAR);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);
    return tex;
  };
  const make3d = (data: Uint8Array, internal: number, format: number,
                  type: number, filter: number): WebGLTexture => {
    const tex = gl.createTexture()!;
    gl.bindTexture(gl.TEXTURE_3D, tex);
    gl.texImage3D(gl.TEXTURE_3D, 0, internal, l, l, l, 0, format, type, data);
    gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_MIN_FILTER, filter);
    gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_MAG_FILTER, filter);
    gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
    gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);
    gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_WRAP_R, gl.CLAMP_TO_EDGE);
    return tex;
  };
  for (const plane of bundle.planes) {
    textures.push(make2d(planeBytes(plane, r, 0, lo, hi)));
    textures.push(make2d(planeBytes(plane, r, 1, lo, hi)));
  }
  textures.push(make3d(gridBytes(bundle.grid, l, 0, lo, hi), gl.RGBA8, gl.RGBA,
                       gl.UNSIGNED_BYTE, gl.LINEAR));
  textures.push(make3d(gridBytes(bundle.grid, l, 1, lo, hi), gl.RGBA8, gl.RGBA,
                       gl.UNSIGNED_BYTE, gl.LINEAR));
  textures.push(make3d(bundle.distance, gl.R8UI, gl.RED_INTEGER,
                       gl.UNSIGNED_BYTE, gl.NEAREST));
  for (let unit = 0; unit < SAMPLER_NAMES.length; unit++) {
    gl.uniform1i(gl.getUniformLocation(program, SAMPLER_NAMES[unit]), unit);
  }
  return { bundle, program, textures };
}
