/** Entry point: wire URL params to the viewer.
 *
 * URL params: ?scene=<asset service base url>&pos=x,y,z&quality=full|half
 * &debug=cpu (scalar fallback renderer).
 */

import { SceneIndex } from "./assets.js";
import { Vec3 } from "./math.js";
import { Viewer } from "./viewer.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = (params.get("scene") ?? window.location.origin).replace(/\/$/, "");
  const resp = await fetch(`${base}/scene.json`);
  if (!resp.ok) throw new Error(`scene.json: ${resp.status}`);
  const scene = (await resp.json()) as SceneIndex;

  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const hud = document.getElementById("hud");
  const quality = params.get("quality") ?? "full";
  const scaleDown = quality === "half" ? 2 : 1;
  canvas.width = Math.floor(window.innerWidth / scaleDown);
  canvas.height = Math.floor(window.innerHeight / scaleDown);

  let startPos: Vec3 | undefined;
  const pos = params.get("pos");
  if (pos) {
    const xyz = pos.split(",").map(Number);
    if (xyz.length === 3 && xyz.every(Number.isFinite)) {
      startPos = xyz as Vec3;
    }
  }

  const viewer = new Viewer(canvas, scene, base, {
    startPos,
    cpuDebug: params.get("debug") === "cpu",
    hud,
  });
  viewer.start();
}

boot().catch((err) => {
  const hud = document.getElementById("hud");
  if (hud) hud.textContent = `error: ${err.message ?? err}`;
  console.error(err);
});
