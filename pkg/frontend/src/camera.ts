/** Pinhole camera with fly (WASD + mouse-look) and orbit modes. */

import { Vec3, add, cross, normalize, scale, sub } from "./math.js";

export class Camera {
  position: Vec3;
  lookAt: Vec3;
  up: Vec3 = [0, 0, 1];
  vfovDeg: number;
  width: number;
  height: number;

  constructor(position: Vec3, lookAt: Vec3, vfovDeg = 55, width = 640, height = 480) {
    this.position = position;
    this.lookAt = lookAt;
    this.vfovDeg = vfovDeg;
    this.width = width;
    this.height = height;
  }

  basis(): { forward: Vec3; right: Vec3; trueUp: Vec3 } {
    const forward = normalize(sub(this.lookAt, this.position));
    const right = normalize(cross(forward, this.up));
    const trueUp = cross(right, forward);
    return { forward, right, trueUp };
  }

  /** Unit direction through the center of pixel (row, col). */
  rayDirection(row: number, col: number): Vec3 {
    const { forward, right, trueUp } = this.basis();
    const tanHalf = Math.tan((this.vfovDeg * Math.PI) / 360);
    const aspect = this.width / this.height;
    const ndcX = ((col + 0.5) / this.width) * 2 - 1;
    const ndcY = 1 - ((row + 0.5) / this.height) * 2;
    const d = add(
      add(forward, scale(right, ndcX * tanHalf * aspect)),
      scale(trueUp, ndcY * tanHalf),
    );
    return normalize(d);
  }
}

export interface InputState {
  keys: Set<string>;
  mouseDx: number;
  mouseDy: number;
  orbit: boolean;
}

/** Advance the camera one frame from accumulated input. */
export function stepCamera(cam: Camera, input: InputState, dtSeconds: number): void {
  const speed = 0.6 * dtSeconds;
  const turn = 0.0025;
  const { forward, right } = cam.basis();

  if (input.orbit) {
    const offset = sub(cam.position, cam.lookAt);
    const radius = Math.hypot(offset[0], offset[1], offset[2]);
    let azim = Math.atan2(offset[1], offset[0]) - input.mouseDx * turn;
    let elev = Math.asin(offset[2] / radius) + input.mouseDy * turn;
    elev = Math.min(Math.max(elev, -1.4), 1.4);
    cam.position = add(cam.lookAt, [
      radius * Math.cos(elev) * Math.cos(azim),
      radius * Math.cos(elev) * Math.sin(azim),
      radius * Math.sin(elev),
    ]);
  } else {
    let move: Vec3 = [0, 0, 0];
    if (input.keys.has("w")) move = add(move, forward);
    if (input.keys.has("s")) move = sub(move, forward);
    if (input.keys.has("d")) move = add(move, right);
    if (input.keys.has("a")) move = sub(move, right);
    if (input.keys.has("q")) move = add(move, [0, 0, 1]);
    if (input.keys.has("e")) move = sub(move, [0, 0, 1]);
    if (move[0] || move[1] || move[2]) {
      cam.position = add(cam.position, scale(normalize(move), speed));
      cam.lookAt = add(cam.lookAt, scale(normalize(move), speed));
    }
    if (input.mouseDx || input.mouseDy) {
      const dist = Math.hypot(...sub(cam.lookAt, cam.position));
      const azim = Math.atan2(forward[1], forward[0]) - input.mouseDx * turn;
      const elev = Math.min(
        Math.max(Math.asin(forward[2]) - input.mouseDy * turn, -1.4),
        1.4,
      );
      const nf: Vec3 = [
        Math.cos(elev) * Math.cos(azim),
        Math.cos(elev) * Math.sin(azim),
        Math.sin(elev),
      ];
      cam.lookAt = add(cam.position, scale(nf, dist));
    }
  }
  input.mouseDx = 0;
  input.mouseDy = 0;
}
