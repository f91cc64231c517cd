"""Calibration: feature gating vs plain-sum aggregation on a wall+texture scene."""
import time

import numpy as np

from smerf.cameras import ring_cameras
from smerf.model import init_scene_model
from smerf.scene import SceneLayout
from smerf.teacher import AnalyticScene, AnalyticTeacher, Box
from smerf.training import TrainConfig, evaluate_psnr, train


def checker_boxes(center, extent, tiles, albedo_a, albedo_b, density=6.0, depth=0.1):
    """A tiles x tiles checkerboard of thin boxes in the x-y plane."""
    out = []
    tile = extent / tiles
    for i in range(tiles):
        for j in range(tiles):
            albedo = albedo_a if (i + j) % 2 == 0 else albedo_b
            out.append(Box(
                center=[center[0] - extent / 2 + (i + 0.5) * tile,
                        center[1] - extent / 2 + (j + 0.5) * tile,
                        center[2]],
                size=[tile, tile, depth],
                density=density, albedo=albedo,
            ))
    return out


def make_problem():
    prims = [
        # flat-color wall behind everything
        Box(center=[0.0, 0.0, 0.55], size=[1.7, 1.7, 0.12], density=8.0,
            albedo=[0.72, 0.72, 0.68]),
    ]
    # textured object: a checkered slab floating in front of the wall
    prims += checker_boxes([0.0, 0.0, 0.0], extent=0.6, tiles=4,
                           albedo_a=[0.85, 0.2, 0.15], albedo_b=[0.15, 0.3, 0.8])
    scene = AnalyticScene(primitives=prims, background=[0.6, 0.7, 0.85],
                          near=0.05, far=3.2)
    teacher = AnalyticTeacher(scene, num_intervals=32)
    cams = ring_cameras(12, radius=1.0, height=-0.6, look_at=(0, 0, 0.1),
                        width=64, image_height=64, vfov_deg=48)
    evals = ring_cameras(3, radius=1.0, height=-0.6, look_at=(0, 0, 0.1),
                         width=64, image_height=64, vfov_deg=48, phase=0.3)
    return teacher, cams, evals


def run(gated, steps, seed=0):
    from smerf.scene import normalize_cameras

    teacher, cams, evals = make_problem()
    layout = normalize_cameras([c.position for c in cams], 1)
    cams_n = [c.transformed(layout.world_to_normalized) for c in cams]
    evals_n = [c.transformed(layout.world_to_normalized) for c in evals]
    scene_n = teacher.scene.normalized(layout)
    teacher_n = AnalyticTeacher(scene_n, num_intervals=32)
    model = init_scene_model(np.random.default_rng(seed), layout,
                             plane_res=64, grid_res=16, lattice_size=2, gated=gated)
    cfg = TrainConfig(steps=steps, patches_per_batch=32, num_intervals=32, seed=seed)
    t0 = time.time()
    train(model, teacher_n, cams_n, cfg)
    psnr = evaluate_psnr(model, teacher_n, evals_n, teacher_n.near, teacher_n.far,
                         32, threshold=5e-3)
    print(f"gated={gated}: psnr {psnr:.2f} dB ({time.time()-t0:.0f}s)", flush=True)
    return psnr


if __name__ == "__main__":
    import sys

    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 700
    p_merf = run(False, steps)
    p_gated = run(True, steps)
    print(f"gated - merf = {p_gated - p_merf:+.2f} dB")
