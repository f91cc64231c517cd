"""Calibration: two-cell consistency-loss effect on boundary discrepancy."""
import time

import numpy as np

from smerf.cameras import PinholeCamera
from smerf.model import init_scene_model
from smerf.scene import SceneLayout
from smerf.teacher import AnalyticScene, AnalyticTeacher, Box
from smerf.training import TrainConfig, cross_submodel_discrepancy, train


def two_cell_layout():
    return SceneLayout(
        grid_size=2, scale=1.0, center=(0.0, 0.0, 0.0),
        contraction_prescale=0.8, active_cells=((0, 0, 0), (1, 0, 0)),
    )


def cluster_ring(center, look_at, count, radius, width=48, height_px=48, vfov=55.0):
    cams = []
    for i in range(count):
        a = 2 * np.pi * i / count
        pos = np.array(center) + np.array([radius * np.cos(a), radius * np.sin(a), 0.12 * np.sin(2 * a)])
        cams.append(PinholeCamera(position=pos, look_at=np.array(look_at),
                                  up=np.array([0.0, 0.0, 1.0]), vfov_deg=vfov,
                                  width=width, height=height_px))
    return cams


def make_problem(num_intervals=32):
    scene = AnalyticScene(
        primitives=[
            Box(center=[0.0, -0.5, -0.5], size=[0.34, 0.34, 0.34], density=5.0,
                albedo=[0.8, 0.3, 0.15]),
            Box(center=[-0.55, -0.45, -0.5], size=[0.22, 0.22, 0.22], density=5.0,
                albedo=[0.2, 0.5, 0.75]),
            Box(center=[0.55, -0.55, -0.45], size=[0.22, 0.22, 0.22], density=5.0,
                albedo=[0.25, 0.7, 0.3]),
        ],
        background=[0.62, 0.7, 0.85],
        near=0.03, far=2.6,
    )
    teacher = AnalyticTeacher(scene, num_intervals=num_intervals)
    cams = (cluster_ring([-0.5, -0.5, -0.5], [0.0, -0.5, -0.5], 8, 0.33)
            + cluster_ring([0.5, -0.5, -0.5], [0.0, -0.5, -0.5], 8, 0.33))
    boundary = [
        PinholeCamera(position=[0.0, -0.85, -0.5], look_at=[0.0, -0.45, -0.5],
                      up=[0, 0, 1], vfov_deg=60, width=48, height=48),
        PinholeCamera(position=[0.02, -0.5, -0.88], look_at=[0.0, -0.5, -0.45],
                      up=[0, 1, 0], vfov_deg=60, width=48, height=48),
        PinholeCamera(position=[-0.03, -0.8, -0.75], look_at=[0.0, -0.5, -0.5],
                      up=[0, 0, 1], vfov_deg=60, width=48, height=48),
    ]
    return teacher, cams, boundary


def run(consistency_weight, steps, seed=0):
    layout = two_cell_layout()
    teacher, cams, boundary = make_problem()
    model = init_scene_model(np.random.default_rng(seed), layout,
                             plane_res=64, grid_res=16, lattice_size=2)
    cfg = TrainConfig(steps=steps, patches_per_batch=32, num_intervals=32,
                      consistency_weight=consistency_weight, seed=seed)
    t0 = time.time()
    train(model, teacher, cams, cfg)
    disc = cross_submodel_discrepancy(model, boundary, teacher.near, teacher.far, 32)
    print(f"weight={consistency_weight}: discrepancy {disc:.5f} "
          f"({time.time()-t0:.0f}s)", flush=True)
    return disc


if __name__ == "__main__":
    import sys

    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 700
    d_off = run(0.0, steps)
    d_on = run(1.0, steps)
    print(f"ratio: {d_off / max(d_on, 1e-9):.2f}x")
