"""Diagnose the one-box distillation error structure."""
import sys
import time

import numpy as np

from smerf.configs import SceneConfig, build_pipeline, init_model_for
from smerf.model import load_model, save_model
from smerf.rendering import TrainRenderScene, render_image
from smerf.training import evaluate_psnr, render_teacher_image, train, weight_threshold

CFG = {
    "name": "one-box",
    "seed": 0,
    "grid_size": 1,
    "lattice_size": 2,
    "plane_resolution": 128,
    "grid_resolution": 32,
    "teacher": {
        "background": [0.62, 0.71, 0.86],
        "near": 0.05,
        "far": 3.4,
        "primitives": [
            {"kind": "box", "center": [0, 0, 0], "size": [0.7, 0.7, 0.7],
             "density": 5.0, "albedo": [0.78, 0.24, 0.16],
             "specular": {"color": [0.25, 0.25, 0.25], "light": [0.3, -0.5, -0.8], "power": 6.0}},
        ],
    },
    "cameras": {"kind": "ring", "count": 14, "radius": 1.1, "height": 0.5,
                "width": 64, "height_px": 64, "vfov_deg": 42},
    "eval_cameras": {"kind": "ring", "count": 4, "radius": 1.1, "height": 0.5,
                     "width": 64, "height_px": 64, "vfov_deg": 42, "phase": 0.21},
    "train": {"steps": 2000, "patches_per_batch": 64, "num_intervals": 32,
              "eval_every": 1000},
}


def main():
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    CFG["train"]["steps"] = steps
    cfg = SceneConfig.from_dict(CFG)
    pipeline = build_pipeline(cfg)
    model = init_model_for(pipeline)
    t0 = time.time()

    def log(row):
        if row["step"] % 100 == 0 or row["psnr"] != "":
            print(f"step {row['step']:5d} loss {row['loss']:.4f} rgb {row['loss_rgb']:.4f} "
                  f"geo {row['loss_geometry']:.4f} psnr {row['psnr']} "
                  f"[{time.time()-t0:.0f}s]", flush=True)

    train(model, pipeline.teacher, pipeline.train_cameras, pipeline.train_config,
          eval_cameras=pipeline.eval_cameras, log_fn=log)
    save_model("/tmp/onebox.npz", model, extra_meta={"config": cfg.to_dict()})

    teacher = pipeline.teacher
    near, far = teacher.near, teacher.far
    for thr in (0.0, 5e-3):
        p = evaluate_psnr(model, teacher, pipeline.eval_cameras, near, far, 32, thr)
        print(f"psnr threshold={thr}: {p:.2f} dB")

    # error structure on the first eval camera
    cam = pipeline.eval_cameras[0]
    scene = TrainRenderScene(model=model, near=near, far=far, num_intervals=32)
    student = render_image(cam, scene, weight_threshold=0.0)
    ref = render_teacher_image(teacher, cam)
    err = np.abs(student - ref).max(axis=2)
    print(f"err mean {err.mean():.4f} p50 {np.percentile(err,50):.4f} "
          f"p99 {np.percentile(err,99):.4f} max {err.max():.4f}")
    # where are the worst pixels: distance to nearest 'edge' (teacher gradient)
    gy, gx = np.gradient(ref.mean(axis=2))
    edge = np.hypot(gx, gy) > 0.02
    print(f"edge pixels: {edge.mean()*100:.1f}%; mean err on edge {err[edge].mean():.4f} "
          f"vs off-edge {err[~edge].mean():.4f}")
    mse_edge = (np.abs(student - ref)[edge] ** 2).mean() * edge.mean()
    mse_off = (np.abs(student - ref)[~edge] ** 2).mean() * (1 - edge.mean())
    print(f"MSE split: edge {mse_edge:.2e} off-edge {mse_off:.2e}")
    print(f"PSNR if edges were perfect: {-10*np.log10(mse_off):.2f}")


if __name__ == "__main__":
    main()
