"""Calibration: one-box distillation run at acceptance-scale settings."""
import time

import numpy as np

from smerf.cameras import ring_cameras
from smerf.configs import SceneConfig, build_pipeline, init_model_for
from smerf.training import train


def main():
    cfg = SceneConfig.from_dict({
        "name": "one-box",
        "seed": 0,
        "grid_size": 1,
        "lattice_size": 2,
        "plane_resolution": 128,
        "grid_resolution": 32,
        "teacher": {
            "background": [0.62, 0.71, 0.86],
            "near": 0.05,
            "far": 4.2,
            "primitives": [
                {"kind": "box", "center": [0, 0, 0], "size": [0.55, 0.55, 0.55],
                 "density": 9.0, "albedo": [0.78, 0.24, 0.16],
                 "specular": {"color": [0.25, 0.25, 0.25], "light": [0.3, -0.5, -0.8], "power": 6.0}},
                {"kind": "sphere", "center": [0.45, 0.35, 0.3], "radius": 0.18,
                 "density": 12.0, "albedo": [0.2, 0.55, 0.3]},
            ],
        },
        "cameras": {"kind": "ring", "count": 14, "radius": 1.25, "height": 0.55,
                    "width": 64, "height_px": 64, "vfov_deg": 50},
        "eval_cameras": {"kind": "ring", "count": 4, "radius": 1.25, "height": 0.55,
                         "width": 64, "height_px": 64, "vfov_deg": 50, "phase": 0.21},
        "train": {"steps": 2000, "patches_per_batch": 64, "num_intervals": 32,
                  "eval_every": 250},
    })
    pipeline = build_pipeline(cfg)
    model = init_model_for(pipeline)
    t0 = time.time()

    def log(row):
        if row["step"] % 50 == 0 or row["psnr"] != "":
            dt = time.time() - t0
            print(f"step {row['step']:5d} loss {row['loss']:.4f} "
                  f"rgb {row['loss_rgb']:.4f} geo {row['loss_geometry']:.4f} "
                  f"psnr {row['psnr']} [{dt:.0f}s]", flush=True)

    metrics = train(model, pipeline.teacher, pipeline.train_cameras,
                    pipeline.train_config, eval_cameras=pipeline.eval_cameras, log_fn=log)
    print(f"final psnr: {metrics[-1]['psnr']:.2f} dB in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
