import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smerf.baking import BakeOptions, bake_scene
from smerf.cameras import ring_cameras, save_trajectory
from smerf.model import init_scene_model
from smerf.scene import SceneLayout


def blob_model(rng, plane_res=16, grid_res=16):
    """A single-cell model with a solid blob, as if lightly trained."""
    layout = SceneLayout(
        grid_size=1, scale=1.0, center=(0.0, 0.0, 0.0),
        contraction_prescale=1.0, active_cells=((0, 0, 0),),
    )
    model = init_scene_model(rng, layout, plane_res, grid_res, lattice_size=2)
    g = model.submodels[(0, 0, 0)].grid.values
    g[..., 0] = -60.0
    lo, hi = grid_res // 2 - 2, grid_res // 2 + 2
    g[lo:hi, lo:hi, lo:hi, 0] = 3.0
    g[lo:hi, lo:hi, lo:hi, 1] = 2.0
    return model


@pytest.fixture(scope="session")
def baked_scene_root(tmp_path_factory):
    rng = np.random.default_rng(0)
    model = blob_model(rng)
    cams = ring_cameras(4, radius=0.45, height=0.0, width=16, image_height=16)
    root = tmp_path_factory.mktemp("baked") / "scene"
    bake_scene(model, cams, str(root), BakeOptions(seed=0))
    return root


@pytest.fixture()
def tiny_config(tmp_path):
    cfg = {
        "name": "tiny-box",
        "seed": 3,
        "grid_size": 1,
        "lattice_size": 2,
        "plane_resolution": 16,
        "grid_resolution": 16,
        "teacher": {
            "background": [0.6, 0.7, 0.85],
            "near": 0.05,
            "far": 1.6,
            "primitives": [
                {"kind": "box", "center": [0, 0, 0], "size": [0.4, 0.4, 0.4],
                 "density": 8.0, "albedo": [0.8, 0.25, 0.15]}
            ],
        },
        "cameras": {"kind": "ring", "count": 4, "radius": 0.4, "height": 0.15,
                    "width": 16, "height_px": 16},
        "eval_cameras": {"kind": "ring", "count": 2, "radius": 0.4, "height": 0.15,
                         "width": 12, "height_px": 12, "phase": 0.7},
        "train": {"steps": 8, "patches_per_batch": 2, "num_intervals": 8,
                  "eval_resolution": 12},
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture()
def one_frame_trajectory(tmp_path):
    cams = ring_cameras(1, radius=0.45, height=0.0, width=16, image_height=16)
    path = tmp_path / "traj.txt"
    save_trajectory(path, cams)
    return path
