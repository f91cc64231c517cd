"""Generate viewer test fixtures: a small baked scene plus golden renders
from the reference CPU renderer.

Run from the repository root (the smerf package must be importable):
    python3 frontend/scripts/make_testdata.py
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "..", "src"))

from smerf.appearance import init_lattice, mlp_input_dim  # noqa: E402
from smerf.baking import BakeOptions, bake_scene, load_bundle  # noqa: E402
from smerf.cameras import PinholeCamera, ring_cameras  # noqa: E402
from smerf.model import SceneModel, Submodel, init_scene_model  # noqa: E402
from smerf.rendering import BakedRenderScene, render_image  # noqa: E402
from smerf.scene import SceneLayout  # noqa: E402

OUT = os.path.join(os.path.dirname(__file__), "..", "testdata")


def build_model():
    layout = SceneLayout(
        grid_size=1, scale=1.0, center=(0.0, 0.0, 0.0),
        contraction_prescale=1.0, active_cells=((0, 0, 0),),
    )
    rng = np.random.default_rng(12)
    model = init_scene_model(rng, layout, plane_res=32, grid_res=16, lattice_size=2,
                             vertex_noise=0.25)
    g = model.submodels[(0, 0, 0)].grid.values
    g[..., 0] = -60.0
    g[5:11, 5:11, 5:11, 0] = 2.5
    g[5:11, 5:11, 5:11, 1] = 1.5   # warm diffuse
    g[5:11, 5:11, 5:11, 2] = -0.5
    g[8:14, 3:7, 8:12, 0] = 3.5
    g[8:14, 3:7, 8:12, 2] = 2.0    # second blob, green diffuse
    for p in model.submodels[(0, 0, 0)].triplanes.planes:
        p *= 3.0  # visible high-frequency detail
    return model


def main():
    model = build_model()
    cams = ring_cameras(4, radius=0.45, height=0.1, width=16, image_height=16)
    scene_dir = os.path.join(OUT, "scene")
    bake_scene(model, cams, scene_dir, BakeOptions(seed=0))

    bundle = load_bundle(os.path.join(scene_dir, "submodels", "0_0_0"))
    layout = SceneLayout.from_dict(bundle.manifest["layout"])
    baked = BakedRenderScene(layout=layout, assets={(0, 0, 0): bundle.assets})

    golden_dir = os.path.join(OUT, "golden")
    os.makedirs(golden_dir, exist_ok=True)
    goldens = []
    render_cams = ring_cameras(5, radius=0.42, height=0.12, width=48, image_height=48,
                               vfov_deg=55.0, phase=0.3)
    for i, cam in enumerate(render_cams):
        img = render_image(cam, baked)  # defaults: skip on, early term 2e-3
        raw = img.astype("<f4").tobytes()
        with open(os.path.join(golden_dir, f"cam{i}.f32"), "wb") as f:
            f.write(raw)
        goldens.append({
            "file": f"cam{i}.f32",
            "position": list(cam.position), "look_at": list(cam.look_at),
            "up": list(cam.up), "vfov_deg": cam.vfov_deg,
            "width": cam.width, "height": cam.height,
        })
    with open(os.path.join(golden_dir, "cameras.json"), "w") as f:
        json.dump(goldens, f, indent=1)
    print(f"wrote scene + {len(goldens)} goldens under {os.path.abspath(OUT)}")


if __name__ == "__main__":
    main()
