"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
report. The distillation end-to-end runs train real models and dominate
the runtime (several minutes on a laptop CPU).
"""

import time

import numpy as np
import pytest

from helpers import grid_layout, make_instance
from smerf.appearance import init_lattice, interpolate_params, mlp_input_dim
from smerf.baking import (
    BakeOptions,
    OccupancyGrid,
    bake_scene,
    build_distance_grid,
    dequantize,
    downsample_max,
    load_bundle,
    median_filter_27,
    quantize,
)
from smerf.cameras import PinholeCamera, ring_cameras
from smerf.configs import SceneConfig, build_pipeline, init_model_for
from smerf.rendering import (
    BakedRenderScene,
    TrainRenderScene,
    compositing_forward,
    march_rays_baked,
    render_image,
)
from smerf.scene import Ray, contract
from smerf.streaming import ReferenceLru, StreamerState
from smerf.teacher import AnalyticScene, AnalyticTeacher, Box, Specular, Sphere, teacher_query
from smerf.training import TrainConfig, cross_submodel_discrepancy, train
from smerf.util import sigmoid
from smerf.verify import build_distance_grid_reference, check_gradients


def report(name, detail=""):
    print(f"[PASS] {name}" + (f": {detail}" if detail else ""), flush=True)


# settled by calibration: a box soft enough that its silhouette is
# resolvable by 32-interval quadrature at R=128 (a near-step density
# profile caps held-out PSNR at the low 30s regardless of training)
ONE_BOX_CONFIG = {
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
             "specular": {"color": [0.25, 0.25, 0.25],
                          "light": [0.3, -0.5, -0.8], "power": 6.0}},
        ],
    },
    "cameras": {"kind": "ring", "count": 14, "radius": 1.1, "height": 0.5,
                "width": 64, "height_px": 64, "vfov_deg": 42},
    "eval_cameras": {"kind": "ring", "count": 4, "radius": 1.1, "height": 0.5,
                     "width": 64, "height_px": 64, "vfov_deg": 42, "phase": 0.21},
    "train": {"steps": 2000, "patches_per_batch": 64, "num_intervals": 32},
}

RUNTIMES = {}

# step counts for the smaller distillation runs, set with the calibration
# scripts so each criterion passes with margin on a laptop CPU
TWO_CELL_STEPS = 1200
ABLATION_STEPS = 600


@pytest.fixture(scope="session")
def one_box_run():
    cfg = SceneConfig.from_dict(ONE_BOX_CONFIG)
    pipeline = build_pipeline(cfg)
    from smerf.configs import init_model_for

    model = init_model_for(pipeline)
    t0 = time.time()
    metrics = train(model, pipeline.teacher, pipeline.train_cameras,
                    pipeline.train_config, eval_cameras=pipeline.eval_cameras)
    RUNTIMES["one_box_train"] = time.time() - t0
    return {"pipeline": pipeline, "model": model, "metrics": metrics}


@pytest.fixture(scope="session")
def one_box_assets(one_box_run, tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_bake")
    model = one_box_run["model"]
    pipeline = one_box_run["pipeline"]
    t0 = time.time()
    bake_scene(model, pipeline.train_cameras, str(root / "q"), BakeOptions(seed=0))
    bake_scene(model, pipeline.train_cameras, str(root / "f"),
               BakeOptions(seed=0, quantize=False))
    RUNTIMES["one_box_bake"] = time.time() - t0
    quantized = load_bundle(str(root / "q" / "submodels" / "0_0_0")).assets
    floating = load_bundle(str(root / "f" / "submodels" / "0_0_0")).assets
    return {
        "layout": model.layout,
        "quantized": quantized,
        "float": floating,
        "eval_cameras": pipeline.eval_cameras,
    }


# ---------------------------------------------------------------------------
# criterion: gradient suite


class TestGradientSuite:
    def test_twenty_random_instances(self):
        t0 = time.time()
        worst = 0.0
        rng = np.random.default_rng(2024)
        for seed in range(20):
            tiled = seed % 3 == 1
            exposure = seed % 5 == 2
            gated = seed % 4 != 3
            model, batch, tc, tb, tw, cfg = make_instance(
                seed=seed, tiled=tiled, exposure=exposure, gated=gated,
                plane_res=8, grid_res=4, lattice_size=2, intervals=3,
            )
            w, failures = check_gradients(
                model, batch, tc, tb, tw, cfg, rng, entries_per_tensor=4, rtol=1e-4,
            )
            assert not failures, failures[:3]
            worst = max(worst, w)
        elapsed = time.time() - t0
        assert elapsed < 60, f"gradient suite took {elapsed:.1f}s"
        assert worst < 1e-4
        report("gradient-suite", f"20 instances, worst rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion: quadrature conservation


class TestQuadratureConservation:
    def test_weight_mass_conserved(self):
        rng = np.random.default_rng(7)
        sigmas = rng.uniform(0.0, 30.0, size=(10_000, 24))
        deltas = rng.uniform(1e-4, 0.5, size=(10_000, 24))
        w, trans, t_final, _ = compositing_forward(sigmas, deltas)
        residual = np.abs(w.sum(axis=1) + t_final - 1.0)
        assert residual.max() < 1e-5
        assert np.all(np.diff(trans, axis=1) <= 1e-15)
        report("quadrature-conservation", f"max |sum(w)+T_end-1| = {residual.max():.2e}")


# ---------------------------------------------------------------------------
# criterion: contraction


class TestContraction:
    def test_contract_properties(self):
        rng = np.random.default_rng(11)
        inside = rng.uniform(-1, 1, size=(100_000, 3))
        np.testing.assert_array_equal(contract(inside), inside)

        wild = rng.uniform(-1e4, 1e4, size=(100_000, 3)) * rng.choice(
            [1e-3, 1.0, 10.0], size=(100_000, 1)
        )
        out = contract(wild)
        assert np.all(np.abs(out) <= 2.0)

        d = rng.normal(size=(100_000, 3))
        d /= np.abs(d).max(axis=1, keepdims=True)
        eps = 1e-7
        gap = np.abs(contract(d * (1 + eps)) - contract(d * (1 - eps))).max()
        assert gap < 1e-5
        report("contraction", f"identity/range on 1e5 pts, boundary gap {gap:.1e}")


# ---------------------------------------------------------------------------
# criterion: distance grid


class TestDistanceGrid:
    def test_bruteforce_equality_50_grids(self):
        rng = np.random.default_rng(13)
        for trial in range(50):
            l = int(rng.choice([8, 16, 24, 32]))
            density = rng.choice([0.0, 0.001, 0.01, 0.1, 0.5])
            occ = rng.random((l, l, l)) < density
            got = build_distance_grid(OccupancyGrid(occ, l)).values
            ref = build_distance_grid_reference(occ)
            np.testing.assert_array_equal(got, ref)
        report("distance-grid-oracle", "50 random grids match brute force exactly")

    def test_skip_equivalence_1000_rays(self, one_box_assets):
        from conftest import blob_model
        from smerf.rendering import RenderAssets

        rng = np.random.default_rng(17)
        scenes = {"one-box": one_box_assets["quantized"]}
        # plus a sparse synthetic scene with scattered occupancy
        model = blob_model(np.random.default_rng(3))
        sm = model.submodels[(0, 0, 0)]
        occ = rng.random((16, 16, 16)) < 0.05
        scenes["synthetic"] = RenderAssets(
            planes=sm.triplanes.planes, grid=sm.grid.values,
            distance=build_distance_grid(OccupancyGrid(occ, 16)).values,
            lattice=sm.lattice, plane_resolution=16, grid_resolution=16, prescale=1.0,
        )
        for name, assets in scenes.items():
            origins = rng.uniform(-0.95, 0.95, size=(1000, 3))
            dirs = rng.normal(size=(1000, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            params = assets.lattice.vertex(0)
            fast, _ = march_rays_baked(origins, dirs, assets, params,
                                       early_termination=0.0, use_skip=True)
            dense, _ = march_rays_baked(origins, dirs, assets, params,
                                        early_termination=0.0, use_skip=False)
            np.testing.assert_array_equal(fast, dense)
        report("distance-grid-skip", "1000 rays per scene bit-identical with skipping")


# ---------------------------------------------------------------------------
# criterion: median / max filter oracles


class TestFilterOracles:
    def test_median_filter_32(self):
        rng = np.random.default_rng(19)
        occ = rng.random((32, 32, 32)) < rng.uniform(0.2, 0.6)
        got = median_filter_27(OccupancyGrid(occ, 32)).values
        ref = np.zeros_like(occ)
        for v in np.ndindex(occ.shape):
            votes = []
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        p = (v[0] + dx, v[1] + dy, v[2] + dz)
                        if all(0 <= p[i] < 32 for i in range(3)):
                            votes.append(occ[p])
            ref[v] = 2 * sum(votes) > len(votes)
        np.testing.assert_array_equal(got, ref)
        report("median-filter-oracle", "random 32^3 grid matches per-voxel majority")

    def test_max_filter_32(self):
        rng = np.random.default_rng(23)
        occ = rng.random((32, 32, 32)) < 0.02
        got = downsample_max(OccupancyGrid(occ, 32), 8).values
        ref = np.zeros((8, 8, 8), dtype=bool)
        for v in np.ndindex((8, 8, 8)):
            block = occ[v[0] * 4:(v[0] + 1) * 4, v[1] * 4:(v[1] + 1) * 4, v[2] * 4:(v[2] + 1) * 4]
            ref[v] = block.any()
        np.testing.assert_array_equal(got, ref)
        report("max-filter-oracle", "random 32^3 grid matches per-block any()")


# ---------------------------------------------------------------------------
# criterion: quantization round-trip and baked-vs-float render


class TestQuantization:
    def test_roundtrip_half_step(self):
        rng = np.random.default_rng(29)
        x = rng.uniform(-7, 7, size=100_000)
        err = np.abs(dequantize(quantize(x)) - x).max()
        assert err <= 14.0 / 255.0 / 2.0 + 1e-12
        report("quantization-roundtrip", f"max error {err:.4e}")

    def test_baked_vs_float_render(self, one_box_assets):
        layout = one_box_assets["layout"]
        cams = one_box_assets["eval_cameras"][:2]
        worst = 0.0
        for cam in cams:
            cam_small = PinholeCamera(position=cam.position, look_at=cam.look_at,
                                      up=cam.up, vfov_deg=cam.vfov_deg, width=48, height=48)
            img_q = render_image(cam_small, BakedRenderScene(
                layout=layout, assets={(0, 0, 0): one_box_assets["quantized"]}),
                early_termination=0.0)
            img_f = render_image(cam_small, BakedRenderScene(
                layout=layout, assets={(0, 0, 0): one_box_assets["float"]}),
                early_termination=0.0)
            worst = max(worst, float(np.abs(img_q - img_f).max()))
        assert worst <= 0.02
        report("quantization-render", f"baked vs float max channel deviation {worst:.4f}")


# ---------------------------------------------------------------------------
# criterion: teacher oracle


class TestTeacherOracle:
    def test_fine_quadrature_and_self_consistency(self):
        scene = AnalyticScene(
            primitives=[
                Box(center=[0, 0, 0], size=[0.5, 0.5, 0.5], density=6.0,
                    albedo=[0.8, 0.2, 0.1],
                    specular=Specular(color=[0.2, 0.2, 0.2], light=[0, 0, -1])),
                Sphere(center=[0.35, 0.2, 0.3], radius=0.2, density=5.0,
                       albedo=[0.15, 0.6, 0.3]),
            ],
            background=[0.6, 0.7, 0.9], near=0.05, far=3.0,
        )
        rng = np.random.default_rng(31)
        worst_w = 0.0
        worst_c = 0.0
        for _ in range(8):
            o = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), -1.4])
            d = np.array([rng.normal(scale=0.25), rng.normal(scale=0.25), 1.0])
            d /= np.linalg.norm(d)
            ray = Ray(origin=o, direction=d)
            resp = teacher_query(ray, scene)
            # independent fine-quadrature oracle: 1e4 midpoint samples per
            # interval, sequential compositing
            log_t = 0.0
            for i, (a, b) in enumerate(zip(resp.intervals.boundaries[:-1],
                                           resp.intervals.boundaries[1:])):
                ts = np.linspace(a, b, 10_001)
                mids = (ts[:-1] + ts[1:]) / 2
                pts = o[None] + mids[:, None] * d[None]
                sig = np.zeros(len(mids))
                for p in scene.primitives:
                    if isinstance(p, Box):
                        lo, hi = p.center - p.size / 2, p.center + p.size / 2
                        sig += p.density * np.all((pts > lo) & (pts < hi), axis=1)
                    else:
                        sig += p.density * (np.linalg.norm(pts - p.center, axis=1) < p.radius)
                t_start = np.exp(log_t)
                log_t -= float((sig * (b - a) / 10_000).sum())
                w_ref = t_start - np.exp(log_t)
                worst_w = max(worst_w, abs(w_ref - resp.intervals.weights[i]))
            t_end = 1.0 - resp.intervals.weights.sum()
            recomposed = (resp.intervals.weights[:, None] * resp.interval_colors).sum(axis=0)
            recomposed += t_end * scene.background
            worst_c = max(worst_c, float(np.abs(recomposed - resp.color).max()))
        assert worst_w < 1e-4
        assert worst_c < 1e-3
        report("teacher-oracle", f"weights within {worst_w:.2e}, colors within {worst_c:.2e}")


# ---------------------------------------------------------------------------
# criterion: streamer state machine


class TestStreamerAcceptance:
    def test_random_walk_100k(self):
        rng = np.random.default_rng(37)
        k = 3
        layout = grid_layout(k)
        s = StreamerState(layout, cpu_capacity=3)
        ref = ReferenceLru(3)
        pos = np.zeros(3)
        pending = []
        max_gpu = 0
        renders_from_loaded = 0
        steps = 100_000
        for _ in range(steps):
            pos = np.clip(pos + rng.normal(scale=0.25, size=3), -k / 2, k / 2)
            d = s.on_camera(pos)
            if d.render_with is not None:
                assert d.render_with in s.cpu_cells, "render from unloaded bundle"
                renders_from_loaded += 1
                ref.access(d.render_with, pinned=s.gpu_cells)
            for a in d.actions:
                if a.kind == "fetch":
                    pending.append(a.cell)
            max_gpu = max(max_gpu, len(s.gpu_cells))
            if pending and rng.random() < 0.6:
                cell = pending.pop(0)
                s.on_fetch_complete(cell, pos=pos)
                ref.access(cell, pinned=s.gpu_cells)
                max_gpu = max(max_gpu, len(s.gpu_cells))
            assert len(s.cpu_cells) <= 3
            assert set(s.cpu_cells) == set(ref.entries), "LRU diverged from reference"
        assert max_gpu <= 2
        report("streamer-invariants",
               f"{steps} steps, peak gpu {max_gpu}, {renders_from_loaded} loaded renders, LRU matches")


# ---------------------------------------------------------------------------
# criterion: distillation end to end


def _cluster_ring(center, look_at, count, radius, phase=0.0, vfov=52.0):
    cams = []
    for i in range(count):
        a = phase + 2 * np.pi * i / count
        pos = np.array(center) + np.array([radius * np.cos(a), radius * np.sin(a), 0.0])
        cams.append(PinholeCamera(position=pos, look_at=np.array(look_at, float),
                                  up=np.array([0.0, 0.0, 1.0]), vfov_deg=vfov,
                                  width=48, height=48))
    return cams


def _checker_slab(center, extent, tiles, albedo_a, albedo_b, density=5.0, depth=0.1):
    out = []
    t = extent / tiles
    for i in range(tiles):
        for j in range(tiles):
            albedo = albedo_a if (i + j) % 2 == 0 else albedo_b
            out.append(Box(center=[center[0] - extent / 2 + (i + 0.5) * t,
                                   center[1] - extent / 2 + (j + 0.5) * t, center[2]],
                           size=[t, t, depth], density=density, albedo=albedo))
    return out


class TestDistillationEndToEnd:
    def test_one_box_psnr(self, one_box_run):
        metrics = one_box_run["metrics"]
        psnr = metrics[-1]["psnr"]
        assert psnr >= 30.0, f"held-out PSNR {psnr:.2f} dB < 30 dB"
        report("distill-one-box", f"{psnr:.2f} dB after 2000 steps "
               f"({RUNTIMES['one_box_train']:.0f}s)")

    def test_two_cell_consistency(self):
        layout = grid_layout(2, active=[(0, 0, 0), (1, 0, 0)], prescale=0.8)
        prims = _checker_slab([0.0, -0.5, -0.8], 0.4, 4,
                              [0.85, 0.25, 0.15], [0.15, 0.35, 0.8])
        prims += [
            Box(center=[-0.55, -0.45, -0.85], size=[0.2, 0.2, 0.2], density=4.0,
                albedo=[0.2, 0.5, 0.75]),
            Box(center=[0.55, -0.55, -0.45], size=[0.2, 0.2, 0.2], density=4.0,
                albedo=[0.25, 0.7, 0.3]),
        ]
        scene = AnalyticScene(primitives=prims, background=[0.62, 0.7, 0.85],
                              near=0.03, far=2.6)
        teacher = AnalyticTeacher(scene, num_intervals=32)
        cams = (_cluster_ring([-0.5, -0.5, -0.3], [0.0, -0.5, -0.8], 12, 0.46)
                + _cluster_ring([0.5, -0.5, -0.3], [0.0, -0.5, -0.8], 12, 0.46,
                                phase=np.pi))
        boundary = [
            PinholeCamera(position=[0.0, -0.5, -0.3], look_at=[0.0, -0.5, -0.8],
                          up=[0, 1, 0], vfov_deg=40, width=48, height=48),
            PinholeCamera(position=[-0.035, -0.44, -0.3], look_at=[0.0, -0.5, -0.8],
                          up=[0, 1, 0], vfov_deg=40, width=48, height=48),
            PinholeCamera(position=[0.03, -0.56, -0.3], look_at=[0.0, -0.5, -0.8],
                          up=[0, 1, 0], vfov_deg=40, width=48, height=48),
        ]
        from smerf.model import init_scene_model

        t0 = time.time()
        disc = {}
        for weight in (0.0, 1.0):
            model = init_scene_model(np.random.default_rng(0), layout, 64, 16, 2)
            cfg = TrainConfig(steps=TWO_CELL_STEPS, patches_per_batch=32,
                              num_intervals=32, consistency_weight=weight, seed=0)
            train(model, teacher, cams, cfg)
            disc[weight] = cross_submodel_discrepancy(
                model, boundary, teacher.near, teacher.far, 32)
        RUNTIMES["two_cell_train"] = time.time() - t0
        ratio = disc[0.0] / max(disc[1.0], 1e-9)
        assert ratio >= 5.0, (
            f"consistency reduced boundary discrepancy only {ratio:.2f}x "
            f"({disc[0.0]:.4f} -> {disc[1.0]:.4f})"
        )
        report("distill-two-cell",
               f"discrepancy {disc[0.0]:.4f} -> {disc[1.0]:.4f} ({ratio:.1f}x, "
               f"{RUNTIMES['two_cell_train']:.0f}s)")

    def test_runtime_budget(self, one_box_run):
        total = RUNTIMES.get("one_box_train", 0) + RUNTIMES.get("two_cell_train", 0)
        assert total < 15 * 60, f"distillation runs took {total:.0f}s"
        report("distill-runtime", f"{total:.0f}s < 900s")


# ---------------------------------------------------------------------------
# criterion: feature-gating non-regression


class TestGateAblation:
    def test_gating_does_not_regress(self):
        prims = [Box(center=[0.0, 0.0, 0.55], size=[1.7, 1.7, 0.12], density=8.0,
                     albedo=[0.72, 0.72, 0.68])]
        prims += _checker_slab([0.0, 0.0, 0.0], 0.6, 4,
                               [0.85, 0.2, 0.15], [0.15, 0.3, 0.8], density=6.0)
        scene = AnalyticScene(primitives=prims, background=[0.6, 0.7, 0.85],
                              near=0.05, far=3.2)
        world_cams = ring_cameras(12, radius=1.0, height=-0.6, look_at=(0, 0, 0.1),
                                  width=64, image_height=64, vfov_deg=48)
        world_evals = ring_cameras(3, radius=1.0, height=-0.6, look_at=(0, 0, 0.1),
                                   width=64, image_height=64, vfov_deg=48, phase=0.3)
        from smerf.model import init_scene_model
        from smerf.scene import normalize_cameras
        from smerf.training import evaluate_psnr

        layout = normalize_cameras([c.position for c in world_cams], 1)
        cams = [c.transformed(layout.world_to_normalized) for c in world_cams]
        evals = [c.transformed(layout.world_to_normalized) for c in world_evals]
        teacher = AnalyticTeacher(scene.normalized(layout), num_intervals=32)
        psnr = {}
        for gated in (False, True):
            model = init_scene_model(np.random.default_rng(0), layout, 64, 16, 2,
                                     gated=gated)
            cfg = TrainConfig(steps=ABLATION_STEPS, patches_per_batch=32,
                              num_intervals=32, seed=0)
            train(model, teacher, cams, cfg)
            psnr[gated] = evaluate_psnr(model, teacher, evals, teacher.near,
                                        teacher.far, 32, threshold=5e-3)
        assert psnr[True] >= psnr[False] - 0.1, (
            f"gating regressed: {psnr[True]:.2f} vs {psnr[False]:.2f} dB"
        )
        report("gate-ablation",
               f"gated {psnr[True]:.2f} dB vs plain-sum {psnr[False]:.2f} dB")


# ---------------------------------------------------------------------------
# criterion: trilerp parameter continuity (anti-popping)


class TestTrilerpContinuity:
    def test_lipschitz_bound(self):
        rng = np.random.default_rng(41)
        lattice = init_lattice(rng, 5, mlp_input_dim(12, False), vertex_noise=0.5)
        diffuse = rng.uniform(0.1, 0.6, size=3)
        feature = rng.uniform(0.1, 0.9, size=12)
        view = rng.normal(size=3)
        view /= np.linalg.norm(view)

        def color(origin):
            from smerf.appearance import shade

            return shade(diffuse, feature, view, interpolate_params(origin, lattice))

        # measure a Lipschitz constant at coarse scale
        lip = 0.0
        for _ in range(400):
            o = rng.uniform(-1, 1, size=3)
            step = rng.normal(size=3)
            step *= 1e-2 / np.linalg.norm(step)
            delta = np.abs(color(o + step) - color(o)).max()
            lip = max(lip, delta / 1e-2)
        # fine perturbations must respect it with factor-2 headroom
        worst = 0.0
        for _ in range(400):
            o = rng.uniform(-1, 1, size=3)
            step = rng.normal(size=3)
            step *= 1e-3 / np.linalg.norm(step)
            worst = max(worst, float(np.abs(color(o + step) - color(o)).max()))
        bound = lip * 1e-3 * 2.0
        assert worst <= bound, f"{worst:.3e} > {bound:.3e}"
        report("trilerp-continuity", f"fine delta {worst:.2e} <= bound {bound:.2e}")
