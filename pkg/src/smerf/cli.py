"""Operator entry points: train, bake, render, verify, serve, bench.

Verbosity comes from the SMERF_LOG environment variable (DEBUG/INFO/...).
Every command is deterministic under a fixed seed and emits machine-
readable output (CSV metrics or JSON reports) next to its artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

log = logging.getLogger("smerf.cli")

METRIC_COLUMNS = (
    "step", "loss", "loss_dssim", "loss_rgb", "loss_geometry",
    "loss_consistency", "loss_hg", "loss_tv", "lr", "threshold", "psnr",
)


def _parse_resolution(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smerf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="distill a teacher scene into submodels")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--steps", type=int, default=None, help="override the step count")

    b = sub.add_parser("bake", help="convert a checkpoint into streamable bundles")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--occupancy-resolution", type=int, default=None)
    b.add_argument("--no-quantize", action="store_true")
    b.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("render", help="render a camera trajectory from baked assets")
    r.add_argument("--scene", required=True, help="baked scene root or checkpoint")
    r.add_argument("--trajectory", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--resolution", type=_parse_resolution, default=(128, 128))
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--no-skip", action="store_true")
    r.add_argument("--server", default=None, help="render via a running asset service")

    v = sub.add_parser("verify", help="run the oracle suite over a bundle or checkpoint")
    v.add_argument("--target", required=True)
    v.add_argument("--out", default=None, help="write the JSON report here")
    v.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("serve", help="serve baked assets over HTTP")
    s.add_argument("--root", required=True)
    s.add_argument("--port", type=int, default=8731)
    s.add_argument("--host", default="127.0.0.1")

    be = sub.add_parser("bench", help="frame-time statistics over a trajectory")
    be.add_argument("--scene", required=True)
    be.add_argument("--trajectory", required=True)
    be.add_argument("--repeats", type=int, default=100)
    be.add_argument("--resolution", type=_parse_resolution, default=(128, 128))
    be.add_argument("--out", default=None)
    be.add_argument("--no-skip", action="store_true")
    return p


def cmd_train(args) -> int:
    from .configs import build_pipeline, init_model_for, load_scene_config
    from .model import save_model
    from .training import train

    cfg = load_scene_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    pipeline = build_pipeline(cfg)
    if args.steps is not None:
        pipeline.train_config.steps = args.steps
    model = init_model_for(pipeline)

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "metrics.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        writer.writeheader()

        def log_row(row):
            writer.writerow(row)
            f.flush()
            if row["step"] % 100 == 0:
                log.info("step %d loss %.5f", row["step"], row["loss"])

        metrics = train(model, pipeline.teacher, pipeline.train_cameras,
                        pipeline.train_config, eval_cameras=pipeline.eval_cameras,
                        log_fn=log_row)
    save_model(os.path.join(args.out, "checkpoint.npz"), model,
               extra_meta={"config": cfg.to_dict()})
    with open(os.path.join(args.out, "config.json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=1, sort_keys=True)
    final_psnr = metrics[-1]["psnr"] if metrics else ""
    print(f"trained {pipeline.train_config.steps} steps; "
          f"checkpoint at {args.out}/checkpoint.npz; final psnr {final_psnr}")
    return 0


def cmd_bake(args) -> int:
    from .baking import BakeOptions, bake_scene
    from .configs import SceneConfig, build_pipeline
    from .model import load_model

    model, extra = load_model(args.checkpoint)
    if "config" not in extra:
        print("checkpoint carries no scene config; cannot rebuild cameras", file=sys.stderr)
        return 2
    pipeline = build_pipeline(SceneConfig.from_dict(extra["config"]))
    options = BakeOptions(
        occupancy_resolution=args.occupancy_resolution,
        quantize=not args.no_quantize, seed=args.seed,
    )
    scene = bake_scene(model, pipeline.train_cameras, args.out, options)
    print(f"baked {len(scene['submodels'])} submodel(s) into {args.out}")
    return 0


def _load_baked_scene(root):
    from .baking import load_bundle, load_scene_index
    from .rendering import BakedRenderScene
    from .scene import SceneLayout

    index = load_scene_index(root)
    layout = SceneLayout.from_dict(index["layout"])
    assets = {}
    for sid in index["submodels"]:
        cell = tuple(int(x) for x in sid.split("_"))
        assets[cell] = load_bundle(os.path.join(root, "submodels", sid)).assets
    return BakedRenderScene(layout=layout, assets=assets)


def cmd_render(args) -> int:
    from .cameras import load_trajectory
    from .images import save_png

    width, height = args.resolution
    cameras = load_trajectory(args.trajectory, width=width, height=height)
    os.makedirs(args.out, exist_ok=True)

    if args.server:
        import httpx

        for i, cam in enumerate(cameras):
            resp = httpx.post(
                args.server.rstrip("/") + "/api/render",
                json={
                    "position": list(cam.position), "look_at": list(cam.look_at),
                    "up": list(cam.up), "vfov_deg": cam.vfov_deg,
                    "width": width, "height": height, "use_skip": not args.no_skip,
                },
                timeout=300.0,
            )
            resp.raise_for_status()
            with open(os.path.join(args.out, f"frame_{i:04d}.png"), "wb") as f:
                f.write(resp.content)
        print(f"rendered {len(cameras)} frame(s) via {args.server} into {args.out}")
        return 0

    from .rendering import render_image

    scene = _load_baked_scene(args.scene)

    def render_frame(i_cam):
        i, cam = i_cam
        img = render_image(cam, scene, use_skip=not args.no_skip)
        save_png(os.path.join(args.out, f"frame_{i:04d}.png"), img)

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            list(pool.map(render_frame, enumerate(cameras)))
    else:
        for item in enumerate(cameras):
            render_frame(item)
    print(f"rendered {len(cameras)} frame(s) into {args.out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import verify_bundle_root, verify_checkpoint

    if os.path.isdir(args.target):
        report = verify_bundle_root(args.target, seed=args.seed)
    else:
        report = verify_checkpoint(args.target, seed=args.seed)
    for check in report["checks"]:
        marker = "PASS" if check["passed"] else "FAIL"
        print(f"[{marker}] {check['name']}: {check['detail']}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
    return 0 if report["passed"] else 1


def cmd_serve(args) -> int:
    from .service import serve

    print(f"serving {args.root} on http://{args.host}:{args.port}")
    serve(args.root, args.port, host=args.host)
    return 0


def cmd_bench(args) -> int:
    from .cameras import load_trajectory
    from .rendering import render_image

    width, height = args.resolution
    cameras = load_trajectory(args.trajectory, width=width, height=height)
    scene = _load_baked_scene(args.scene)
    results = []
    for i, cam in enumerate(cameras):
        render_image(cam, scene, use_skip=not args.no_skip)  # warmup
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            render_image(cam, scene, use_skip=not args.no_skip)
            times.append(time.perf_counter() - t0)
        times = np.asarray(times)
        results.append({
            "frame": i,
            "repeats": args.repeats,
            "mean_ms": float(times.mean() * 1e3),
            "p50_ms": float(np.percentile(times, 50) * 1e3),
            "p90_ms": float(np.percentile(times, 90) * 1e3),
            "min_ms": float(times.min() * 1e3),
        })
        print(f"frame {i}: mean {results[-1]['mean_ms']:.2f} ms "
              f"p50 {results[-1]['p50_ms']:.2f} p90 {results[-1]['p90_ms']:.2f}")
    report = {"resolution": [width, height], "frames": results}
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
    return 0


COMMANDS = {
    "train": cmd_train,
    "bake": cmd_bake,
    "render": cmd_render,
    "verify": cmd_verify,
    "serve": cmd_serve,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SMERF_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
