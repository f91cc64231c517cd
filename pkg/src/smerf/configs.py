"""Declarative scene configs: teacher primitives, cameras, training knobs.

A config is a JSON file describing everything a run needs; the pipeline
normalizes cameras into the tiled cube and expresses the teacher scene in
the same coordinates.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .cameras import PinholeCamera, ring_cameras
from .model import init_scene_model
from .scene import SceneLayout, normalize_cameras
from .teacher import AnalyticScene, AnalyticTeacher, Box, Specular, Sphere
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class SceneConfig:
    name: str
    seed: int
    grid_size: int
    lattice_size: int
    plane_resolution: int
    grid_resolution: int
    feature_gating: bool
    exposure: bool
    contraction_prescale: float | None
    teacher: dict
    cameras: dict
    eval_cameras: dict | None
    train: dict

    @staticmethod
    def from_dict(d: dict) -> "SceneConfig":
        try:
            cfg = SceneConfig(
                name=d.get("name", "scene"),
                seed=int(d.get("seed", 0)),
                grid_size=int(d.get("grid_size", 1)),
                lattice_size=int(d.get("lattice_size", 5)),
                plane_resolution=int(d.get("plane_resolution", 2048)),
                grid_resolution=int(d.get("grid_resolution", 512)),
                feature_gating=bool(d.get("feature_gating", True)),
                exposure=bool(d.get("exposure", False)),
                contraction_prescale=d.get("contraction_prescale"),
                teacher=d["teacher"],
                cameras=d["cameras"],
                eval_cameras=d.get("eval_cameras"),
                train=d.get("train", {}),
            )
        except KeyError as e:
            raise ConfigError(f"missing config section: {e}") from e
        for res in (cfg.plane_resolution, cfg.grid_resolution):
            if res < 4 or res & (res - 1):
                raise ConfigError(f"resolutions must be powers of two, got {res}")
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_scene_config(path) -> SceneConfig:
    with open(path) as f:
        return SceneConfig.from_dict(json.load(f))


def build_primitive(d: dict):
    spec = None
    if d.get("specular"):
        s = d["specular"]
        spec = Specular(color=s["color"], light=s["light"], power=s.get("power", 8.0))
    kind = d.get("kind", "box")
    if kind == "box":
        return Box(center=d["center"], size=d["size"], density=d["density"],
                   albedo=d["albedo"], specular=spec)
    if kind == "sphere":
        return Sphere(center=d["center"], radius=d["radius"], density=d["density"],
                      albedo=d["albedo"], specular=spec)
    raise ConfigError(f"unknown primitive kind {kind!r}")


def build_teacher_scene(d: dict) -> AnalyticScene:
    return AnalyticScene(
        primitives=[build_primitive(p) for p in d.get("primitives", [])],
        background=d.get("background", [1.0, 1.0, 1.0]),
        near=float(d.get("near", 0.05)),
        far=float(d.get("far", 4.0)),
    )


def build_cameras(d: dict) -> list[PinholeCamera]:
    kind = d.get("kind", "ring")
    if kind == "ring":
        return ring_cameras(
            count=int(d.get("count", 12)),
            radius=float(d.get("radius", 1.2)),
            height=float(d.get("height", 0.4)),
            look_at=d.get("look_at", (0.0, 0.0, 0.0)),
            vfov_deg=float(d.get("vfov_deg", 55.0)),
            width=int(d.get("width", 64)),
            image_height=int(d.get("height_px", 64)),
            phase=float(d.get("phase", 0.0)),
        )
    if kind == "list":
        cams = []
        for pose in d["poses"]:
            if len(pose) != 10:
                raise ConfigError("list camera poses need 10 floats")
            cams.append(PinholeCamera(
                position=pose[0:3], look_at=pose[3:6], up=pose[6:9], vfov_deg=pose[9],
                width=int(d.get("width", 64)), height=int(d.get("height_px", 64)),
            ))
        return cams
    raise ConfigError(f"unknown camera kind {kind!r}")


@dataclasses.dataclass
class Pipeline:
    """A scene config resolved into normalized-space working objects."""

    config: SceneConfig
    layout: SceneLayout
    teacher: AnalyticTeacher
    train_cameras: list
    eval_cameras: list
    train_config: TrainConfig


def build_pipeline(cfg: SceneConfig) -> Pipeline:
    world_cams = build_cameras(cfg.cameras)
    layout = normalize_cameras(
        [c.position for c in world_cams], cfg.grid_size, cfg.contraction_prescale
    )
    train_cams = [c.transformed(layout.world_to_normalized) for c in world_cams]
    if cfg.eval_cameras:
        eval_cams = [
            c.transformed(layout.world_to_normalized)
            for c in build_cameras(cfg.eval_cameras)
        ]
    else:
        eval_cams = []
    scene = build_teacher_scene(cfg.teacher).normalized(layout)
    train_cfg = TrainConfig(seed=cfg.seed, **cfg.train)
    teacher = AnalyticTeacher(scene, num_intervals=train_cfg.num_intervals)
    return Pipeline(
        config=cfg, layout=layout, teacher=teacher,
        train_cameras=train_cams, eval_cameras=eval_cams, train_config=train_cfg,
    )


def init_model_for(pipeline: Pipeline):
    rng = np.random.default_rng(pipeline.config.seed)
    return init_scene_model(
        rng, pipeline.layout,
        plane_res=pipeline.config.plane_resolution,
        grid_res=pipeline.config.grid_resolution,
        lattice_size=pipeline.config.lattice_size,
        gated=pipeline.config.feature_gating,
        exposure=pipeline.config.exposure,
    )
