"""Trainable scene model: one (field, appearance lattice) pair per cell."""

from __future__ import annotations

import dataclasses

import numpy as np

from .appearance import MlpLattice, init_lattice, mlp_input_dim
from .field import CHANNELS, FEATURE_DIM_GATED, FEATURE_DIM_MERF, TriplaneSet, VoxelGrid
from .scene import Cell, SceneLayout

# kick the density preactivation down so the scene starts mostly empty
DENSITY_INIT = -1.5
# gate starts open so triplane gradients flow from step one
GATE_INIT = 1.0


@dataclasses.dataclass
class Submodel:
    triplanes: TriplaneSet
    grid: VoxelGrid
    lattice: MlpLattice

    def param_arrays(self):
        """(name, array) pairs for the optimizer and gradient checks."""
        yield "plane_x", self.triplanes.planes[0]
        yield "plane_y", self.triplanes.planes[1]
        yield "plane_z", self.triplanes.planes[2]
        yield "grid", self.grid.values
        for n in ("w1", "b1", "w2", "b2", "w3", "b3"):
            yield n, getattr(self.lattice, n)


@dataclasses.dataclass
class SceneModel:
    layout: SceneLayout
    submodels: dict[Cell, Submodel]
    gated: bool = True
    exposure: bool = False

    @property
    def feature_dim(self) -> int:
        return FEATURE_DIM_GATED if self.gated else FEATURE_DIM_MERF

    @property
    def plane_resolution(self) -> int:
        return next(iter(self.submodels.values())).triplanes.resolution

    @property
    def grid_resolution(self) -> int:
        return next(iter(self.submodels.values())).grid.resolution

    @property
    def lattice_size(self) -> int:
        return next(iter(self.submodels.values())).lattice.size


def init_submodel(rng, plane_res, grid_res, lattice_size, feature_dim,
                  exposure=False, init_scale=1e-2, vertex_noise=0.0) -> Submodel:
    planes = [rng.normal(scale=init_scale, size=(plane_res, plane_res, CHANNELS)) for _ in range(3)]
    grid = rng.normal(scale=init_scale, size=(grid_res, grid_res, grid_res, CHANNELS))
    grid[..., 0] += DENSITY_INIT
    grid[..., -1] += GATE_INIT
    lattice = init_lattice(
        rng, lattice_size, mlp_input_dim(feature_dim, exposure), vertex_noise=vertex_noise
    )
    return Submodel(
        triplanes=TriplaneSet(planes=planes, resolution=plane_res),
        grid=VoxelGrid(values=grid, resolution=grid_res),
        lattice=lattice,
    )


def init_scene_model(rng, layout: SceneLayout, plane_res, grid_res, lattice_size,
                     gated=True, exposure=False, init_scale=1e-2, vertex_noise=0.0) -> SceneModel:
    feature_dim = FEATURE_DIM_GATED if gated else FEATURE_DIM_MERF
    submodels = {
        cell: init_submodel(rng, plane_res, grid_res, lattice_size, feature_dim,
                            exposure, init_scale, vertex_noise)
        for cell in layout.active_cells
    }
    return SceneModel(layout=layout, submodels=submodels, gated=gated, exposure=exposure)


def save_model(path, model: SceneModel, extra_meta: dict | None = None):
    """Checkpoint as a single .npz with a JSON metadata entry."""
    import json

    arrays = {}
    for cell, sm in model.submodels.items():
        key = "_".join(map(str, cell))
        for name, arr in sm.param_arrays():
            arrays[f"sm{key}/{name}"] = arr.astype(np.float32)
    meta = {
        "layout": model.layout.to_dict(),
        "gated": model.gated,
        "exposure": model.exposure,
        "plane_resolution": model.plane_resolution,
        "grid_resolution": model.grid_resolution,
        "lattice_size": model.lattice_size,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_model(path) -> tuple[SceneModel, dict]:
    import json

    data = np.load(path)
    meta = json.loads(bytes(data["meta"]).decode())
    layout = SceneLayout.from_dict(meta["layout"])
    feature_dim = FEATURE_DIM_GATED if meta["gated"] else FEATURE_DIM_MERF
    submodels = {}
    for cell in layout.active_cells:
        key = "_".join(map(str, cell))
        rng = np.random.default_rng(0)
        sm = init_submodel(
            rng, meta["plane_resolution"], meta["grid_resolution"], meta["lattice_size"],
            feature_dim, meta["exposure"],
        )
        for name, arr in sm.param_arrays():
            arr[:] = data[f"sm{key}/{name}"].astype(np.float64)
        submodels[cell] = sm
    model = SceneModel(layout=layout, submodels=submodels,
                       gated=meta["gated"], exposure=meta["exposure"])
    return model, meta.get("extra", {})
