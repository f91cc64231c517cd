"""Volume rendering: quadrature weights, training-mode ray rendering over
teacher intervals, and baked-mode marching with distance-grid skipping.

Training mode samples the trainable field at interval midpoints; baked mode
steps through contracted space one high-resolution voxel at a time and
consults a per-submodel Chebyshev distance grid to fast-forward through
empty space without changing the result.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import field as field_mod
from .appearance import MlpLattice, MlpParams, gather_batched_params, interpolate_params, shade_forward
from .scene import SceneLayout, assign_submodel, contract, contract_direction_scale, world_to_submodel

# transmittance below which a baked-mode ray stops marching
EARLY_TERMINATION = 2e-3


@dataclasses.dataclass
class IntervalSet:
    """Strictly increasing metric boundaries plus optional per-interval weights."""

    boundaries: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=np.float64)
        if self.boundaries.ndim != 1 or self.boundaries.size < 2:
            raise ValueError("need at least one interval")
        if self.boundaries[0] < 0:
            raise ValueError("boundaries must be nonnegative")
        if not np.all(np.diff(self.boundaries) > 0):
            raise ValueError("boundaries must be strictly increasing")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.boundaries.size - 1,):
                raise ValueError("weights shape mismatch")
            if np.any(self.weights < 0) or self.weights.sum() > 1 + 1e-4:
                raise ValueError("weights must be in [0, 1] and sum to at most 1")

    @property
    def midpoints(self):
        return (self.boundaries[:-1] + self.boundaries[1:]) / 2.0

    @property
    def deltas(self):
        return np.diff(self.boundaries)


@dataclasses.dataclass
class RayRender:
    rgb: np.ndarray
    diffuse_acc: np.ndarray
    feature_acc: np.ndarray
    weights: np.ndarray
    transmittances: np.ndarray
    opacity: float
    stats: dict | None = None


def compositing_weights(sigmas, deltas):
    """Quadrature weights w_i = T_i (1 - exp(-sigma_i delta_i)).

    Accepts (S,) or (B, S) arrays; returns (weights, transmittances).
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if sigmas.shape != deltas.shape:
        raise ValueError(f"shape mismatch {sigmas.shape} vs {deltas.shape}")
    sd = sigmas * deltas
    acc = np.cumsum(sd, axis=-1)
    trans = np.exp(-(acc - sd))  # exclusive prefix sum
    alpha = -np.expm1(-sd)
    return trans * alpha, trans


def compositing_forward(sigmas, deltas):
    w, trans = compositing_weights(sigmas, deltas)
    sd = sigmas * deltas
    t_final = trans[..., -1] * np.exp(-sd[..., -1]) if sigmas.shape[-1] else np.ones(sigmas.shape[:-1])
    cache = (sigmas, deltas, w, trans)
    return w, trans, t_final, cache


def compositing_backward(cache, g_w):
    """d(loss)/d(sigma) given adjoints on the weights."""
    sigmas, deltas, w, trans = cache
    sd = sigmas * deltas
    direct = g_w * trans * deltas * np.exp(-sd)
    q = g_w * w
    # suffix_i = sum_{j > i} q_j
    rev = np.flip(np.cumsum(np.flip(q, axis=-1), axis=-1), axis=-1)
    suffix = rev - q
    return direct - deltas * suffix


@dataclasses.dataclass
class RayBatchOutputs:
    rgb: np.ndarray
    diffuse_acc: np.ndarray
    feature_acc: np.ndarray
    weights_masked: np.ndarray
    weights_raw: np.ndarray
    transmittances: np.ndarray
    t_final: np.ndarray


def render_rays_forward(submodel, layout: SceneLayout, cell, origins, dirs, boundaries,
                        gated=True, exposure=None, weight_threshold=0.0,
                        shared_params: MlpParams | None = None):
    """Training-mode forward pass over a batch of rays in one submodel.

    origins/dirs: (B, 3) in normalized scene units; boundaries: (B, S+1)
    metric distances. Per-ray appearance parameters are trilerped from the
    ray origins unless shared_params pins one set for the whole batch.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    boundaries = np.asarray(boundaries, dtype=np.float64)
    b, s = boundaries.shape[0], boundaries.shape[1] - 1
    mids = (boundaries[:, :-1] + boundaries[:, 1:]) / 2.0
    deltas = np.diff(boundaries, axis=1)
    if np.any(deltas <= 0):
        raise ValueError("intervals must be strictly increasing")

    center = layout.cell_center(cell)
    pts = origins[:, None, :] + mids[:, :, None] * dirs[:, None, :]
    local = 2.0 * (pts - center)
    y = contract(layout.contraction_prescale * local)

    sigma_f, diffuse_f, feature_f, field_cache = field_mod.field_forward(
        submodel.triplanes, submodel.grid, y.reshape(-1, 3), gated=gated
    )
    fdim = feature_f.shape[1]
    sigma = sigma_f.reshape(b, s)
    diffuse = diffuse_f.reshape(b, s, 3)
    feature = feature_f.reshape(b, s, fdim)

    w, trans, t_final, comp_cache = compositing_forward(sigma, deltas)
    mask = w > weight_threshold
    wm = w * mask

    diffuse_acc = (wm[:, :, None] * diffuse).sum(axis=1)
    feature_acc = (wm[:, :, None] * feature).sum(axis=1)

    if shared_params is None:
        o_local = 2.0 * (origins - center)
        params, corner_mat = gather_batched_params(o_local, submodel.lattice)
    else:
        params, corner_mat = shared_params, None
    rgb, shade_cache = shade_forward(diffuse_acc, feature_acc, dirs, params, exposure)

    out = RayBatchOutputs(
        rgb=rgb, diffuse_acc=diffuse_acc, feature_acc=feature_acc,
        weights_masked=wm, weights_raw=w, transmittances=trans, t_final=t_final,
    )
    cache = (field_cache, comp_cache, shade_cache, mask, wm, diffuse, feature, corner_mat, b, s)
    return out, cache


def render_rays_backward(cache, g_rgb, g_weights, field_grads, lattice_grads):
    """Backward pass matching render_rays_forward.

    g_rgb: (B, 3) adjoint on the shaded colors; g_weights: (B, S) adjoint
    on the masked compositing weights (geometry supervision). Parameter
    gradients accumulate into field_grads / lattice_grads.
    """
    field_cache, comp_cache, shade_cache, mask, wm, diffuse, feature, corner_mat, b, s = cache
    g_diffuse_acc, g_feature_acc, mlp_grads = shade_backward_dispatch(shade_cache, g_rgb)
    if corner_mat is not None:
        lattice_grads.scatter(corner_mat, mlp_grads)

    g_wm = (diffuse * g_diffuse_acc[:, None, :]).sum(axis=2)
    g_wm += (feature * g_feature_acc[:, None, :]).sum(axis=2)
    if g_weights is not None:
        g_wm = g_wm + g_weights
    g_w = g_wm * mask
    g_sigma = compositing_backward(comp_cache, g_w)

    g_diffuse = wm[:, :, None] * g_diffuse_acc[:, None, :]
    g_feature = wm[:, :, None] * g_feature_acc[:, None, :]
    field_mod.field_backward(
        field_cache,
        g_sigma.reshape(-1),
        g_diffuse.reshape(-1, 3),
        g_feature.reshape(-1, g_feature.shape[-1]),
        field_grads,
    )


def shade_backward_dispatch(shade_cache, g_rgb):
    from .appearance import shade_backward

    return shade_backward(shade_cache, g_rgb)


def render_ray_train(ray, intervals: IntervalSet, submodel, layout, cell,
                     gated=True, weight_threshold=0.0,
                     shared_params: MlpParams | None = None) -> RayRender:
    """Render a single ray through one submodel using given intervals."""
    out, _ = render_rays_forward(
        submodel, layout, cell,
        ray.origin[None], ray.direction[None], intervals.boundaries[None],
        gated=gated, weight_threshold=weight_threshold,
        exposure=None if ray.exposure is None else np.array([ray.exposure]),
        shared_params=shared_params,
    )
    return RayRender(
        rgb=out.rgb[0], diffuse_acc=out.diffuse_acc[0], feature_acc=out.feature_acc[0],
        weights=out.weights_masked[0], transmittances=out.transmittances[0],
        opacity=float(out.weights_masked[0].sum()),
    )


@dataclasses.dataclass
class RenderAssets:
    """Per-submodel assets a marcher needs, already decoded to float arrays.

    Unoccupied voxels of the atlas-backed grid hold zeros; samples are only
    taken where the distance grid reads zero, so those zeros are never
    blended into visible content except across occupancy boundaries, which
    is the baked convention shared with the live viewer.
    """

    planes: list[np.ndarray]
    grid: np.ndarray
    distance: np.ndarray  # (L, L, L) uint8, 0 iff occupied
    lattice: MlpLattice
    plane_resolution: int
    grid_resolution: int
    prescale: float
    gated: bool = True
    exposure: bool = False

    @property
    def triplanes(self):
        return field_mod.TriplaneSet(planes=self.planes, resolution=self.plane_resolution)

    @property
    def voxels(self):
        return field_mod.VoxelGrid(values=self.grid, resolution=self.grid_resolution)


def march_rays_baked(origins_local, dirs_local, assets: RenderAssets, params: MlpParams,
                     exposure=None, max_steps=None, early_termination=EARLY_TERMINATION,
                     use_skip=True):
    """March rays through a baked submodel in its local frame.

    Steps along each ray so consecutive contracted positions are about one
    high-resolution voxel apart; where the distance grid promises a k-voxel
    empty Chebyshev cube the recurrence is replayed without sampling until
    the ray leaves that cube. Returns (rgb, aux dict).
    """
    o = np.atleast_2d(np.asarray(origins_local, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs_local, dtype=np.float64))
    nrays = o.shape[0]
    r = assets.plane_resolution
    l = assets.grid_resolution
    if max_steps is None:
        max_steps = 6 * r
    h_step = 4.0 / r
    h_l = 4.0 / l
    rho = assets.prescale
    fdim = field_mod.FEATURE_DIM_GATED if assets.gated else field_mod.FEATURE_DIM_MERF
    tp, vg = assets.triplanes, assets.voxels
    dist = assets.distance

    t = np.zeros(nrays)
    trans = np.ones(nrays)
    diffuse_acc = np.zeros((nrays, 3))
    feature_acc = np.zeros((nrays, fdim))
    steps_used = np.zeros(nrays, dtype=np.int64)
    active = np.ones(nrays, dtype=bool)
    n_samples = 0
    n_reads = 0
    t_max = 1e5

    def positions(idx):
        z = rho * (o[idx] + t[idx, None] * d[idx])
        return z, contract(z)

    def step_sizes(idx, z):
        speed = contract_direction_scale(z, rho * d[idx])
        return h_step / np.maximum(speed, 1e-9)

    def voxel_of(y):
        return np.clip(((y + 2.0) / h_l).astype(np.int64), 0, l - 1)

    while active.any():
        idx = np.nonzero(active)[0]
        z, y = positions(idx)
        vox = voxel_of(y)
        dv = dist[vox[:, 0], vox[:, 1], vox[:, 2]]
        n_reads += idx.size
        dt = step_sizes(idx, z)

        occ = dv == 0
        if occ.any():
            sel = idx[occ]
            sigma, diffuse, feature, _ = field_mod.field_forward(
                tp, vg, y[occ], gated=assets.gated
            )
            sd = sigma * dt[occ]
            alpha = -np.expm1(-sd)
            w = trans[sel] * alpha
            diffuse_acc[sel] += w[:, None] * diffuse
            feature_acc[sel] += w[:, None] * feature
            trans[sel] = trans[sel] * np.exp(-sd)
            n_samples += sel.size

        t[idx] += dt
        steps_used[idx] += 1

        if use_skip:
            skip_sel = dv > 1
            skip = idx[skip_sel]
            if skip.size:
                entry = vox[skip_sel]
                radius = dv[skip_sel].astype(np.int64) - 1
                live = np.ones(skip.size, dtype=bool)
                while True:
                    live &= steps_used[skip] < max_steps
                    sub_i = np.nonzero(live)[0]
                    if sub_i.size == 0:
                        break
                    sub = skip[sub_i]
                    zs, ys = positions(sub)
                    vs = voxel_of(ys)
                    inside = np.abs(vs - entry[sub_i]).max(axis=1) <= radius[sub_i]
                    live[sub_i[~inside]] = False
                    adv_i = sub_i[inside]
                    if adv_i.size == 0:
                        break
                    adv = skip[adv_i]
                    dts = h_step / np.maximum(
                        contract_direction_scale(zs[inside], rho * d[adv]), 1e-9
                    )
                    t[adv] += dts
                    steps_used[adv] += 1

        done = (steps_used >= max_steps) | (t > t_max)
        if early_termination > 0:
            done |= trans < early_termination
        active &= ~done

    rgb, _ = shade_forward(diffuse_acc, feature_acc, d, params, exposure)
    aux = {
        "diffuse_acc": diffuse_acc,
        "feature_acc": feature_acc,
        "transmittance": trans,
        "opacity": 1.0 - trans,
        "samples": n_samples,
        "grid_reads": n_reads,
        "steps": steps_used,
    }
    return rgb, aux


def march_ray_baked(ray_local, assets: RenderAssets, max_steps=None, params=None,
                    early_termination=EARLY_TERMINATION, use_skip=True) -> RayRender:
    """Single-ray baked march; ray must be in submodel-local coordinates."""
    if assets is None:
        raise ValueError("bundle not loaded")
    if params is None:
        params = interpolate_params(ray_local.origin, assets.lattice)
    rgb, aux = march_rays_baked(
        ray_local.origin[None], ray_local.direction[None], assets, params,
        exposure=None if ray_local.exposure is None else np.array([ray_local.exposure]),
        max_steps=max_steps, early_termination=early_termination, use_skip=use_skip,
    )
    return RayRender(
        rgb=rgb[0], diffuse_acc=aux["diffuse_acc"][0], feature_acc=aux["feature_acc"][0],
        weights=np.zeros(0), transmittances=np.array([aux["transmittance"][0]]),
        opacity=float(aux["opacity"][0]),
        stats={"samples": aux["samples"], "grid_reads": aux["grid_reads"],
               "steps": int(aux["steps"][0])},
    )


@dataclasses.dataclass
class TrainRenderScene:
    """Everything needed to render images from the trainable model."""

    model: object  # SceneModel
    near: float
    far: float
    num_intervals: int = 32


@dataclasses.dataclass
class BakedRenderScene:
    layout: SceneLayout
    assets: dict  # cell -> RenderAssets


def uniform_boundaries(near, far, count):
    return np.linspace(near, far, count + 1)


def render_image(camera, scene, mode=None, weight_threshold=0.0,
                 early_termination=EARLY_TERMINATION, use_skip=True, chunk=16384):
    """Render a full image; the submodel and its appearance parameters are
    chosen once per image from the camera origin."""
    if isinstance(scene, TrainRenderScene):
        if mode not in (None, "train"):
            raise ValueError(f"scene/mode mismatch: {mode}")
        return _render_image_train(camera, scene, weight_threshold, chunk)
    if isinstance(scene, BakedRenderScene):
        if mode not in (None, "baked"):
            raise ValueError(f"scene/mode mismatch: {mode}")
        return _render_image_baked(camera, scene, early_termination, use_skip, chunk)
    raise TypeError(f"unsupported scene {type(scene)!r}")


def _render_image_train(camera, scene: TrainRenderScene, weight_threshold, chunk):
    model = scene.model
    layout = model.layout
    cell = assign_submodel(camera.position, layout)
    submodel = model.submodels[cell]
    o_local = world_to_submodel(camera.position, cell, layout)
    params = interpolate_params(o_local, submodel.lattice)
    dirs = camera.ray_directions().reshape(-1, 3)
    n = dirs.shape[0]
    origins = np.broadcast_to(camera.position, (n, 3))
    boundaries = np.broadcast_to(
        uniform_boundaries(scene.near, scene.far, scene.num_intervals), (n, scene.num_intervals + 1)
    )
    exposure = None
    if model.exposure:
        exposure = np.full(n, 0.0 if camera.exposure is None else camera.exposure)
    img = np.empty((n, 3))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        out, _ = render_rays_forward(
            submodel, layout, cell, origins[lo:hi], dirs[lo:hi], boundaries[lo:hi],
            gated=model.gated, weight_threshold=weight_threshold,
            exposure=None if exposure is None else exposure[lo:hi],
            shared_params=params,
        )
        img[lo:hi] = out.rgb
    return img.reshape(camera.height, camera.width, 3)


def _render_image_baked(camera, scene: BakedRenderScene, early_termination, use_skip, chunk):
    layout = scene.layout
    if not scene.assets:
        raise ValueError("no active submodel")
    cell = assign_submodel(camera.position, layout)
    assets = scene.assets[cell]
    o_local = world_to_submodel(camera.position, cell, layout)
    params = interpolate_params(o_local, assets.lattice)
    dirs = camera.ray_directions().reshape(-1, 3)
    n = dirs.shape[0]
    origins = np.broadcast_to(o_local, (n, 3))
    exposure = None
    if assets.exposure:
        exposure = np.full(n, 0.0 if camera.exposure is None else camera.exposure)
    img = np.empty((n, 3))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        rgb, _ = march_rays_baked(
            origins[lo:hi], dirs[lo:hi], assets, params,
            exposure=None if exposure is None else exposure[lo:hi],
            early_termination=early_termination, use_skip=use_skip,
        )
        img[lo:hi] = rgb
    return img.reshape(camera.height, camera.width, 3)
