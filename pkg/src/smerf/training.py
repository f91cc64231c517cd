"""Distillation training: losses, ray jittering, batch assembly, Adam.

The student is supervised by a frozen teacher on jittered dataset rays:
photometric loss on 3x3 patches (RMSE + mean-kernel DSSIM), an L1 loss on
per-interval compositing weights, a cross-submodel consistency loss for
tiled scenes, and magnitude/variation regularizers. All gradients are
derived by hand and validated against central finite differences.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .appearance import LatticeGrads, PARAM_NAMES, tv_penalty, tv_penalty_backward
from .field import FieldGrads
from .model import SceneModel
from .rendering import render_rays_backward, render_rays_forward
from .scene import Ray, assign_submodel, neighbor_cells

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PATCH = 3  # patches are PATCH x PATCH pixel blocks


class TrainingDiverged(RuntimeError):
    pass


@dataclasses.dataclass
class TrainConfig:
    steps: int = 2000
    patches_per_batch: int = 64
    num_intervals: int = 32
    lr_max: float = 1e-2
    lr_min: float = 3e-4
    dssim_weight: float = 1.5
    rgb_weight: float = 1.0
    geometry_weight: float = 1.0
    consistency_weight: float = 1.0
    hg_weight: float = 0.01
    tv_weight: float = 0.1
    jitter_origin_scale: float = 0.03  # times grid_size, normalized units
    jitter_direction_eps: float = 0.03
    reassign_fraction: float = 0.2
    threshold_start_frac: float = 0.4
    threshold_end_frac: float = 0.8
    threshold_lo: float = 5e-4
    threshold_hi: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 0  # 0: evaluate only at the end
    eval_resolution: int = 48
    seed: int = 0

    @property
    def rays_per_batch(self) -> int:
        return self.patches_per_batch * PATCH * PATCH


def cosine_lr(step, cfg: TrainConfig) -> float:
    if cfg.steps <= 1:
        return cfg.lr_max
    frac = min(max(step / (cfg.steps - 1), 0.0), 1.0)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1 + np.cos(np.pi * frac))


def weight_threshold(step, cfg: TrainConfig) -> float:
    start = cfg.threshold_start_frac * cfg.steps
    end = cfg.threshold_end_frac * cfg.steps
    if step < start:
        return 0.0
    if step >= end:
        return cfg.threshold_hi
    frac = (step - start) / max(end - start, 1)
    return cfg.threshold_lo + frac * (cfg.threshold_hi - cfg.threshold_lo)


# ---------------------------------------------------------------------------
# ray jittering


def _sample_cap(direction, eps, rng):
    """Uniform unit vector v with ||v - direction|| < eps."""
    d = np.asarray(direction, dtype=np.float64)
    cos_min = 1.0 - eps**2 / 2.0
    cos_t = rng.uniform(cos_min, 1.0)
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t**2))
    phi = rng.uniform(0.0, 2 * np.pi)
    # orthonormal frame around d
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, a)
    u /= np.linalg.norm(u)
    w = np.cross(d, u)
    v = cos_t * d + sin_t * (np.cos(phi) * u + np.sin(phi) * w)
    return v / np.linalg.norm(v)


def _rotation_between(a, b):
    """Minimal rotation matrix taking unit vector a to unit vector b."""
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    s2 = float(np.dot(v, v))
    if s2 < 1e-24:
        return np.eye(3)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1 - c) / s2)


def jitter_ray(ray: Ray, layout, rng, cfg: TrainConfig) -> Ray:
    """Gaussian origin noise plus a uniform spherical-cap direction draw."""
    sigma = cfg.jitter_origin_scale * layout.grid_size
    origin = ray.origin + rng.normal(scale=sigma, size=3) if sigma > 0 else ray.origin.copy()
    if cfg.jitter_direction_eps > 0:
        direction = _sample_cap(ray.direction, cfg.jitter_direction_eps, rng)
    else:
        direction = ray.direction.copy()
    return Ray(origin=origin, direction=direction, exposure=ray.exposure,
               pixel_coord=ray.pixel_coord)


def jitter_patch(origins, dirs, layout, rng, cfg: TrainConfig):
    """Per-ray origin noise; one direction rotation shared by the patch."""
    sigma = cfg.jitter_origin_scale * layout.grid_size
    out_o = origins + rng.normal(scale=sigma, size=origins.shape) if sigma > 0 else origins.copy()
    if cfg.jitter_direction_eps > 0:
        center = dirs[len(dirs) // 2]
        target = _sample_cap(center, cfg.jitter_direction_eps, rng)
        rot = _rotation_between(center, target)
        out_d = dirs @ rot.T
        out_d /= np.linalg.norm(out_d, axis=1, keepdims=True)
    else:
        out_d = dirs.copy()
    return out_o, out_d


# ---------------------------------------------------------------------------
# losses


def dssim_forward(student, teacher):
    """Structural dissimilarity of (P, 9, 3) patches with mean-kernel stats.

    Returns (dssim (P,), cache). DSSIM = (1 - SSIM) / 2 with SSIM averaged
    over color channels.
    """
    x = student
    y = teacher
    n = x.shape[1]
    mx = x.mean(axis=1)
    my = y.mean(axis=1)
    vx = (x**2).mean(axis=1) - mx**2
    vy = (y**2).mean(axis=1) - my**2
    cxy = (x * y).mean(axis=1) - mx * my
    a = 2 * mx * my + SSIM_C1
    bterm = 2 * cxy + SSIM_C2
    c = mx**2 + my**2 + SSIM_C1
    d = vx + vy + SSIM_C2
    ssim_ch = a * bterm / (c * d)
    dssim = (1.0 - ssim_ch.mean(axis=1)) / 2.0
    cache = (x, y, mx, my, a, bterm, c, d, n)
    return dssim, cache


def dssim_backward(cache, g_dssim):
    """Adjoint on the student pixels for per-patch DSSIM adjoints (P,)."""
    x, y, mx, my, a, bterm, c, d, n = cache
    da = 2 * my[:, None, :] / n
    db = 2 * (y - my[:, None, :]) / n
    dc = 2 * mx[:, None, :] / n
    dd = 2 * (x - mx[:, None, :]) / n
    cd = (c * d)[:, None, :]
    num = (a * bterm)[:, None, :]
    dssim_dx = (
        (da * bterm[:, None, :] + a[:, None, :] * db) * cd
        - num * (dc * d[:, None, :] + c[:, None, :] * dd)
    ) / cd**2
    # mean over channels, then (1 - ssim)/2
    return g_dssim[:, None, None] * (-0.5 / 3.0) * dssim_dx


def photometric_loss(student_patch, teacher_patch, dssim_weight=1.5, rgb_weight=1.0):
    """Patch loss: dssim_weight * DSSIM + rgb_weight * sum of pixel L2 norms."""
    s = np.asarray(student_patch, dtype=np.float64).reshape(1, PATCH * PATCH, 3)
    t = np.asarray(teacher_patch, dtype=np.float64).reshape(1, PATCH * PATCH, 3)
    if s.shape != t.shape:
        raise ValueError("patch shape mismatch")
    dssim, _ = dssim_forward(s, t)
    rgb = np.linalg.norm(s[0] - t[0], axis=1).sum()
    return float(dssim_weight * dssim[0] + rgb_weight * rgb)


def rgb_norm_forward(student, teacher):
    """Sum over pixels of the color-difference L2 norm, per patch."""
    diff = student - teacher
    norms = np.sqrt((diff**2).sum(axis=2) + 1e-24)
    return norms.sum(axis=1), (diff, norms)


def rgb_norm_backward(cache, g_per_patch):
    diff, norms = cache
    return g_per_patch[:, None, None] * diff / norms[:, :, None]


def geometry_loss(w_student, w_teacher) -> float:
    """Sum of absolute weight differences over shared intervals."""
    ws = np.asarray(w_student, dtype=np.float64)
    wt = np.asarray(w_teacher, dtype=np.float64)
    if ws.shape != wt.shape:
        raise ValueError("weight shape mismatch")
    return float(np.abs(wt - ws).sum())


def consistency_loss(home_rgb, neighbor_rgb) -> float:
    return float(np.linalg.norm(np.asarray(home_rgb) - np.asarray(neighbor_rgb)))


# ---------------------------------------------------------------------------
# batch assembly


@dataclasses.dataclass
class RayBatch:
    origins: np.ndarray          # (N, 3) jittered, normalized coordinates
    dirs: np.ndarray             # (N, 3) unit
    exposure: np.ndarray | None  # (N,) log-domain shifts
    home_cells: list
    assigned_cells: list         # receives the distillation gradients
    reassigned: np.ndarray       # (N,) bool
    consistency_cells: list      # random neighbor paired with home, or None
    num_patches: int

    def __len__(self):
        return self.origins.shape[0]


def make_batch(cameras, layout, rng, cfg: TrainConfig) -> RayBatch:
    """Sample jittered 3x3 patches and assign rays to submodels.

    Each ray lands in its origin's cell, then a reassign_fraction share is
    re-homed to a random active neighbor (cell centers within 2 normalized
    units of the ray origin). For tiled scenes every ray additionally
    draws a random neighbor for the home-vs-neighbor consistency pair.
    """
    origins, dirs, exposures = [], [], []
    for _ in range(cfg.patches_per_batch):
        cam = cameras[rng.integers(len(cameras))]
        r0 = int(rng.integers(0, max(cam.height - PATCH, 0) + 1))
        c0 = int(rng.integers(0, max(cam.width - PATCH, 0) + 1))
        pixels = [(r0 + r, c0 + c) for r in range(PATCH) for c in range(PATCH)]
        d = cam.pixel_rays(pixels)
        o = np.broadcast_to(cam.position, d.shape).copy()
        o, d = jitter_patch(o, d, layout, rng, cfg)
        origins.append(o)
        dirs.append(d)
        exposures.append(np.full(PATCH * PATCH, cam.exposure if cam.exposure is not None else 0.0))
    origins = np.concatenate(origins)
    dirs = np.concatenate(dirs)
    exposure = np.concatenate(exposures)

    n = origins.shape[0]
    home = [assign_submodel(origins[i], layout) for i in range(n)]
    assigned = list(home)
    reassigned = np.zeros(n, dtype=bool)
    consistency: list = [None] * n
    tiled = len(layout.active_cells) > 1
    if tiled and cfg.reassign_fraction > 0:
        flips = rng.random(n) < cfg.reassign_fraction
        for i in np.nonzero(flips)[0]:
            options = [c for c in neighbor_cells(origins[i], layout) if c != home[i]]
            if options:
                assigned[i] = options[rng.integers(len(options))]
                reassigned[i] = True
    if tiled and cfg.consistency_weight > 0:
        for i in range(n):
            options = [c for c in neighbor_cells(origins[i], layout) if c != home[i]]
            if options:
                consistency[i] = options[rng.integers(len(options))]
    return RayBatch(
        origins=origins, dirs=dirs, exposure=exposure, home_cells=home,
        assigned_cells=assigned, reassigned=reassigned,
        consistency_cells=consistency, num_patches=cfg.patches_per_batch,
    )


# ---------------------------------------------------------------------------
# total loss with analytic gradients


@dataclasses.dataclass
class SceneGrads:
    per_cell: dict

    @staticmethod
    def zeros_like(model: SceneModel) -> "SceneGrads":
        per_cell = {}
        for cell, sm in model.submodels.items():
            fg = FieldGrads.zeros_like(sm.triplanes, sm.grid)
            lg = LatticeGrads.zeros_like(sm.lattice)
            per_cell[cell] = {"field": fg, "lattice": lg}
        return SceneGrads(per_cell)

    def named(self, cell):
        fg = self.per_cell[cell]["field"]
        lg = self.per_cell[cell]["lattice"]
        yield "plane_x", fg.planes[0]
        yield "plane_y", fg.planes[1]
        yield "plane_z", fg.planes[2]
        yield "grid", fg.grid
        for n in PARAM_NAMES:
            yield n, lg.arrays[n]


def total_loss(model: SceneModel, batch: RayBatch, teacher_colors, boundaries,
               teacher_weights, cfg: TrainConfig, threshold=0.0, with_grads=True):
    """Weighted distillation loss over a batch, plus analytic gradients.

    Returns (loss, components dict, SceneGrads | None). Rays are rendered
    through their assigned submodels; reassigned rays are rendered a second
    time through their home submodel for the consistency term.
    """
    n = len(batch)
    layout = model.layout
    exposure = batch.exposure if model.exposure else None

    # three render groups per cell: "main" (assigned submodel, feeds the
    # patch colors and weights) plus "home"/"nb" extra renders backing the
    # per-ray home-vs-neighbor consistency pair, reusing main where equal
    jobs = {}

    def enlist(cell, use, i):
        jobs.setdefault(cell, {"main": [], "home": [], "nb": []})[use].append(i)

    cons_ids = [i for i in range(n) if batch.consistency_cells[i] is not None
                ] if cfg.consistency_weight > 0 else []
    for i in range(n):
        enlist(batch.assigned_cells[i], "main", i)
    for i in cons_ids:
        if batch.home_cells[i] != batch.assigned_cells[i]:
            enlist(batch.home_cells[i], "home", i)
        if batch.consistency_cells[i] != batch.assigned_cells[i]:
            enlist(batch.consistency_cells[i], "nb", i)

    rgb = np.zeros((n, 3))
    weights = np.zeros((n, teacher_weights.shape[1]))
    home_rgb = np.zeros((n, 3))
    nb_rgb = np.zeros((n, 3))
    forward = {}
    for cell, idx in jobs.items():
        sm = model.submodels[cell]
        for use in ("main", "home", "nb"):
            ids = np.asarray(idx[use], dtype=np.int64)
            if ids.size == 0:
                continue
            out, cache = render_rays_forward(
                sm, layout, cell, batch.origins[ids], batch.dirs[ids], boundaries[ids],
                gated=model.gated, weight_threshold=threshold,
                exposure=None if exposure is None else exposure[ids],
            )
            forward[(cell, use)] = (ids, out, cache)
            if use == "main":
                rgb[ids] = out.rgb
                weights[ids] = out.weights_masked
            elif use == "home":
                home_rgb[ids] = out.rgb
            else:
                nb_rgb[ids] = out.rgb
    for i in cons_ids:
        if batch.home_cells[i] == batch.assigned_cells[i]:
            home_rgb[i] = rgb[i]
        if batch.consistency_cells[i] == batch.assigned_cells[i]:
            nb_rgb[i] = rgb[i]

    p = batch.num_patches
    student_patches = rgb.reshape(p, PATCH * PATCH, 3)
    teacher_patches = teacher_colors.reshape(p, PATCH * PATCH, 3)

    dssim, dssim_cache = dssim_forward(student_patches, teacher_patches)
    rgb_norms, rgb_cache = rgb_norm_forward(student_patches, teacher_patches)
    loss_dssim = cfg.dssim_weight * dssim.mean()
    loss_rgb = cfg.rgb_weight * rgb_norms.mean()

    geo_diff = weights - teacher_weights
    # per-patch normalization keeps the published per-ray weighting of the
    # geometry and consistency terms relative to the patch losses
    loss_geo = cfg.geometry_weight * np.abs(geo_diff).sum() / p

    cons_ids = np.asarray(cons_ids, dtype=np.int64)
    if cons_ids.size:
        cons_diff = home_rgb[cons_ids] - nb_rgb[cons_ids]
        cons_norm = np.sqrt((cons_diff**2).sum(axis=1) + 1e-24)
        loss_cons = cfg.consistency_weight * cons_norm.sum() / p
    else:
        cons_diff = cons_norm = None
        loss_cons = 0.0

    loss_hg = 0.0
    loss_tv = 0.0
    for sm in model.submodels.values():
        if cfg.hg_weight > 0:
            for arr in (*sm.triplanes.planes, sm.grid.values):
                loss_hg += cfg.hg_weight * float((arr**2).mean())
        if cfg.tv_weight > 0:
            loss_tv += cfg.tv_weight * tv_penalty(sm.lattice)

    total = loss_dssim + loss_rgb + loss_geo + loss_cons + loss_hg + loss_tv
    components = {
        "loss": float(total),
        "loss_dssim": float(loss_dssim),
        "loss_rgb": float(loss_rgb),
        "loss_geometry": float(loss_geo),
        "loss_consistency": float(loss_cons),
        "loss_hg": float(loss_hg),
        "loss_tv": float(loss_tv),
    }
    if not with_grads:
        return float(total), components, None

    grads = SceneGrads.zeros_like(model)

    g_patches = dssim_backward(dssim_cache, np.full(p, cfg.dssim_weight / p))
    g_patches += rgb_norm_backward(rgb_cache, np.full(p, cfg.rgb_weight / p))
    g_rgb = g_patches.reshape(n, 3)
    g_weights = cfg.geometry_weight * np.sign(geo_diff) / p
    g_home_rgb = np.zeros((n, 3))
    g_nb_rgb = np.zeros((n, 3))
    if cons_ids.size:
        g_pair = cfg.consistency_weight / p * cons_diff / cons_norm[:, None]
        for j, i in enumerate(cons_ids):
            if batch.home_cells[i] == batch.assigned_cells[i]:
                g_rgb[i] += g_pair[j]
            else:
                g_home_rgb[i] = g_pair[j]
            if batch.consistency_cells[i] == batch.assigned_cells[i]:
                g_rgb[i] -= g_pair[j]
            else:
                g_nb_rgb[i] = -g_pair[j]

    for (cell, use), (ids, out, cache) in forward.items():
        fg = grads.per_cell[cell]["field"]
        lg = grads.per_cell[cell]["lattice"]
        if use == "main":
            render_rays_backward(cache, g_rgb[ids], g_weights[ids], fg, lg)
        elif use == "home":
            render_rays_backward(cache, g_home_rgb[ids], None, fg, lg)
        else:
            render_rays_backward(cache, g_nb_rgb[ids], None, fg, lg)

    for cell, sm in model.submodels.items():
        fg = grads.per_cell[cell]["field"]
        lg = grads.per_cell[cell]["lattice"]
        if cfg.hg_weight > 0:
            for arr, buf in zip(sm.triplanes.planes, fg.planes):
                buf += cfg.hg_weight * 2.0 * arr / arr.size
            fg.grid += cfg.hg_weight * 2.0 * sm.grid.values / sm.grid.values.size
        if cfg.tv_weight > 0:
            tv_penalty_backward(sm.lattice, lg.arrays, cfg.tv_weight)

    return float(total), components, grads


# ---------------------------------------------------------------------------
# optimizer and training loop


class Adam:
    def __init__(self, model: SceneModel, cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        self.m = {}
        self.v = {}
        for cell, sm in model.submodels.items():
            for name, arr in sm.param_arrays():
                self.m[(cell, name)] = np.zeros_like(arr)
                self.v[(cell, name)] = np.zeros_like(arr)

    def step(self, model: SceneModel, grads: SceneGrads, lr: float):
        cfg = self.cfg
        self.step_count += 1
        t = self.step_count
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        corr1 = 1 - b1**t
        corr2 = 1 - b2**t
        for cell, sm in model.submodels.items():
            grad_by_name = dict(grads.named(cell))
            for name, arr in sm.param_arrays():
                g = grad_by_name[name]
                m = self.m[(cell, name)]
                v = self.v[(cell, name)]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                arr -= lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)


def render_teacher_image(teacher, camera):
    dirs = camera.ray_directions().reshape(-1, 3)
    origins = np.broadcast_to(camera.position, dirs.shape)
    colors, _, _, _ = teacher.query_batch(origins, dirs)
    return colors.reshape(camera.height, camera.width, 3)


def evaluate_psnr(model: SceneModel, teacher, cameras, near, far, num_intervals,
                  threshold=0.0):
    from .rendering import TrainRenderScene, render_image

    scene = TrainRenderScene(model=model, near=near, far=far, num_intervals=num_intervals)
    errs = []
    for cam in cameras:
        student = render_image(cam, scene, weight_threshold=threshold)
        reference = render_teacher_image(teacher, cam)
        errs.append(np.mean((student - reference) ** 2))
    mse = float(np.mean(errs))
    return -10.0 * np.log10(max(mse, 1e-12))


def cross_submodel_discrepancy(model: SceneModel, cameras, near, far,
                               num_intervals, cells=None):
    """Mean per-pixel color distance between two submodels' renders.

    The quantitative form of the popping artifact at cell boundaries: each
    camera is rendered once through each submodel and compared pixelwise.
    """
    from .appearance import interpolate_params
    from .rendering import render_rays_forward, uniform_boundaries
    from .scene import world_to_submodel

    if cells is None:
        cells = model.layout.active_cells
    if len(cells) != 2:
        raise ValueError("discrepancy is defined between exactly two submodels")
    layout = model.layout
    total = 0.0
    count = 0
    for cam in cameras:
        dirs = cam.ray_directions().reshape(-1, 3)
        n = dirs.shape[0]
        origins = np.broadcast_to(cam.position, (n, 3))
        bounds = np.broadcast_to(uniform_boundaries(near, far, num_intervals),
                                 (n, num_intervals + 1))
        renders = []
        for cell in cells:
            sm = model.submodels[cell]
            params = interpolate_params(
                world_to_submodel(cam.position, cell, layout), sm.lattice
            )
            out, _ = render_rays_forward(
                sm, layout, cell, origins, dirs, bounds,
                gated=model.gated, shared_params=params,
            )
            renders.append(out.rgb)
        total += float(np.linalg.norm(renders[0] - renders[1], axis=1).sum())
        count += n
    return total / count


def train(model: SceneModel, teacher, train_cameras, cfg: TrainConfig,
          eval_cameras=None, log_fn=None):
    """Run the distillation loop; mutates the model in place.

    Returns a list of per-step metric dicts (loss components, lr,
    threshold, and periodic held-out PSNR in the "psnr" key).
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model, cfg)
    metrics = []
    near, far = teacher.near, teacher.far
    for step in range(cfg.steps):
        batch = make_batch(train_cameras, model.layout, rng, cfg)
        t_colors, bounds, t_weights, _ = teacher.query_batch(batch.origins, batch.dirs)
        thr = weight_threshold(step, cfg)
        lr = cosine_lr(step, cfg)
        loss, components, grads = total_loss(
            model, batch, t_colors, bounds, t_weights, cfg, threshold=thr
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}: {components}")
        opt.step(model, grads, lr)
        row = {"step": step, **components, "lr": lr, "threshold": thr, "psnr": ""}
        if eval_cameras and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            row["psnr"] = evaluate_psnr(
                model, teacher, eval_cameras, near, far, cfg.num_intervals, thr
            )
        metrics.append(row)
        if log_fn:
            log_fn(row)
    if eval_cameras:
        final = evaluate_psnr(
            model, teacher, eval_cameras, near, far, cfg.num_intervals,
            weight_threshold(cfg.steps, cfg),
        )
        if metrics:
            metrics[-1]["psnr"] = final
        else:
            metrics.append({"step": -1, "psnr": final})
    return metrics
