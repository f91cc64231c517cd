"""Self-check oracles: brute-force and finite-difference validation.

These checks back the ``verify`` CLI command and the acceptance tests:
distance grids against a brute-force Chebyshev scan, skip-on/skip-off
render equivalence, quantization round-trips, and analytic gradients
against central finite differences.

Central differences only make sense where the loss is differentiable, so
the gradient checker excludes lattice entries within ``10 * step`` of a
TV-penalty kink and callers enforce margins on the other absolute-value
terms (weight and color differences) when generating instances.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .baking import build_distance_grid, dequantize, quantize
from .rendering import march_rays_baked, render_rays_forward
from .training import TrainConfig, total_loss

FD_STEP = 1e-3
KINK_MARGIN = 10 * FD_STEP
LATTICE_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclasses.dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def as_dict(self):
        return dataclasses.asdict(self)


def tv_kink_free_entries(lattice, name, margin=KINK_MARGIN):
    """Flat indices of lattice tensor entries clear of every TV kink."""
    arr = getattr(lattice, name)
    p = lattice.size
    a = arr.reshape((p, p, p, -1))
    ok = np.ones(a.shape, dtype=bool)
    offsets = [(u, v, w) for u in (0, 1) for v in (0, 1) for w in (0, 1)][1:]
    for du, dv, dw in offsets:
        lo = np.s_[: p - du if du else p, : p - dv if dv else p, : p - dw if dw else p]
        hi = np.s_[du:, dv:, dw:]
        near = np.abs(a[lo] - a[hi]) < margin
        ok[lo] &= ~near
        ok[hi] &= ~near
    return np.nonzero(ok.reshape(-1))[0]


def batch_margins_ok(model, batch, t_colors, boundaries, t_weights,
                     margin=KINK_MARGIN):
    """True when the instance sits clear of the geometry/photometric/
    consistency absolute-value kinks."""
    n = len(batch)

    def render_cell(cell, ids):
        sm = model.submodels[cell]
        out, _ = render_rays_forward(
            sm, model.layout, cell, batch.origins[ids], batch.dirs[ids],
            boundaries[ids], gated=model.gated,
            exposure=batch.exposure[ids] if model.exposure else None,
        )
        return out

    rgb = np.zeros((n, 3))
    weights = np.zeros_like(t_weights)
    home_rgb = np.zeros((n, 3))
    nb_rgb = np.zeros((n, 3))
    cells = set(batch.assigned_cells) | set(batch.home_cells)
    cells |= {c for c in batch.consistency_cells if c is not None}
    for cell in cells:
        ids = [i for i in range(n) if batch.assigned_cells[i] == cell]
        if ids:
            out = render_cell(cell, ids)
            rgb[ids] = out.rgb
            weights[ids] = out.weights_masked
        hids = [i for i in range(n) if batch.home_cells[i] == cell]
        if hids:
            home_rgb[hids] = render_cell(cell, hids).rgb
        nids = [i for i in range(n) if batch.consistency_cells[i] == cell]
        if nids:
            nb_rgb[nids] = render_cell(cell, nids).rgb
    if np.abs(weights - t_weights).min() < margin:
        return False
    if np.linalg.norm(rgb - t_colors, axis=1).min() < margin:
        return False
    cons = np.array([i for i in range(n) if batch.consistency_cells[i] is not None], int)
    if cons.size and np.linalg.norm(home_rgb[cons] - nb_rgb[cons], axis=1).min() < margin:
        return False
    return True


def check_gradients(model, batch, t_colors, boundaries, t_weights,
                    cfg: TrainConfig, rng, entries_per_tensor=10,
                    step=FD_STEP, rtol=1e-4):
    """Compare every tensor's analytic gradient against central FD.

    Relative error is measured against the tensor's largest gradient
    magnitude. Returns (worst_rel_err, failures) where failures is a list
    of human-readable strings.
    """

    def loss():
        val, _, _ = total_loss(model, batch, t_colors, boundaries, t_weights,
                               cfg, threshold=0.0, with_grads=False)
        return val

    _, _, grads = total_loss(model, batch, t_colors, boundaries, t_weights,
                             cfg, threshold=0.0)
    worst = 0.0
    failures = []
    for cell, sm in model.submodels.items():
        grad_by_name = dict(grads.named(cell))
        for name, arr in sm.param_arrays():
            g = grad_by_name[name].reshape(-1)
            flat = arr.reshape(-1)
            ref = max(np.abs(g).max(), 1e-10)
            if name in LATTICE_NAMES and cfg.tv_weight > 0:
                pool = tv_kink_free_entries(sm.lattice, name, 10 * step)
            else:
                pool = np.arange(flat.size)
            take = min(entries_per_tensor, pool.size)
            if take == 0:
                continue
            for i in rng.choice(pool, size=take, replace=False):
                old = flat[i]
                flat[i] = old + step
                up = loss()
                flat[i] = old - step
                dn = loss()
                flat[i] = old
                fd = (up - dn) / (2 * step)
                err = abs(fd - g[i]) / ref
                worst = max(worst, err)
                if err >= rtol:
                    failures.append(
                        f"cell {cell} tensor {name} entry {i}: fd={fd:.8g} "
                        f"analytic={g[i]:.8g} rel_err={err:.3g}"
                    )
    return worst, failures


# ---------------------------------------------------------------------------
# bundle-level checks


def check_distance_grid(assets, rng, samples=2000) -> CheckResult:
    """Distance values agree with a direct Chebyshev scan.

    Exhaustive for grids up to 32^3, sampled above that.
    """
    d = assets.distance
    l = d.shape[0]
    occ = d == 0
    if l <= 32:
        ref = build_distance_grid_reference(occ)
        ok = bool(np.array_equal(ref, d))
        return CheckResult("distance_grid", ok,
                           "exhaustive equality" if ok else "mismatch vs brute force")
    idx = rng.integers(0, l, size=(samples, 3))
    for v in idx:
        k = int(d[tuple(v)])
        if k == 0:
            if not occ[tuple(v)]:
                return CheckResult("distance_grid", False, f"zero at empty voxel {v}")
            continue
        lo = np.maximum(v - (k - 1), 0)
        hi = np.minimum(v + k, l)
        window = occ[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        if window.any():
            return CheckResult("distance_grid", False, f"occupied voxel within {k - 1} of {v}")
    return CheckResult("distance_grid", True, f"{samples} sampled voxels hold the bound")


def build_distance_grid_reference(occ):
    """O(n^2) nearest-occupied Chebyshev scan (small grids only)."""
    l = occ.shape[0]
    out = np.full(occ.shape, min(255, l), dtype=np.uint8)
    occ_idx = np.argwhere(occ)
    for v in np.ndindex(occ.shape):
        if occ[v]:
            out[v] = 0
        elif len(occ_idx):
            out[v] = min(255, int(np.abs(occ_idx - np.array(v)).max(axis=1).min()))
    return out


def check_skip_equivalence(assets, rng, rays=256) -> CheckResult:
    origins = rng.uniform(-0.95, 0.95, size=(rays, 3))
    dirs = rng.normal(size=(rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    params = assets.lattice.vertex(0)
    fast, _ = march_rays_baked(origins, dirs, assets, params,
                               early_termination=0.0, use_skip=True)
    dense, _ = march_rays_baked(origins, dirs, assets, params,
                                early_termination=0.0, use_skip=False)
    ok = bool(np.array_equal(fast, dense))
    return CheckResult("skip_equivalence", ok,
                       f"{rays} rays bit-identical" if ok else "skip changed the render")


def check_quantization(rng, samples=10_000) -> CheckResult:
    x = rng.uniform(-7, 7, size=samples)
    err = np.abs(dequantize(quantize(x)) - x).max()
    half = 14.0 / 255.0 / 2.0
    ok = bool(err <= half + 1e-12)
    return CheckResult("quantization_roundtrip", ok, f"max error {err:.3e} (half step {half:.3e})")


def check_gradients_spot(model, rng, entries_per_tensor=3) -> CheckResult:
    """Small synthetic-batch FD check against the loaded model."""
    from .training import RayBatch

    n = 9
    layout = model.layout
    span = layout.grid_size / 2 - 0.05
    for _ in range(50):
        origins = rng.uniform(-span, span, size=(n, 3))
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        from .scene import assign_submodel

        home = [assign_submodel(origins[i], layout) for i in range(n)]
        batch = RayBatch(
            origins=origins, dirs=dirs, exposure=np.zeros(n), home_cells=home,
            assigned_cells=list(home), reassigned=np.zeros(n, dtype=bool),
            consistency_cells=[None] * n, num_patches=1,
        )
        start = rng.uniform(0.05, 0.1, size=(n, 1))
        widths = rng.uniform(0.1, 0.3, size=(n, 3))
        boundaries = np.concatenate([start, start + np.cumsum(widths, axis=1)], axis=1)
        t_colors = rng.uniform(0.05, 0.95, size=(n, 3))
        t_weights = rng.uniform(0.05, 0.95, size=(n, 3))
        t_weights *= 0.7 / t_weights.sum(axis=1, keepdims=True)
        cfg = TrainConfig(consistency_weight=0.0)
        if batch_margins_ok(model, batch, t_colors, boundaries, t_weights):
            break
    else:
        return CheckResult("gradient_spot", False, "no kink-free instance found")
    worst, failures = check_gradients(
        model, batch, t_colors, boundaries, t_weights, cfg, rng,
        entries_per_tensor=entries_per_tensor, rtol=1e-4,
    )
    return CheckResult(
        "gradient_spot", not failures,
        f"worst rel err {worst:.3g}" if not failures else failures[0],
    )


def verify_bundle_root(root, seed=0) -> dict:
    """Run the oracle suite over every baked submodel under ``root``."""
    import os

    from .baking import load_bundle, load_scene_index

    rng = np.random.default_rng(seed)
    checks = [check_quantization(rng)]
    scene = load_scene_index(root)
    for sid in scene["submodels"]:
        try:
            bundle = load_bundle(os.path.join(root, "submodels", sid))
        except ValueError as e:
            checks.append(CheckResult(f"{sid}/load", False, str(e)))
            continue
        checks.append(CheckResult(f"{sid}/load", True, "manifest and payloads valid"))
        prefix = [
            check_distance_grid(bundle.assets, rng),
            check_skip_equivalence(bundle.assets, rng),
        ]
        for c in prefix:
            checks.append(CheckResult(f"{sid}/{c.name}", c.passed, c.detail))
    return _report(checks)


def verify_checkpoint(path, seed=0) -> dict:
    from .model import load_model

    rng = np.random.default_rng(seed)
    model, _ = load_model(path)
    checks = [check_quantization(rng), check_gradients_spot(model, rng)]
    return _report(checks)


def _report(checks) -> dict:
    return {
        "passed": all(c.passed for c in checks),
        "checks": [c.as_dict() for c in checks],
    }
