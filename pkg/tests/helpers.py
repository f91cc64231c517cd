"""Shared test utilities: small random training instances for the
finite-difference gradient oracle in smerf.verify.

Instance generation enforces a margin around the absolute-value kinks
(geometry loss, pixel-norm loss, consistency norm) by redrawing the free
teacher inputs until the loss is differentiable at the evaluation point.
"""

from __future__ import annotations

import numpy as np

from smerf.model import init_scene_model
from smerf.scene import SceneLayout, assign_submodel, neighbor_cells
from smerf.training import PATCH, RayBatch, TrainConfig
from smerf.verify import FD_STEP, batch_margins_ok, check_gradients as _check_gradients

KINK_MARGIN = 10 * FD_STEP


def grid_layout(k, active=None, prescale=1.0):
    if active is None:
        active = [(u, v, w) for u in range(k) for v in range(k) for w in range(k)]
    return SceneLayout(
        grid_size=k, scale=1.0, center=(0.0, 0.0, 0.0),
        contraction_prescale=prescale, active_cells=tuple(sorted(active)),
    )


def make_instance(seed, tiled=False, exposure=False, gated=True, patches=2,
                  intervals=3, plane_res=8, grid_res=4, lattice_size=2):
    """A tiny random training problem with kink margins enforced."""
    rng = np.random.default_rng(seed)
    if tiled:
        layout = grid_layout(2, active=[(0, 0, 0), (1, 0, 0)], prescale=0.8)
    else:
        layout = grid_layout(1, prescale=2.5)
    model = init_scene_model(
        rng, layout, plane_res=plane_res, grid_res=grid_res, lattice_size=lattice_size,
        gated=gated, exposure=exposure, init_scale=0.15, vertex_noise=0.1,
    )
    cfg = TrainConfig(
        steps=1, patches_per_batch=patches, num_intervals=intervals,
        consistency_weight=1.0 if tiled else 0.0,
    )

    n = patches * PATCH * PATCH
    span = layout.grid_size / 2 - 0.05
    origins = rng.uniform(-span, span, size=(n, 3))
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    exposure_vals = rng.uniform(-0.5, 0.5, size=n) if exposure else np.zeros(n)

    home = [assign_submodel(origins[i], layout) for i in range(n)]
    assigned = list(home)
    reassigned = np.zeros(n, dtype=bool)
    consistency: list = [None] * n
    if tiled:
        for i in range(0, n, 3):  # deterministic 1/3 reassignment
            options = [c for c in neighbor_cells(origins[i], layout) if c != home[i]]
            if options:
                assigned[i] = options[rng.integers(len(options))]
                reassigned[i] = True
        for i in range(n):
            if i % 3 == 2:
                continue  # leave some rays without a pair
            options = [c for c in neighbor_cells(origins[i], layout) if c != home[i]]
            if options:
                consistency[i] = options[rng.integers(len(options))]
    batch = RayBatch(
        origins=origins, dirs=dirs, exposure=exposure_vals, home_cells=home,
        assigned_cells=assigned, reassigned=reassigned,
        consistency_cells=consistency, num_patches=patches,
    )

    start = rng.uniform(0.05, 0.1, size=(n, 1))
    widths = rng.uniform(0.2, 0.4, size=(n, intervals))
    boundaries = np.concatenate([start, start + np.cumsum(widths, axis=1)], axis=1)

    for _ in range(200):
        t_colors = rng.uniform(0.05, 0.95, size=(n, 3))
        t_weights = rng.uniform(0.05, 0.95, size=(n, intervals))
        t_weights *= rng.uniform(0.3, 0.9, size=(n, 1)) / t_weights.sum(axis=1, keepdims=True)
        if batch_margins_ok(model, batch, t_colors, boundaries, t_weights):
            break
    else:
        raise RuntimeError("could not find a kink-free instance")
    return model, batch, t_colors, boundaries, t_weights, cfg


def check_gradients(model, batch, t_colors, boundaries, t_weights, cfg, rng,
                    entries_per_tensor=10, step=FD_STEP, rtol=1e-4):
    worst, failures = _check_gradients(
        model, batch, t_colors, boundaries, t_weights, cfg, rng,
        entries_per_tensor=entries_per_tensor, step=step, rtol=rtol,
    )
    assert not failures, "\n".join(failures[:5])
    return worst
