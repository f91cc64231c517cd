"""Per-submodel feature field: triplanes plus a low-resolution voxel grid.

All grids live over contracted space [-2, 2] with texels at cell centers.
Aggregation gates the high-resolution triplane contribution by the last
voxel channel, and the activated sample splits into density, diffuse
color, and a view-dependence feature vector.

Sampling is linear in the grid parameters, so the backward passes here are
exact scatter-adds of the interpolation weights.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .scene import SQUASH_MAX, SQUASH_MIN
from .util import scatter_rows, sigmoid, sigmoid_grad

CHANNELS = 8
GATE_CHANNEL = 7
# extra view-dependence channels appended from the voxel grid sample
FEATURE_DIM_GATED = 4 + CHANNELS
FEATURE_DIM_MERF = 4
SIGMA_CLAMP = 1e4

# coordinate pairs each plane is indexed by (plane normal axis dropped)
PLANE_AXES = ((1, 2), (0, 2), (0, 1))


@dataclasses.dataclass
class TriplaneSet:
    """Three axis-aligned feature planes of shape (R, R, 8)."""

    planes: list[np.ndarray]
    resolution: int

    def __post_init__(self):
        if len(self.planes) != 3:
            raise ValueError("expected three planes")
        for p in self.planes:
            if p.shape != (self.resolution, self.resolution, CHANNELS):
                raise ValueError(f"bad plane shape {p.shape}")


@dataclasses.dataclass
class VoxelGrid:
    """Dense (L, L, L, 8) grid; channel 7 gates the triplanes."""

    values: np.ndarray
    resolution: int

    def __post_init__(self):
        if self.values.shape != (self.resolution,) * 3 + (CHANNELS,):
            raise ValueError(f"bad grid shape {self.values.shape}")


@dataclasses.dataclass
class FieldSample:
    density: float
    diffuse: np.ndarray
    view_feature: np.ndarray


def _grid_coords(p, resolution):
    """Continuous texel-space coordinates with edge clamping.

    Returns integer lower indices and fractional weights per axis.
    """
    h = (SQUASH_MAX - SQUASH_MIN) / resolution
    u = (np.asarray(p, dtype=np.float64) - SQUASH_MIN) / h - 0.5
    i0 = np.clip(np.floor(u), 0, resolution - 2).astype(np.int64)
    f = np.clip(u - i0, 0.0, 1.0)
    return i0, f


def sample_plane_batch(plane, pts2):
    """Bilinear samples of an (R, R, C) plane at (N, 2) points in [-2, 2]."""
    r = plane.shape[0]
    i0, fi = _grid_coords(pts2[:, 0], r)
    j0, fj = _grid_coords(pts2[:, 1], r)
    w00 = (1 - fi) * (1 - fj)
    w10 = fi * (1 - fj)
    w01 = (1 - fi) * fj
    w11 = fi * fj
    flat = plane.reshape(r * r, plane.shape[-1])
    idx = np.stack(
        [i0 * r + j0, (i0 + 1) * r + j0, i0 * r + (j0 + 1), (i0 + 1) * r + (j0 + 1)],
        axis=1,
    )
    wts = np.stack([w00, w10, w01, w11], axis=1)
    vals = (flat[idx] * wts[:, :, None]).sum(axis=1)
    return vals, (idx, wts, r)


def sample_plane_backward(cache, g_vals, g_plane):
    idx, wts, r = cache
    flat = g_plane.reshape(r * r, g_plane.shape[-1])
    for corner in range(4):
        scatter_rows(flat, idx[:, corner], g_vals * wts[:, corner : corner + 1])


def sample_voxel_batch(grid, pts3):
    """Trilinear samples of an (L, L, L, C) grid at (N, 3) points."""
    l = grid.shape[0]
    i0, fi = _grid_coords(pts3[:, 0], l)
    j0, fj = _grid_coords(pts3[:, 1], l)
    k0, fk = _grid_coords(pts3[:, 2], l)
    flat = grid.reshape(l * l * l, grid.shape[-1])
    idx_list = []
    wts_list = []
    for di, dj, dk in (
        (0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0),
        (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1),
    ):
        idx_list.append(((i0 + di) * l + (j0 + dj)) * l + (k0 + dk))
        wi = fi if di else 1 - fi
        wj = fj if dj else 1 - fj
        wk = fk if dk else 1 - fk
        wts_list.append(wi * wj * wk)
    idx = np.stack(idx_list, axis=1)
    wts = np.stack(wts_list, axis=1)
    vals = (flat[idx] * wts[:, :, None]).sum(axis=1)
    return vals, (idx, wts, l)


def sample_voxel_backward(cache, g_vals, g_grid):
    idx, wts, l = cache
    flat = g_grid.reshape(l * l * l, g_grid.shape[-1])
    for corner in range(8):
        scatter_rows(flat, idx[:, corner], g_vals * wts[:, corner : corner + 1])


def sample_plane(plane, p2):
    vals, _ = sample_plane_batch(plane, np.atleast_2d(np.asarray(p2, float)))
    return vals[0]


def sample_voxel(grid, p3):
    vals, _ = sample_voxel_batch(grid.values if isinstance(grid, VoxelGrid) else grid,
                                 np.atleast_2d(np.asarray(p3, float)))
    return vals[0]


def _plane_points(pts3):
    return [pts3[:, list(axes)] for axes in PLANE_AXES]


def gated_features_batch(pts3, triplanes: TriplaneSet, grid: VoxelGrid):
    """Gated aggregation t_hat = gate * (Px + Py + Pz) + V at (N, 3) points.

    Returns (t_hat, v, cache); v is the raw voxel sample so callers can
    build the concatenated feature vector.
    """
    plane_samples = []
    plane_caches = []
    for plane, pp in zip(triplanes.planes, _plane_points(pts3)):
        s, c = sample_plane_batch(plane, pp)
        plane_samples.append(s)
        plane_caches.append(c)
    v, vox_cache = sample_voxel_batch(grid.values, pts3)
    plane_sum = plane_samples[0] + plane_samples[1] + plane_samples[2]
    gate = v[:, GATE_CHANNEL : GATE_CHANNEL + 1]
    t_hat = gate * plane_sum + v
    cache = (plane_caches, vox_cache, plane_sum, gate)
    return t_hat, v, cache


def gated_features_backward(cache, g_that, g_v_direct, grads):
    """Accumulate parameter gradients of the gated aggregation.

    grads is a FieldGrads; g_v_direct carries adjoints that reach the voxel
    sample through paths other than t_hat (the feature concatenation).
    """
    plane_caches, vox_cache, plane_sum, gate = cache
    g_plane = gate * g_that
    for cache_p, g_buf in zip(plane_caches, grads.planes):
        sample_plane_backward(cache_p, g_plane, g_buf)
    g_v = g_that + g_v_direct
    g_v[:, GATE_CHANNEL] += (plane_sum * g_that).sum(axis=1)
    sample_voxel_backward(vox_cache, g_v, grads.grid)


def gated_features(x, triplanes: TriplaneSet, grid: VoxelGrid):
    t_hat, v, _ = gated_features_batch(np.atleast_2d(np.asarray(x, float)), triplanes, grid)
    return t_hat[0], v[0]


def merf_features_batch(pts3, triplanes: TriplaneSet, grid: VoxelGrid):
    """Ungated baseline: plain sum of the four samples."""
    plane_caches = []
    total = None
    for plane, pp in zip(triplanes.planes, _plane_points(pts3)):
        s, c = sample_plane_batch(plane, pp)
        total = s if total is None else total + s
        plane_caches.append(c)
    v, vox_cache = sample_voxel_batch(grid.values, pts3)
    return total + v, (plane_caches, vox_cache)


def merf_features_backward(cache, g_t, grads):
    plane_caches, vox_cache = cache
    for cache_p, g_buf in zip(plane_caches, grads.planes):
        sample_plane_backward(cache_p, g_t, g_buf)
    sample_voxel_backward(vox_cache, g_t, grads.grid)


def merf_features(x, triplanes: TriplaneSet, grid: VoxelGrid):
    t, _ = merf_features_batch(np.atleast_2d(np.asarray(x, float)), triplanes, grid)
    return t[0]


def activations_batch(t_hat, v=None):
    """Rectify aggregated features into (sigma, diffuse, view feature).

    With v given (gated mode) the view feature is the sigmoid of the last
    four t_hat channels concatenated with all eight voxel channels.
    """
    sigma_raw = np.exp(np.minimum(t_hat[:, 0], np.log(SIGMA_CLAMP)))
    diffuse = sigmoid(t_hat[:, 1:4])
    if v is None:
        fpre = t_hat[:, 4:8]
    else:
        fpre = np.concatenate([t_hat[:, 4:8], v], axis=1)
    feature = sigmoid(fpre)
    cache = (sigma_raw, t_hat[:, 0], diffuse, feature)
    return sigma_raw, diffuse, feature, cache


def activations_backward(cache, g_sigma, g_diffuse, g_feature):
    """Returns (g_that, g_v_direct); g_v_direct is None in ungated mode."""
    sigma, t0, diffuse, feature = cache
    g_that = np.zeros((sigma.shape[0], CHANNELS))
    g_that[:, 0] = g_sigma * np.where(t0 < np.log(SIGMA_CLAMP), sigma, 0.0)
    g_that[:, 1:4] = g_diffuse * sigmoid_grad(diffuse)
    g_fpre = g_feature * sigmoid_grad(feature)
    g_that[:, 4:8] = g_fpre[:, :4]
    if g_fpre.shape[1] > 4:
        return g_that, g_fpre[:, 4:]
    return g_that, None


def activations(t_hat, v=None):
    t_hat = np.atleast_2d(np.asarray(t_hat, float))
    v = None if v is None else np.atleast_2d(np.asarray(v, float))
    sigma, diffuse, feature, _ = activations_batch(t_hat, v)
    return FieldSample(density=float(sigma[0]), diffuse=diffuse[0], view_feature=feature[0])


@dataclasses.dataclass
class FieldGrads:
    planes: list[np.ndarray]
    grid: np.ndarray

    @staticmethod
    def zeros_like(triplanes: TriplaneSet, grid: VoxelGrid) -> "FieldGrads":
        return FieldGrads(
            planes=[np.zeros_like(p) for p in triplanes.planes],
            grid=np.zeros_like(grid.values),
        )


def field_forward(triplanes, grid, pts3, gated=True):
    """Full field evaluation at contracted points: sample, gate, activate."""
    if gated:
        t_hat, v, agg_cache = gated_features_batch(pts3, triplanes, grid)
        sigma, diffuse, feature, act_cache = activations_batch(t_hat, v)
    else:
        t_hat, agg_cache = merf_features_batch(pts3, triplanes, grid)
        sigma, diffuse, feature, act_cache = activations_batch(t_hat, None)
    return sigma, diffuse, feature, (gated, agg_cache, act_cache)


def field_backward(cache, g_sigma, g_diffuse, g_feature, grads: FieldGrads):
    gated, agg_cache, act_cache = cache
    g_that, g_v_direct = activations_backward(act_cache, g_sigma, g_diffuse, g_feature)
    if gated:
        gated_features_backward(agg_cache, g_that, g_v_direct, grads)
    else:
        merf_features_backward(agg_cache, g_that, grads)
