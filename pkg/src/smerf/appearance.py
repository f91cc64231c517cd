"""Deferred appearance: a lattice of tiny view-dependence MLPs.

Each submodel carries a P^3 lattice of parameter sets for a 2x16 ELU MLP.
Parameters are trilinearly interpolated from the camera origin in the
submodel's [-1, 1]^3 frame (once per frame when rendering), and the MLP
shades a ray's accumulated diffuse color and features into a bounded
specular residual.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .util import elu, elu_grad, logit_clamped, sigmoid, sigmoid_grad

HIDDEN = 16
OUT = 3
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


def mlp_input_dim(feature_dim: int, exposure: bool) -> int:
    return 3 + 3 + feature_dim + (1 if exposure else 0)


@dataclasses.dataclass
class MlpParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w1.shape[-2]

    def arrays(self):
        return tuple(getattr(self, n) for n in PARAM_NAMES)


@dataclasses.dataclass
class MlpLattice:
    """P^3 parameter sets stored vertex-major (flattened lex order)."""

    size: int
    w1: np.ndarray  # (P^3, in, HIDDEN)
    b1: np.ndarray  # (P^3, HIDDEN)
    w2: np.ndarray  # (P^3, HIDDEN, HIDDEN)
    b2: np.ndarray
    w3: np.ndarray  # (P^3, HIDDEN, OUT)
    b3: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w1.shape[-2]

    @property
    def params_per_vertex(self) -> int:
        return sum(int(np.prod(getattr(self, n).shape[1:])) for n in PARAM_NAMES)

    def arrays(self):
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def vertex(self, flat_index: int) -> MlpParams:
        return MlpParams(*(getattr(self, n)[flat_index] for n in PARAM_NAMES))


def init_lattice(rng, size, input_dim, vertex_noise=0.0, residual_bias=-2.0) -> MlpLattice:
    """He-style init, identical across vertices plus optional per-vertex noise."""
    n = size**3
    base = {
        "w1": rng.normal(scale=np.sqrt(1.0 / input_dim), size=(input_dim, HIDDEN)),
        "b1": np.zeros(HIDDEN),
        "w2": rng.normal(scale=np.sqrt(1.0 / HIDDEN), size=(HIDDEN, HIDDEN)),
        "b2": np.zeros(HIDDEN),
        "w3": rng.normal(scale=np.sqrt(1.0 / HIDDEN), size=(HIDDEN, OUT)),
        "b3": np.full(OUT, residual_bias, dtype=np.float64),
    }
    arrays = {}
    for name, b in base.items():
        tiled = np.broadcast_to(b, (n,) + b.shape).copy()
        if vertex_noise > 0:
            tiled += rng.normal(scale=vertex_noise, size=tiled.shape)
        arrays[name] = tiled
    return MlpLattice(size=size, **arrays)


def lattice_corner_weights(origins_local, size):
    """Trilerp corner indices and weights over the [-1, 1]^3 lattice.

    origins_local: (B, 3), clamped to the lattice boundary. Returns
    (idx (B, 8), wts (B, 8)) into the flattened vertex axis.
    """
    o = np.atleast_2d(np.asarray(origins_local, dtype=np.float64))
    b = o.shape[0]
    if size == 1:
        return np.zeros((b, 8), dtype=np.int64), np.concatenate(
            [np.ones((b, 1)), np.zeros((b, 7))], axis=1
        )
    u = np.clip((o + 1.0) / 2.0 * (size - 1), 0.0, size - 1)
    i0 = np.minimum(np.floor(u), size - 2).astype(np.int64)
    f = u - i0
    idx_list, wts_list = [], []
    for du, dv, dw in (
        (0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0),
        (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1),
    ):
        idx_list.append(
            ((i0[:, 0] + du) * size + (i0[:, 1] + dv)) * size + (i0[:, 2] + dw)
        )
        wu = f[:, 0] if du else 1 - f[:, 0]
        wv = f[:, 1] if dv else 1 - f[:, 1]
        ww = f[:, 2] if dw else 1 - f[:, 2]
        wts_list.append(wu * wv * ww)
    return np.stack(idx_list, axis=1), np.stack(wts_list, axis=1)


def corner_weight_matrix(origins_local, size):
    """Dense (B, P^3) trilerp weight matrix; rows sum to one."""
    idx, wts = lattice_corner_weights(origins_local, size)
    mat = np.zeros((idx.shape[0], size**3))
    np.add.at(mat, (np.arange(idx.shape[0])[:, None], idx), wts)
    return mat


def interpolate_params(origin_local, lattice: MlpLattice) -> MlpParams:
    mat = corner_weight_matrix(np.atleast_2d(np.asarray(origin_local, float)), lattice.size)
    blended = []
    for arr in lattice.arrays():
        flat = arr.reshape(arr.shape[0], -1)
        blended.append((mat @ flat).reshape(arr.shape[1:]))
    return MlpParams(*blended)


def gather_batched_params(origins_local, lattice: MlpLattice):
    """Per-ray blended parameter tensors plus the weight matrix for backprop."""
    mat = corner_weight_matrix(origins_local, lattice.size)
    out = {}
    for name, arr in zip(PARAM_NAMES, lattice.arrays()):
        flat = arr.reshape(arr.shape[0], -1)
        out[name] = (mat @ flat).reshape((mat.shape[0],) + arr.shape[1:])
    return out, mat


def mlp_forward(params, x):
    """ELU MLP; params arrays may carry a leading batch axis."""
    w1, b1, w2, b2, w3, b3 = (
        params[n] if isinstance(params, dict) else getattr(params, n)
        for n in PARAM_NAMES
    )
    a1 = np.squeeze(x[:, None, :] @ w1, axis=1) + b1
    z1 = elu(a1)
    a2 = np.squeeze(z1[:, None, :] @ w2, axis=1) + b2
    z2 = elu(a2)
    out = np.squeeze(z2[:, None, :] @ w3, axis=1) + b3
    cache = (x, a1, z1, a2, z2, w1, w2, w3)
    return out, cache


def mlp_backward(cache, g_out):
    """Per-sample parameter gradients and input gradient."""
    x, a1, z1, a2, z2, w1, w2, w3 = cache
    g_w3 = z2[:, :, None] * g_out[:, None, :]
    g_b3 = g_out
    g_z2 = np.squeeze(g_out[:, None, :] @ np.swapaxes(w3, -1, -2), axis=1)
    g_a2 = g_z2 * elu_grad(a2)
    g_w2 = z1[:, :, None] * g_a2[:, None, :]
    g_b2 = g_a2
    g_z1 = np.squeeze(g_a2[:, None, :] @ np.swapaxes(w2, -1, -2), axis=1)
    g_a1 = g_z1 * elu_grad(a1)
    g_w1 = x[:, :, None] * g_a1[:, None, :]
    g_b1 = g_a1
    g_x = np.squeeze(g_a1[:, None, :] @ np.swapaxes(w1, -1, -2), axis=1)
    grads = {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2, "w3": g_w3, "b3": g_b3}
    return grads, g_x


def shade_forward(diffuse_acc, feature_acc, view_dirs, params, exposure=None):
    """Deferred shading of accumulated ray quantities.

    rgb = clip(diffuse_acc + sigmoid(mlp(inputs)), 0, 1). With exposure
    given, feature inputs become clamped-logit(feature) + exposure and the
    exposure scalar is appended to the input vector.
    """
    diffuse_acc = np.atleast_2d(diffuse_acc)
    feature_acc = np.atleast_2d(feature_acc)
    view_dirs = np.atleast_2d(view_dirs)
    if exposure is not None:
        e = np.broadcast_to(np.atleast_1d(np.asarray(exposure, float)), (diffuse_acc.shape[0],))
        logit_f, logit_grad = logit_clamped(feature_acc)
        feat_in = logit_f + e[:, None]
        x = np.concatenate([view_dirs, diffuse_acc, feat_in, e[:, None]], axis=1)
    else:
        logit_grad = None
        x = np.concatenate([view_dirs, diffuse_acc, feature_acc], axis=1)
    out, mlp_cache = mlp_forward(params, x)
    residual = sigmoid(out)
    rgb = np.clip(diffuse_acc + residual, 0.0, 1.0)
    inside = (diffuse_acc + residual > 0.0) & (diffuse_acc + residual < 1.0)
    cache = (mlp_cache, residual, inside, logit_grad, feature_acc.shape[1])
    return rgb, cache


def shade_backward(cache, g_rgb):
    """Returns (g_diffuse_acc, g_feature_acc, per-sample mlp grads)."""
    mlp_cache, residual, inside, logit_grad, feat_dim = cache
    g_pre = g_rgb * inside
    g_out = g_pre * sigmoid_grad(residual)
    mlp_grads, g_x = mlp_backward(mlp_cache, g_out)
    g_diffuse = g_pre + g_x[:, 3:6]
    g_feat_in = g_x[:, 6 : 6 + feat_dim]
    if logit_grad is not None:
        g_feature = g_feat_in * logit_grad
    else:
        g_feature = g_feat_in
    return g_diffuse, g_feature, mlp_grads


def shade(diffuse_acc, feature_acc, view_dir, params, exposure=None):
    rgb, _ = shade_forward(diffuse_acc, feature_acc, view_dir, params, exposure)
    return rgb[0] if np.asarray(diffuse_acc).ndim == 1 else rgb


def tv_penalty(lattice: MlpLattice) -> float:
    """L1 variation between axis-adjacent lattice vertices, normalized by
    the per-vertex parameter count."""
    p = lattice.size
    if p <= 1:
        return 0.0
    total = 0.0
    for arr in lattice.arrays():
        a = arr.reshape((p, p, p) + arr.shape[1:])
        for du, dv, dw in _POSITIVE_OFFSETS:
            lo = a[: p - du if du else p, : p - dv if dv else p, : p - dw if dw else p]
            hi = a[du:, dv:, dw:]
            total += float(np.abs(lo - hi).sum())
    return total / lattice.params_per_vertex


def tv_penalty_backward(lattice: MlpLattice, grads: dict, weight: float):
    """Accumulates weight * d(tv_penalty)/d(params) into grads arrays."""
    p = lattice.size
    if p <= 1:
        return
    scale = weight / lattice.params_per_vertex
    for name, arr in zip(PARAM_NAMES, lattice.arrays()):
        a = arr.reshape((p, p, p) + arr.shape[1:])
        g = grads[name].reshape((p, p, p) + arr.shape[1:])
        for du, dv, dw in _POSITIVE_OFFSETS:
            lo_sl = np.s_[: p - du if du else p, : p - dv if dv else p, : p - dw if dw else p]
            hi_sl = np.s_[du:, dv:, dw:]
            s = np.sign(a[lo_sl] - a[hi_sl]) * scale
            g[lo_sl] += s
            g[hi_sl] -= s


_POSITIVE_OFFSETS = tuple(
    (du, dv, dw)
    for du in (0, 1)
    for dv in (0, 1)
    for dw in (0, 1)
    if (du, dv, dw) != (0, 0, 0)
)


@dataclasses.dataclass
class LatticeGrads:
    arrays: dict

    @staticmethod
    def zeros_like(lattice: MlpLattice) -> "LatticeGrads":
        return LatticeGrads({n: np.zeros_like(getattr(lattice, n)) for n in PARAM_NAMES})

    def scatter(self, mat, per_sample_grads):
        """Accumulate per-ray parameter grads through the trilerp weights."""
        for name, g in per_sample_grads.items():
            flat = g.reshape(g.shape[0], -1)
            acc = mat.T @ flat
            self.arrays[name] += acc.reshape(self.arrays[name].shape)
