"""Teacher oracle: analytic constant-density scenes with exact weights.

A scene is a set of axis-aligned boxes and spheres with constant density
and albedo (plus an optional view-dependent highlight). Transmittance
through such a field is piecewise exponential and integrates in closed
form, so per-interval compositing weights are exact: w_i = T(t_i) -
T(t_{i+1}).
"""

from __future__ import annotations

import abc
import dataclasses

import numpy as np

from .rendering import IntervalSet
from .scene import Ray

DEFAULT_INTERVALS = 32


@dataclasses.dataclass
class Specular:
    """Additive highlight: color * max(0, -dir . light)^power."""

    color: np.ndarray
    light: np.ndarray
    power: float = 8.0

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=np.float64)
        self.light = np.asarray(self.light, dtype=np.float64)
        self.light = self.light / np.linalg.norm(self.light)


@dataclasses.dataclass
class Box:
    center: np.ndarray
    size: np.ndarray
    density: float
    albedo: np.ndarray
    specular: Specular | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.density < 0:
            raise ValueError("density must be nonnegative")

    def intersect(self, origins, dirs):
        lo = self.center - self.size / 2.0
        hi = self.center + self.size / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origins) * inv
            t2 = (hi - origins) * inv
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tin = np.minimum(t1, t2).max(axis=-1)
        tout = np.maximum(t1, t2).min(axis=-1)
        miss = tout <= np.maximum(tin, 0.0)
        return np.where(miss, np.inf, tin), np.where(miss, -np.inf, tout)

    def scaled(self, scale, center):
        return dataclasses.replace(
            self,
            center=(self.center - center) * scale,
            size=self.size * scale,
            density=self.density / scale,
        )


@dataclasses.dataclass
class Sphere:
    center: np.ndarray
    radius: float
    density: float
    albedo: np.ndarray
    specular: Specular | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.density < 0:
            raise ValueError("density must be nonnegative")

    def intersect(self, origins, dirs):
        oc = origins - self.center
        b = (oc * dirs).sum(axis=-1)
        c = (oc * oc).sum(axis=-1) - self.radius**2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        tin = -b - root
        tout = -b + root
        miss = (disc <= 0) | (tout <= np.maximum(tin, 0.0))
        return np.where(miss, np.inf, tin), np.where(miss, -np.inf, tout)

    def scaled(self, scale, center):
        return dataclasses.replace(
            self,
            center=(self.center - center) * scale,
            radius=self.radius * scale,
            density=self.density / scale,
        )


@dataclasses.dataclass
class AnalyticScene:
    primitives: list
    background: np.ndarray
    near: float = 0.05
    far: float = 4.0

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.near <= 0 or self.far <= self.near:
            raise ValueError("need 0 < near < far")

    def normalized(self, layout) -> "AnalyticScene":
        """The same scene expressed in normalized coordinates."""
        return AnalyticScene(
            primitives=[p.scaled(layout.scale, np.asarray(layout.center)) for p in self.primitives],
            background=self.background,
            near=self.near * layout.scale,
            far=self.far * layout.scale,
        )

    def emitted_colors(self, dirs):
        """(P, B, 3) emitted color of each primitive for ray directions."""
        out = []
        for p in self.primitives:
            c = np.broadcast_to(p.albedo, (dirs.shape[0], 3)).copy()
            if p.specular is not None:
                glint = np.maximum(0.0, -(dirs @ p.specular.light)) ** p.specular.power
                c = c + glint[:, None] * p.specular.color
            out.append(np.clip(c, 0.0, 1.0))
        return np.stack(out, axis=0) if out else np.zeros((0, dirs.shape[0], 3))


@dataclasses.dataclass
class TeacherResponse:
    color: np.ndarray
    intervals: IntervalSet
    interval_colors: np.ndarray


class TeacherOracle(abc.ABC):
    """Any model able to answer rays with a color and weighted intervals."""

    @property
    @abc.abstractmethod
    def near(self) -> float:
        ...

    @property
    @abc.abstractmethod
    def far(self) -> float:
        ...

    @abc.abstractmethod
    def query_batch(self, origins, dirs):
        """Returns (colors (B,3), boundaries (B,S+1), weights (B,S),
        interval_colors (B,S,3))."""

    def query(self, ray: Ray) -> TeacherResponse:
        colors, bounds, weights, icolors = self.query_batch(
            ray.origin[None], ray.direction[None]
        )
        return TeacherResponse(
            color=colors[0],
            intervals=IntervalSet(boundaries=bounds[0], weights=np.minimum(weights[0], 1.0)),
            interval_colors=icolors[0],
        )


class AnalyticTeacher(TeacherOracle):
    def __init__(self, scene: AnalyticScene, num_intervals: int = DEFAULT_INTERVALS):
        self.scene = scene
        self.num_intervals = num_intervals

    @property
    def near(self) -> float:
        return self.scene.near

    @property
    def far(self) -> float:
        return self.scene.far

    def query_batch(self, origins, dirs):
        return teacher_query_batch(origins, dirs, self.scene, self.num_intervals)


def _optical_depth_to(ts, entries, exits, densities):
    """Optical depth accumulated from near to each t.

    ts: (B, T); entries/exits: (P, B); densities: (P,). Entry/exit values
    are already clipped to [near, far].
    """
    overlap = np.clip(
        np.minimum(ts[None, :, :], exits[:, :, None]) - entries[:, :, None], 0.0, None
    )
    return np.einsum("p,pbt->bt", densities, overlap)


def teacher_query_batch(origins, dirs, scene: AnalyticScene, num_intervals=DEFAULT_INTERVALS):
    """Exact color and per-interval weights for a batch of rays.

    Interval boundaries are an even partition of [near, far]; weights are
    the exact transmittance drops T(t_i) - T(t_{i+1}); interval colors are
    the weight-mass-weighted mean emission inside each interval.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    b = origins.shape[0]
    s = num_intervals
    bounds = np.broadcast_to(
        np.linspace(scene.near, scene.far, s + 1), (b, s + 1)
    ).copy()

    prims = scene.primitives
    if not prims:
        colors = np.broadcast_to(scene.background, (b, 3)).copy()
        return colors, bounds, np.zeros((b, s)), np.zeros((b, s, 3))

    densities = np.array([p.density for p in prims])
    ent_list, exi_list = [], []
    for p in prims:
        tin, tout = p.intersect(origins, dirs)
        ent_list.append(np.clip(tin, scene.near, scene.far))
        exi_list.append(np.clip(tout, scene.near, scene.far))
    entries = np.stack(ent_list, axis=0)  # (P, B)
    exits = np.stack(exi_list, axis=0)

    trans_at = np.exp(-_optical_depth_to(bounds, entries, exits, densities))
    weights = trans_at[:, :-1] - trans_at[:, 1:]

    # segment decomposition: primitive boundaries merged with the interval
    # boundaries so emission is constant within every segment
    cuts = np.concatenate([bounds, entries.T, exits.T], axis=1)
    cuts = np.sort(np.clip(cuts, scene.near, scene.far), axis=1)
    seg_a = cuts[:, :-1]
    seg_b = cuts[:, 1:]
    mids = (seg_a + seg_b) / 2.0
    t_a = np.exp(-_optical_depth_to(seg_a, entries, exits, densities))
    t_b = np.exp(-_optical_depth_to(seg_b, entries, exits, densities))
    mass = t_a - t_b  # (B, nseg)

    inside = (mids[None, :, :] > entries[:, :, None]) & (mids[None, :, :] < exits[:, :, None])
    dens_at = np.einsum("p,pbn->bn", densities, inside)
    emit = scene.emitted_colors(dirs)  # (P, B, 3)
    weighted = np.einsum("p,pbn,pbc->bnc", densities, inside, emit)
    seg_color = weighted / np.maximum(dens_at, 1e-300)[:, :, None]

    colors = (mass[:, :, None] * seg_color).sum(axis=1)
    colors += trans_at[:, -1:] * scene.background

    # bucket segment masses into their intervals for per-interval colors
    seg_idx = np.clip(np.searchsorted(bounds[0], mids, side="right") - 1, 0, s - 1)
    flat_idx = (np.arange(b)[:, None] * s + seg_idx).reshape(-1)
    mass_acc = np.bincount(flat_idx, weights=mass.reshape(-1), minlength=b * s)
    color_acc = np.zeros((b * s, 3))
    for c in range(3):
        color_acc[:, c] = np.bincount(
            flat_idx, weights=(mass[:, :, None] * seg_color)[:, :, c].reshape(-1), minlength=b * s
        )
    interval_colors = color_acc / np.maximum(mass_acc, 1e-300)[:, None]
    interval_colors = interval_colors.reshape(b, s, 3)

    return colors, bounds, np.maximum(weights, 0.0), interval_colors


def teacher_query(ray: Ray, scene: AnalyticScene, num_intervals=DEFAULT_INTERVALS) -> TeacherResponse:
    return AnalyticTeacher(scene, num_intervals).query(ray)


def teacher_patch(rays, scene: AnalyticScene, num_intervals=DEFAULT_INTERVALS):
    """Batched query for a 3x3 patch of rays sharing one camera.

    Returns (colors (3, 3, 3), list of 9 TeacherResponse row-major).
    """
    if len(rays) != 9:
        raise ValueError("a patch holds exactly 9 rays")
    origins = np.stack([r.origin for r in rays])
    dirs = np.stack([r.direction for r in rays])
    colors, bounds, weights, icolors = teacher_query_batch(origins, dirs, scene, num_intervals)
    responses = [
        TeacherResponse(
            color=colors[i],
            intervals=IntervalSet(boundaries=bounds[i], weights=np.minimum(weights[i], 1.0)),
            interval_colors=icolors[i],
        )
        for i in range(9)
    ]
    return colors.reshape(3, 3, 3), responses
