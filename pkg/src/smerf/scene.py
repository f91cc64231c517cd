"""Scene normalization, the contraction map, and camera-to-cell assignment.

The normalized scene lives in the cube [-K/2, K/2]^3, split into K^3 unit
cells. Each cell owns a submodel whose local frame maps the cell to
[-1, 1]^3; positions are pre-scaled and squashed by ``contract`` into
[-2, 2]^3 before any grid lookup.
"""

from __future__ import annotations

import dataclasses

import numpy as np

# Extent of contracted space along each axis.
SQUASH_MIN = -2.0
SQUASH_MAX = 2.0

# Pre-contraction scale: single-cell scenes zoom into the center, tiled
# scenes enlarge the Euclidean region to avoid shearing at cell borders.
PRESCALE_SINGLE = 2.5
PRESCALE_TILED = 0.8

Cell = tuple[int, int, int]


@dataclasses.dataclass(frozen=True)
class SceneLayout:
    """Normalization transform plus the set of camera-occupied cells."""

    grid_size: int
    scale: float
    center: tuple[float, float, float]
    contraction_prescale: float
    active_cells: tuple[Cell, ...]

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if self.contraction_prescale <= 0:
            raise ValueError("contraction_prescale must be positive")

    def world_to_normalized(self, x):
        return (np.asarray(x, dtype=np.float64) - np.asarray(self.center)) * self.scale

    def normalized_to_world(self, x):
        return np.asarray(x, dtype=np.float64) / self.scale + np.asarray(self.center)

    def cell_center(self, cell: Cell) -> np.ndarray:
        return np.asarray(cell, dtype=np.float64) - (self.grid_size - 1) / 2.0

    def cell_of_point(self, p) -> Cell:
        """Cell whose half-open box contains the normalized point (clamped)."""
        idx = np.floor(np.asarray(p, dtype=np.float64) + self.grid_size / 2.0)
        idx = np.clip(idx, 0, self.grid_size - 1).astype(int)
        return tuple(int(i) for i in idx)

    def to_dict(self) -> dict:
        return {
            "grid_size": self.grid_size,
            "scale": self.scale,
            "center": list(self.center),
            "contraction_prescale": self.contraction_prescale,
            "active_cells": [list(c) for c in self.active_cells],
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneLayout":
        return SceneLayout(
            grid_size=int(d["grid_size"]),
            scale=float(d["scale"]),
            center=tuple(float(v) for v in d["center"]),
            contraction_prescale=float(d["contraction_prescale"]),
            active_cells=tuple(tuple(int(v) for v in c) for c in d["active_cells"]),
        )


@dataclasses.dataclass
class Ray:
    """A ray in normalized scene units with a unit direction.

    ``exposure`` is the log-domain shift log(ISO * shutter / 1000) when
    exposure conditioning is enabled, else None.
    """

    origin: np.ndarray
    direction: np.ndarray
    exposure: float | None = None
    pixel_coord: tuple[int, int] | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        n = float(np.linalg.norm(self.direction))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit length, got norm {n}")


def default_prescale(grid_size: int) -> float:
    return PRESCALE_SINGLE if grid_size == 1 else PRESCALE_TILED


def normalize_cameras(origins, grid_size: int, contraction_prescale: float | None = None) -> SceneLayout:
    """Fit camera origins into [-K/2, K/2]^3 and mark occupied cells.

    The bounding box of the origins is centered at the origin and scaled so
    its longest side equals ``grid_size``; a degenerate box keeps scale 1.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    if origins.size == 0:
        raise ValueError("need at least one camera")
    if origins.shape[-1] != 3:
        raise ValueError("camera origins must be 3-vectors")
    lo = origins.min(axis=0)
    hi = origins.max(axis=0)
    extent = float((hi - lo).max())
    scale = grid_size / extent if extent > 0 else 1.0
    center = (lo + hi) / 2.0
    if contraction_prescale is None:
        contraction_prescale = default_prescale(grid_size)
    layout = SceneLayout(
        grid_size=grid_size,
        scale=scale,
        center=tuple(float(c) for c in center),
        contraction_prescale=contraction_prescale,
        active_cells=(),
    )
    cells = sorted({layout.cell_of_point(layout.world_to_normalized(o)) for o in origins})
    return dataclasses.replace(layout, active_cells=tuple(cells))


def contract(x):
    """Squash unbounded positions into [-2, 2]^3.

    Identity on the unit infinity-ball; outside it, the largest-magnitude
    coordinate maps to (2 - 1/|x_d|) sign(x_d) and the remaining
    coordinates divide by the infinity norm.
    """
    x = np.asarray(x, dtype=np.float64)
    absx = np.abs(x)
    n = absx.max(axis=-1, keepdims=True)
    outside = n > 1.0
    is_max = absx >= n  # holds for every coordinate attaining the max
    proj = x / np.where(n == 0, 1.0, n)
    edge = (2.0 - 1.0 / np.maximum(absx, 1e-12)) * np.sign(x)
    return np.where(outside, np.where(is_max, edge, proj), x)


def contract_direction_scale(z, dvec):
    """Norm of the contraction Jacobian applied to ``dvec`` at points ``z``.

    Used by the baked-mode marcher to convert a contracted-space step into
    a step along the (straight) un-contracted ray.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    d = np.broadcast_to(np.asarray(dvec, dtype=np.float64), z.shape)
    absz = np.abs(z)
    n = absz.max(axis=-1)
    a = absz.argmax(axis=-1)
    rows = np.arange(z.shape[0])
    za = z[rows, a]
    ua = d[rows, a]
    inside = n <= 1.0

    safe_n = np.where(n == 0, 1.0, n)
    jd = d / safe_n[:, None] - z * (np.sign(za) * ua / safe_n**2)[:, None]
    jd[rows, a] = ua / safe_n**2
    jd = np.where(inside[:, None], d, jd)
    return np.linalg.norm(jd, axis=-1)


def cell_distance(origin, cell: Cell, layout: SceneLayout) -> float:
    """Chebyshev distance from a normalized point to a cell's box (0 inside)."""
    o = np.asarray(origin, dtype=np.float64)
    lo = np.asarray(cell, dtype=np.float64) - layout.grid_size / 2.0
    hi = lo + 1.0
    gap = np.maximum(np.maximum(lo - o, o - hi), 0.0)
    return float(gap.max())


def assign_submodel(origin, layout: SceneLayout) -> Cell:
    """Nearest active cell under Chebyshev distance, ties to lowest index."""
    if not layout.active_cells:
        raise ValueError("layout has no active cells")
    best: Cell | None = None
    best_d = np.inf
    for cell in layout.active_cells:  # lex sorted, so first win breaks ties
        d = cell_distance(origin, cell, layout)
        if d < best_d:
            best, best_d = cell, d
    assert best is not None
    return best


def world_to_submodel(x, cell: Cell, layout: SceneLayout):
    """Map normalized coordinates into a cell's [-1, 1]^3 local frame."""
    if cell not in layout.active_cells:
        raise ValueError(f"submodel {cell} is not active")
    return 2.0 * (np.asarray(x, dtype=np.float64) - layout.cell_center(cell))


def submodel_to_world(x_local, cell: Cell, layout: SceneLayout):
    return np.asarray(x_local, dtype=np.float64) / 2.0 + layout.cell_center(cell)


def neighbor_cells(origin, layout: SceneLayout, max_center_dist: float = 2.0) -> list[Cell]:
    """Active cells whose centers lie within ``max_center_dist`` of a point."""
    o = np.asarray(origin, dtype=np.float64)
    out = []
    for cell in layout.active_cells:
        if float(np.linalg.norm(layout.cell_center(cell) - o)) <= max_center_dist:
            out.append(cell)
    return out
