"""Baking: trained submodels to quantized, streamable asset bundles.

Pipeline per submodel: march subsampled, jittered training rays through the
float field to mark occupied voxels, clean the grid with a 3x3x3 median
filter, max-downsample to the voxel-grid resolution, derive an exact
Chebyshev distance grid, quantize the feature grids to bytes, and write
gzip-compressed blobs plus a JSON manifest.
"""

from __future__ import annotations

import dataclasses
import gzip
import hashlib
import json
import logging
import os

import numpy as np

from .appearance import HIDDEN, MlpLattice, OUT, PARAM_NAMES
from .field import CHANNELS
from .rendering import RenderAssets
from .scene import SceneLayout, contract, contract_direction_scale

log = logging.getLogger("smerf.baking")

FORMAT_MAGIC = "smerf-bundle"
FORMAT_VERSION = 1
EMPTY_SLOT = 0xFFFFFFFF

QUANT_LO = -7.0
QUANT_HI = 7.0

OCCUPANCY_ALPHA_THRESHOLD = 0.005
OCCUPANCY_WEIGHT_THRESHOLD = 5e-3
OCCUPANCY_CAMERA_RADIUS = 1.5
OCCUPANCY_SUBSAMPLE = 2

PLANE_FILES = ("plane_x.bin.gz", "plane_y.bin.gz", "plane_z.bin.gz")


@dataclasses.dataclass
class OccupancyGrid:
    values: np.ndarray  # bool
    resolution: int

    def __post_init__(self):
        if self.values.shape != (self.resolution,) * 3:
            raise ValueError(f"bad occupancy shape {self.values.shape}")


@dataclasses.dataclass
class DistanceGrid:
    values: np.ndarray  # uint8; 0 iff occupied
    resolution: int


@dataclasses.dataclass
class BakedBundle:
    manifest: dict
    assets: RenderAssets


# ---------------------------------------------------------------------------
# occupancy extraction


def extract_occupancy(submodel, layout: SceneLayout, cell, cameras, resolution,
                      rng, gated=True, jitter_sigma=None, jitter_eps=0.03,
                      subsample=OCCUPANCY_SUBSAMPLE,
                      alpha_threshold=OCCUPANCY_ALPHA_THRESHOLD,
                      weight_threshold=OCCUPANCY_WEIGHT_THRESHOLD,
                      max_steps=None) -> OccupancyGrid:
    """March training rays through the float field and mark solid voxels.

    Only cameras within 1.5 normalized units of the cell center are used
    (all of them, with a warning, if none qualify); rays are subsampled by
    ``subsample`` per axis and independently jittered. A voxel is occupied
    iff some sample in it has alpha > alpha_threshold and compositing
    weight > weight_threshold.
    """
    from . import field as field_mod

    center = layout.cell_center(cell)
    near = [c for c in cameras
            if np.linalg.norm(np.asarray(c.position, float) - center) <= OCCUPANCY_CAMERA_RADIUS]
    if not near:
        log.warning("no cameras within %.1f units of cell %s; using all %d",
                    OCCUPANCY_CAMERA_RADIUS, cell, len(cameras))
        near = list(cameras)

    if jitter_sigma is None:
        jitter_sigma = 0.03 * layout.grid_size
    r = resolution
    h_step = 4.0 / r
    rho = layout.contraction_prescale
    if max_steps is None:
        max_steps = 4 * r
    occ = np.zeros((r, r, r), dtype=bool)
    tp, vg = submodel.triplanes, submodel.grid

    for cam in near:
        dirs = cam.ray_directions()[::subsample, ::subsample].reshape(-1, 3)
        n = dirs.shape[0]
        origins = np.broadcast_to(cam.position, (n, 3)).copy()
        origins += rng.normal(scale=jitter_sigma, size=origins.shape)
        if jitter_eps > 0:
            # uniform draw from the chordal cap around each direction
            cos_min = 1.0 - jitter_eps**2 / 2.0
            cos_t = rng.uniform(cos_min, 1.0, size=n)
            sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
            phi = rng.uniform(0.0, 2 * np.pi, size=n)
            a = np.where(np.abs(dirs[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
            u = np.cross(dirs, a)
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            w = np.cross(dirs, u)
            dirs = (cos_t[:, None] * dirs
                    + sin_t[:, None] * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * w))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

        o_local = 2.0 * (origins - center)
        t = np.zeros(n)
        trans = np.ones(n)
        active = np.ones(n, dtype=bool)
        for _ in range(max_steps):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            z = rho * (o_local[idx] + t[idx, None] * dirs[idx])
            y = contract(z)
            dt = h_step / np.maximum(contract_direction_scale(z, rho * dirs[idx]), 1e-9)
            sigma, _, _, _ = field_mod.field_forward(tp, vg, y, gated=gated)
            alpha = -np.expm1(-sigma * dt)
            weight = trans[idx] * alpha
            hit = (alpha > alpha_threshold) & (weight > weight_threshold)
            if hit.any():
                vox = np.clip(((y[hit] + 2.0) / h_step).astype(np.int64), 0, r - 1)
                occ[vox[:, 0], vox[:, 1], vox[:, 2]] = True
            trans[idx] *= np.exp(-sigma * dt)
            t[idx] += dt
            active[idx] = trans[idx] > 1e-4
    return OccupancyGrid(values=occ, resolution=r)


# ---------------------------------------------------------------------------
# grid filters


def median_filter_27(grid: OccupancyGrid) -> OccupancyGrid:
    """Majority vote over each voxel's 3x3x3 neighborhood.

    Boundary neighborhoods are clipped; a voxel becomes occupied iff
    strictly more than half of its available neighbors are occupied.
    """
    occ = grid.values
    counts = np.zeros(occ.shape, dtype=np.int32)
    avail = np.zeros(occ.shape, dtype=np.int32)
    ones = np.ones(occ.shape, dtype=np.int32)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                src = _shifted(occ.astype(np.int32), dx, dy, dz)
                counts += src
                avail += _shifted(ones, dx, dy, dz)
    return OccupancyGrid(values=2 * counts > avail, resolution=grid.resolution)


def _shifted(a, dx, dy, dz):
    """a shifted by (dx, dy, dz) with zero fill (also used for availability)."""
    out = np.zeros_like(a)
    src = [slice(max(-d, 0), a.shape[i] - max(d, 0)) for i, d in enumerate((dx, dy, dz))]
    dst = [slice(max(d, 0), a.shape[i] - max(-d, 0)) for i, d in enumerate((dx, dy, dz))]
    out[tuple(dst)] = a[tuple(src)]
    return out


def downsample_max(grid: OccupancyGrid, target: int) -> OccupancyGrid:
    if grid.resolution % target:
        raise ValueError(f"{target} does not divide {grid.resolution}")
    f = grid.resolution // target
    v = grid.values.reshape(target, f, target, f, target, f)
    return OccupancyGrid(values=v.any(axis=(1, 3, 5)), resolution=target)


def build_distance_grid(occ: OccupancyGrid) -> DistanceGrid:
    """Exact Chebyshev distance to the nearest occupied voxel, clamped to 255.

    Separable min-max sweep: d = min_u max(|dx|, |dy|, |dz|) nests as
    1-D passes because min_u max(c, f(u)) = max(c, min_u f(u)). The middle
    passes are O(L^4) vectorized, fine for the desk-scale resolutions.
    """
    l = occ.resolution
    big = np.int32(min(255, l))
    g = np.where(occ.values, 0, big).astype(np.int32)

    # pass 1: 1-D distance along x
    for i in range(1, l):
        g[i] = np.minimum(g[i], g[i - 1] + 1)
    for i in range(l - 2, -1, -1):
        g[i] = np.minimum(g[i], g[i + 1] + 1)

    # passes 2 and 3: min over source index of max(|t - s|, g[s])
    for axis in (1, 2):
        moved = np.moveaxis(g, axis, 0)
        out = np.full_like(moved, big)
        for s in range(l):
            offs = np.abs(np.arange(l) - s).astype(np.int32)
            cand = np.maximum(offs[:, None, None], moved[s][None])
            np.minimum(out, cand, out=out)
        g = np.moveaxis(out, 0, axis)

    return DistanceGrid(values=np.minimum(g, 255).astype(np.uint8), resolution=l)


# ---------------------------------------------------------------------------
# quantization


def quantize(values, lo=QUANT_LO, hi=QUANT_HI):
    """Affine map of preactivations clamped to [lo, hi] onto bytes.

    Rounding is half-away-from-zero so the midpoint of a symmetric range
    lands on the upper byte.
    """
    x = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    q = np.floor((x - lo) / (hi - lo) * 255.0 + 0.5)
    return q.astype(np.uint8)


def dequantize(q, lo=QUANT_LO, hi=QUANT_HI):
    return q.astype(np.float64) / 255.0 * (hi - lo) + lo


# ---------------------------------------------------------------------------
# bundle serialization


def _gz_write(path, raw: bytes):
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(gzip.compress(raw, 6))
    os.replace(tmp, path)


def _gz_read(path) -> bytes:
    import zlib

    with open(path, "rb") as f:
        try:
            return gzip.decompress(f.read())
        except (gzip.BadGzipFile, zlib.error, EOFError) as e:
            raise ValueError(f"{path}: corrupt payload ({e})") from e


def _sha(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def cell_id(cell) -> str:
    return "_".join(str(int(c)) for c in cell)


def atlas_from_grid(grid_u8, occupancy, block_size):
    """Block-sparse atlas: keep only blocks containing occupied voxels.

    Returns (atlas (nslots, bs, bs, bs, C), indirection (nb, nb, nb) u32).
    """
    l = grid_u8.shape[0]
    bs = block_size
    nb = l // bs
    occ_blocks = occupancy.reshape(nb, bs, nb, bs, nb, bs).any(axis=(1, 3, 5))
    indirection = np.full((nb, nb, nb), EMPTY_SLOT, dtype=np.uint32)
    slots = []
    for bi, bj, bk in np.argwhere(occ_blocks):
        indirection[bi, bj, bk] = len(slots)
        slots.append(
            grid_u8[bi * bs:(bi + 1) * bs, bj * bs:(bj + 1) * bs, bk * bs:(bk + 1) * bs]
        )
    atlas = (np.stack(slots) if slots
             else np.zeros((0, bs, bs, bs, grid_u8.shape[-1]), dtype=grid_u8.dtype))
    return atlas, indirection


def grid_from_atlas(atlas, indirection, l, block_size, channels=CHANNELS):
    """Dense grid with empty blocks zero-filled."""
    bs = block_size
    nb = l // bs
    out = np.zeros((l, l, l, channels), dtype=atlas.dtype)
    for bi in range(nb):
        for bj in range(nb):
            for bk in range(nb):
                slot = indirection[bi, bj, bk]
                if slot != EMPTY_SLOT:
                    out[bi * bs:(bi + 1) * bs, bj * bs:(bj + 1) * bs,
                        bk * bs:(bk + 1) * bs] = atlas[slot]
    return out


def serialize_lattice(lattice: MlpLattice) -> bytes:
    """Vertex-major, layer-major little-endian float32."""
    chunks = []
    for v in range(lattice.size**3):
        for name in PARAM_NAMES:
            chunks.append(getattr(lattice, name)[v].astype("<f4").tobytes())
    return b"".join(chunks)


def deserialize_lattice(raw: bytes, size: int, input_dim: int) -> MlpLattice:
    shapes = {
        "w1": (input_dim, HIDDEN), "b1": (HIDDEN,),
        "w2": (HIDDEN, HIDDEN), "b2": (HIDDEN,),
        "w3": (HIDDEN, OUT), "b3": (OUT,),
    }
    n = size**3
    arrays = {k: np.empty((n,) + s) for k, s in shapes.items()}
    off = 0
    for v in range(n):
        for name in PARAM_NAMES:
            count = int(np.prod(shapes[name]))
            arrays[name][v] = np.frombuffer(
                raw, dtype="<f4", count=count, offset=off
            ).reshape(shapes[name])
            off += 4 * count
    if off != len(raw):
        raise ValueError(f"lattice payload size mismatch: {off} != {len(raw)}")
    return MlpLattice(size=size, **arrays)


@dataclasses.dataclass
class BakeOptions:
    occupancy_resolution: int | None = None  # defaults to plane resolution
    quantize: bool = True
    seed: int = 0


def bake_submodel(model, cell, cameras, out_dir, options: BakeOptions | None = None) -> dict:
    """Bake one submodel into ``out_dir`` and return its manifest."""
    options = options or BakeOptions()
    layout = model.layout
    sm = model.submodels[cell]
    r = sm.triplanes.resolution
    l = sm.grid.resolution
    occ_res = options.occupancy_resolution or r
    rng = np.random.default_rng(options.seed)

    occ = extract_occupancy(sm, layout, cell, cameras, occ_res, rng, gated=model.gated)
    occ = median_filter_27(occ)
    occ_l = downsample_max(occ, l)
    distance = build_distance_grid(occ_l)

    block_size = min(16, l)
    if options.quantize:
        planes_q = [quantize(p) for p in sm.triplanes.planes]
        grid_q = quantize(sm.grid.values)
    else:
        planes_q = [p.astype("<f4") for p in sm.triplanes.planes]
        grid_q = sm.grid.values.astype("<f4")
    atlas, indirection = atlas_from_grid(grid_q, occ_l.values, block_size)

    os.makedirs(out_dir, exist_ok=True)
    files = {}

    def put(name, raw):
        _gz_write(os.path.join(out_dir, name), raw)
        files[name] = {"bytes": len(raw), "sha256": _sha(raw)}

    for name, plane in zip(PLANE_FILES, planes_q):
        put(name, plane.tobytes())
    put("grid_atlas.bin.gz", atlas.tobytes())
    put("grid_indirection.bin.gz", indirection.astype("<u4").tobytes())
    put("distance.bin.gz", distance.values.tobytes())
    put("mlp_lattice.bin.gz", serialize_lattice(sm.lattice))

    manifest = {
        "magic": FORMAT_MAGIC,
        "format_version": FORMAT_VERSION,
        "cell": list(cell),
        "grid_size": layout.grid_size,
        "layout": layout.to_dict(),
        "plane_resolution": r,
        "grid_resolution": l,
        "occupancy_resolution": occ_res,
        "block_size": block_size,
        "lattice_size": sm.lattice.size,
        "mlp_input_dim": sm.lattice.input_dim,
        "mlp_hidden": HIDDEN,
        "feature_gating": model.gated,
        "exposure": model.exposure,
        "quantized": options.quantize,
        "quantization": {
            "lo": [QUANT_LO] * CHANNELS,
            "hi": [QUANT_HI] * CHANNELS,
        },
        "files": files,
    }
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))
    return manifest


def bake_scene(model, cameras, out_dir, options: BakeOptions | None = None) -> dict:
    """Bake every active submodel plus the scene index file."""
    os.makedirs(out_dir, exist_ok=True)
    cells = []
    for cell in model.layout.active_cells:
        sub_dir = os.path.join(out_dir, "submodels", cell_id(cell))
        bake_submodel(model, cell, cameras, sub_dir, options)
        cells.append(cell_id(cell))
    scene = {
        "magic": FORMAT_MAGIC,
        "format_version": FORMAT_VERSION,
        "layout": model.layout.to_dict(),
        "feature_gating": model.gated,
        "exposure": model.exposure,
        "submodels": cells,
    }
    tmp = os.path.join(out_dir, "scene.json.tmp")
    with open(tmp, "w") as f:
        json.dump(scene, f, indent=1, sort_keys=True)
    os.replace(tmp, os.path.join(out_dir, "scene.json"))
    return scene


def load_bundle(bundle_dir) -> BakedBundle:
    """Load and validate a baked submodel directory."""
    with open(os.path.join(bundle_dir, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("magic") != FORMAT_MAGIC:
        raise ValueError(f"not a bundle: bad magic {manifest.get('magic')!r}")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported bundle version {manifest.get('format_version')}")

    def get(name):
        raw = _gz_read(os.path.join(bundle_dir, name))
        meta = manifest["files"][name]
        if len(raw) != meta["bytes"]:
            raise ValueError(f"{name}: truncated payload ({len(raw)} != {meta['bytes']})")
        if _sha(raw) != meta["sha256"]:
            raise ValueError(f"{name}: checksum mismatch")
        return raw

    r = manifest["plane_resolution"]
    l = manifest["grid_resolution"]
    bs = manifest["block_size"]
    quantized = manifest["quantized"]
    lo = manifest["quantization"]["lo"][0]
    hi = manifest["quantization"]["hi"][0]

    def decode_grid(raw, shape):
        if quantized:
            q = np.frombuffer(raw, dtype=np.uint8).reshape(shape)
            return dequantize(q, lo, hi)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)

    planes = [decode_grid(get(n), (r, r, CHANNELS)) for n in PLANE_FILES]
    indirection = np.frombuffer(get("grid_indirection.bin.gz"), dtype="<u4")
    nb = l // bs
    indirection = indirection.reshape(nb, nb, nb)
    atlas_raw = get("grid_atlas.bin.gz")
    nslots = int((indirection != EMPTY_SLOT).sum())
    if quantized:
        atlas = np.frombuffer(atlas_raw, dtype=np.uint8)
    else:
        atlas = np.frombuffer(atlas_raw, dtype="<f4")
    atlas = atlas.reshape(nslots, bs, bs, bs, CHANNELS)
    dense = grid_from_atlas(atlas, indirection, l, bs)
    grid = dequantize(dense, lo, hi) if quantized else dense.astype(np.float64)
    # zero out empty blocks exactly (dequantized zero-bytes are lo, not 0)
    if quantized:
        for bi in range(nb):
            for bj in range(nb):
                for bk in range(nb):
                    if indirection[bi, bj, bk] == EMPTY_SLOT:
                        grid[bi * bs:(bi + 1) * bs, bj * bs:(bj + 1) * bs,
                             bk * bs:(bk + 1) * bs] = 0.0

    distance = np.frombuffer(get("distance.bin.gz"), dtype=np.uint8).reshape(l, l, l)
    lattice = deserialize_lattice(
        get("mlp_lattice.bin.gz"), manifest["lattice_size"], manifest["mlp_input_dim"]
    )
    assets = RenderAssets(
        planes=planes, grid=grid, distance=distance.copy(), lattice=lattice,
        plane_resolution=r, grid_resolution=l,
        prescale=manifest["layout"]["contraction_prescale"],
        gated=manifest["feature_gating"], exposure=manifest["exposure"],
    )
    return BakedBundle(manifest=manifest, assets=assets)


def load_scene_index(root) -> dict:
    with open(os.path.join(root, "scene.json")) as f:
        scene = json.load(f)
    if scene.get("magic") != FORMAT_MAGIC:
        raise ValueError("not a baked scene root")
    return scene
