"""HTTP asset service and render API over a baked scene root.

Assets are served verbatim from disk with strong ETags and single-range
support. Stored *.gz blobs are passed through with Content-Encoding: gzip
on full responses so browsers decode transparently; range responses carry
the raw stored bytes without the encoding header (a partial gzip stream is
not decodable anyway).
"""

from __future__ import annotations

import hashlib
import os

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import __version__
from .baking import load_bundle, load_scene_index
from .cameras import PinholeCamera
from .images import png_bytes
from .rendering import BakedRenderScene, render_image
from .scene import SceneLayout, assign_submodel

MAX_RENDER_PIXELS = 512 * 512


class HealthResponse(BaseModel):
    status: str
    version: str
    scene_root: str
    submodels: int


class SceneInfoResponse(BaseModel):
    grid_size: int
    active_submodels: list[list[int]]
    feature_gating: bool
    exposure: bool
    format_version: int


class RenderRequest(BaseModel):
    position: list[float] = Field(min_length=3, max_length=3)
    look_at: list[float] = Field(min_length=3, max_length=3)
    up: list[float] = Field(default=[0.0, 0.0, 1.0], min_length=3, max_length=3)
    vfov_deg: float = Field(default=55.0, gt=0, lt=180)
    width: int = Field(default=128, ge=1)
    height: int = Field(default=128, ge=1)
    exposure: float | None = None
    use_skip: bool = True


class _AssetStore:
    """Scene root with cached etags and lazily loaded bundles."""

    def __init__(self, root):
        self.root = os.path.abspath(root)
        self._etags = {}
        self._bundles = {}
        self.scene = load_scene_index(self.root)
        self.layout = SceneLayout.from_dict(self.scene["layout"])

    def resolve(self, *parts) -> str:
        path = os.path.abspath(os.path.join(self.root, *parts))
        if not path.startswith(self.root + os.sep) and path != self.root:
            raise HTTPException(404, "unknown asset")
        if not os.path.isfile(path):
            raise HTTPException(404, "unknown asset")
        return path

    def etag(self, path) -> str:
        st = os.stat(path)
        key = (path, st.st_mtime_ns, st.st_size)
        if key not in self._etags:
            with open(path, "rb") as f:
                self._etags[key] = '"' + hashlib.sha256(f.read()).hexdigest()[:32] + '"'
        return self._etags[key]

    def bundle_for(self, cell):
        if cell not in self._bundles:
            name = "_".join(str(c) for c in cell)
            self._bundles[cell] = load_bundle(
                os.path.join(self.root, "submodels", name)
            ).assets
        return self._bundles[cell]


def _parse_range(header: str, size: int):
    """Single-range parser; returns (start, end_inclusive) or raises 416."""
    unsat = HTTPException(416, "unsatisfiable range",
                          headers={"Content-Range": f"bytes */{size}"})
    if not header.startswith("bytes="):
        raise unsat
    spec = header[len("bytes="):]
    if "," in spec or "-" not in spec:
        raise unsat
    start_s, end_s = spec.split("-", 1)
    try:
        if start_s == "":
            n = int(end_s)
            if n <= 0:
                raise unsat
            return max(size - n, 0), size - 1
        start = int(start_s)
        end = int(end_s) if end_s else size - 1
    except ValueError:
        raise unsat from None
    if start >= size or end < start:
        raise unsat
    return start, min(end, size - 1)


def _asset_response(store: _AssetStore, request: Request, path: str) -> Response:
    with open(path, "rb") as f:
        blob = f.read()
    etag = store.etag(path)
    media = "application/json" if path.endswith(".json") else "application/octet-stream"
    headers = {"ETag": etag, "Accept-Ranges": "bytes"}
    if request.headers.get("if-none-match") == etag:
        return Response(status_code=304, headers=headers)

    range_header = request.headers.get("range")
    if range_header:
        start, end = _parse_range(range_header, len(blob))
        headers["Content-Range"] = f"bytes {start}-{end}/{len(blob)}"
        return Response(
            content=blob[start:end + 1], status_code=206, media_type=media, headers=headers
        )
    if path.endswith(".gz"):
        headers["Content-Encoding"] = "gzip"
    return Response(content=blob, media_type=media, headers=headers)


def create_app(root_dir: str) -> FastAPI:
    store = _AssetStore(root_dir)
    app = FastAPI(title="smerf asset service", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["GET", "POST"],
        allow_headers=["*"], expose_headers=["ETag", "Content-Range", "Accept-Ranges"],
    )
    app.state.store = store

    @app.get("/scene.json")
    def scene_json(request: Request):
        return _asset_response(store, request, store.resolve("scene.json"))

    @app.get("/submodels/{sid}/manifest.json")
    def manifest(request: Request, sid: str):
        return _asset_response(store, request, store.resolve("submodels", sid, "manifest.json"))

    @app.get("/submodels/{sid}/{asset}")
    def submodel_asset(request: Request, sid: str, asset: str):
        return _asset_response(store, request, store.resolve("submodels", sid, asset))

    @app.get("/api/health", response_model=HealthResponse)
    def health():
        return HealthResponse(
            status="ok", version=__version__, scene_root=store.root,
            submodels=len(store.scene["submodels"]),
        )

    @app.get("/api/scene", response_model=SceneInfoResponse)
    def scene_info():
        return SceneInfoResponse(
            grid_size=store.layout.grid_size,
            active_submodels=[list(c) for c in store.layout.active_cells],
            feature_gating=store.scene["feature_gating"],
            exposure=store.scene["exposure"],
            format_version=store.scene["format_version"],
        )

    @app.post("/api/render")
    def render(req: RenderRequest):
        if req.width * req.height > MAX_RENDER_PIXELS:
            raise HTTPException(422, f"at most {MAX_RENDER_PIXELS} pixels per render")
        cam = PinholeCamera(
            position=np.array(req.position), look_at=np.array(req.look_at),
            up=np.array(req.up), vfov_deg=req.vfov_deg,
            width=req.width, height=req.height, exposure=req.exposure,
        )
        cell = assign_submodel(cam.position, store.layout)
        scene = BakedRenderScene(layout=store.layout,
                                 assets={cell: store.bundle_for(cell)})
        img = render_image(cam, scene, use_skip=req.use_skip)
        return Response(
            content=png_bytes(img), media_type="image/png",
            headers={"X-Submodel": "_".join(str(c) for c in cell)},
        )

    return app


def serve(root_dir: str, port: int, host: str = "127.0.0.1"):
    """Run the asset service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(root_dir), host=host, port=port, log_level="warning")
