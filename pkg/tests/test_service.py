import gzip
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from smerf.service import create_app


@pytest.fixture()
def client(baked_scene_root):
    return TestClient(create_app(str(baked_scene_root)))


class TestAssets:
    def test_scene_json(self, client):
        r = client.get("/scene.json")
        assert r.status_code == 200
        scene = r.json()
        assert scene["submodels"] == ["0_0_0"]
        assert "ETag" in r.headers
        assert r.headers["Accept-Ranges"] == "bytes"

    def test_manifest(self, client):
        r = client.get("/submodels/0_0_0/manifest.json")
        assert r.status_code == 200
        assert r.json()["plane_resolution"] == 16

    def test_missing_asset_404(self, client):
        assert client.get("/submodels/9_9_9/manifest.json").status_code == 404
        assert client.get("/submodels/0_0_0/nothing.bin.gz").status_code == 404

    def test_gzip_passthrough_decodes(self, client, baked_scene_root):
        r = client.get("/submodels/0_0_0/distance.bin.gz")
        assert r.status_code == 200
        manifest = json.loads((baked_scene_root / "submodels/0_0_0/manifest.json").read_text())
        # the test client transparently gunzips Content-Encoding: gzip
        assert len(r.content) == manifest["files"]["distance.bin.gz"]["bytes"]
        stored = (baked_scene_root / "submodels/0_0_0/distance.bin.gz").read_bytes()
        assert r.content == gzip.decompress(stored)

    def test_etag_stable_and_304(self, client):
        a = client.get("/submodels/0_0_0/distance.bin.gz")
        b = client.get("/submodels/0_0_0/distance.bin.gz")
        assert a.headers["etag"] == b.headers["etag"]
        c = client.get("/submodels/0_0_0/distance.bin.gz",
                       headers={"If-None-Match": a.headers["etag"]})
        assert c.status_code == 304

    def test_range_request(self, client, baked_scene_root):
        stored = (baked_scene_root / "submodels/0_0_0/plane_x.bin.gz").read_bytes()
        r = client.get("/submodels/0_0_0/plane_x.bin.gz",
                       headers={"Range": "bytes=10-49"})
        assert r.status_code == 206
        assert r.content == stored[10:50]
        assert r.headers["Content-Range"] == f"bytes 10-49/{len(stored)}"
        assert "content-encoding" not in {k.lower() for k in r.headers}

    def test_suffix_range(self, client, baked_scene_root):
        stored = (baked_scene_root / "submodels/0_0_0/plane_x.bin.gz").read_bytes()
        r = client.get("/submodels/0_0_0/plane_x.bin.gz",
                       headers={"Range": "bytes=-16"})
        assert r.status_code == 206
        assert r.content == stored[-16:]

    def test_bad_range_416(self, client):
        r = client.get("/submodels/0_0_0/plane_x.bin.gz",
                       headers={"Range": "bytes=999999999-"})
        assert r.status_code == 416
        assert r.headers["Content-Range"].startswith("bytes */")

    def test_cors_headers(self, client):
        r = client.get("/scene.json", headers={"Origin": "http://localhost:5173"})
        assert r.headers["access-control-allow-origin"] == "*"


class TestApi:
    def test_health(self, client):
        r = client.get("/api/health")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"
        assert body["submodels"] == 1

    def test_scene_info(self, client):
        r = client.get("/api/scene")
        assert r.status_code == 200
        body = r.json()
        assert body["grid_size"] == 1
        assert body["active_submodels"] == [[0, 0, 0]]

    def test_render_png(self, client, baked_scene_root):
        req = {
            "position": [0.0, 0.0, -0.45], "look_at": [0.0, 0.0, 1.0],
            "up": [0.0, 1.0, 0.0], "vfov_deg": 45.0, "width": 16, "height": 16,
        }
        r = client.post("/api/render", json=req)
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.headers["x-submodel"] == "0_0_0"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

        # matches an identical local render through the loaded bundle
        from smerf.baking import load_bundle
        from smerf.cameras import PinholeCamera
        from smerf.images import png_bytes
        from smerf.rendering import BakedRenderScene, render_image
        from smerf.scene import SceneLayout

        bundle = load_bundle(str(baked_scene_root / "submodels/0_0_0"))
        layout = SceneLayout.from_dict(bundle.manifest["layout"])
        cam = PinholeCamera(position=req["position"], look_at=req["look_at"],
                            up=req["up"], vfov_deg=45.0, width=16, height=16)
        img = render_image(cam, BakedRenderScene(layout=layout, assets={(0, 0, 0): bundle.assets}))
        assert r.content == png_bytes(img)

    def test_render_size_limit(self, client):
        req = {"position": [0, 0, 0], "look_at": [0, 0, 1], "width": 4096, "height": 4096}
        assert client.post("/api/render", json=req).status_code == 422

    def test_render_validation(self, client):
        assert client.post("/api/render", json={"position": [0, 0]}).status_code == 422
