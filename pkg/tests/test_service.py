import numpy as np
import pytest
from fastapi.testclient import TestClient

from udfcloth.encoder import build_library
from udfcloth.service import ServiceConfig, ServiceRuntime, create_app
from udfcloth.sketch import build_pair_dataset, sketch_to_png_bytes


@pytest.fixture(scope="module")
def runtime(toy_training, meshes, tmp_path_factory):
    out = tmp_path_factory.mktemp("svc_pairs")
    entries = build_pair_dataset(list(meshes.values()), n_views=4, out_dir=out)
    library = build_library(entries, toy_training.latents, out)
    cfg = ServiceConfig(mesh_resolution=48, generate_steps=10, edit_steps=25)
    return ServiceRuntime(toy_training.decoder, toy_training.latents, library, cfg)


@pytest.fixture(scope="module")
def client(runtime):
    return TestClient(create_app(runtime))


@pytest.fixture(scope="module")
def library_sketch_png(gt_sketches):
    return sketch_to_png_bytes(gt_sketches["skirt"])


def _generate(client, png):
    resp = client.post("/api/generate", content=png, headers={"content-type": "image/png"})
    assert resp.status_code == 200, resp.text
    return resp.json()


class TestGenerate:
    def test_happy_path(self, client, library_sketch_png):
        out = _generate(client, library_sketch_png)
        assert set(out) >= {"session_id", "mesh_url", "chamfer_score"}
        mesh = client.get(out["mesh_url"])
        assert mesh.status_code == 200
        assert mesh.text.startswith(("o ", "v "))

    def test_blank_sketch_422(self, client):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.new("L", (128, 128), 255).save(buf, format="PNG")
        resp = client.post("/api/generate", content=buf.getvalue())
        assert resp.status_code == 422
        assert resp.json()["code"] == "empty_sketch"

    def test_garbage_body_422(self, client):
        resp = client.post("/api/generate", content=b"not a png")
        assert resp.status_code == 422

    def test_deterministic_mesh_bytes(self, client, library_sketch_png):
        a = _generate(client, library_sketch_png)
        b = _generate(client, library_sketch_png)
        mesh_a = client.get(a["mesh_url"]).content
        mesh_b = client.get(b["mesh_url"]).content
        assert a["session_id"] != b["session_id"]
        assert mesh_a == mesh_b

    def test_503_without_checkpoint(self):
        empty = ServiceRuntime(None, None, None, ServiceConfig())
        c = TestClient(create_app(empty))
        resp = c.post("/api/generate", content=b"anything")
        assert resp.status_code == 503
        assert resp.json()["code"] == "checkpoint_missing"

    def test_retrieval_end_to_end(self, client, runtime, gt_sketches, meshes):
        """A library sketch must generate the matching shape: its chamfer to that
        shape's ground truth beats the chamfer to every other shape."""
        from udfcloth.mesh import TriMesh
        from udfcloth.metrics import chamfer_3d, surface_cloud

        out = _generate(client, sketch_to_png_bytes(gt_sketches["sphere"]))
        text = client.get(out["mesh_url"]).text
        verts, tris = [], []
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                tris.append([int(x) - 1 for x in parts[1:4]])
        rec = TriMesh(np.array(verts), np.array(tris))
        cloud = surface_cloud(rec, 3000, seed=1)
        cds = {n: chamfer_3d(cloud, surface_cloud(m, 3000, seed=2)) for n, m in meshes.items()}
        assert min(cds, key=cds.get) == "sphere"


class TestSessionLoop:
    def test_capture_edit_fixed_point(self, client, library_sketch_png):
        out = _generate(client, library_sketch_png)
        sid = out["session_id"]
        cap = client.post(f"/api/session/{sid}/capture", json={"azimuth": 0.0, "elevation": 0.0})
        assert cap.status_code == 200
        assert cap.headers["content-type"] == "image/png"
        pre = client.get(out["mesh_url"]).content
        edit = client.post(f"/api/session/{sid}/edit", content=cap.content)
        assert edit.status_code == 200
        body = edit.json()
        assert body["chamfer_after"] <= body["chamfer_before"] * (1 + 1e-9)
        post = client.get(out["mesh_url"]).content
        assert pre == post  # sub-pixel fit: the latent must not move

    def test_capture_views_differ(self, client, gt_sketches):
        out = _generate(client, sketch_to_png_bytes(gt_sketches["drape"]))
        sid = out["session_id"]
        a = client.post(f"/api/session/{sid}/capture", json={"azimuth": 0.0, "elevation": 0.0})
        b = client.post(f"/api/session/{sid}/capture", json={"azimuth": 180.0, "elevation": 0.0})
        assert a.content != b.content

    def test_edit_converges_cross_shape(self, client, library_sketch_png, gt_sketches):
        out = _generate(client, library_sketch_png)  # skirt
        sid = out["session_id"]
        edit = client.post(f"/api/session/{sid}/edit", content=sketch_to_png_bytes(gt_sketches["sphere"]))
        body = edit.json()
        assert body["chamfer_after"] <= 0.5 * body["chamfer_before"]
        assert not body["diverged"]

    def test_reset_restores_initial_exactly(self, client, library_sketch_png, gt_sketches):
        out = _generate(client, library_sketch_png)
        sid = out["session_id"]
        before = client.get(out["mesh_url"]).content
        client.post(f"/api/session/{sid}/edit", content=sketch_to_png_bytes(gt_sketches["sphere"]))
        after_edit = client.get(out["mesh_url"]).content
        assert after_edit != before
        reset = client.post(f"/api/session/{sid}/reset")
        assert reset.status_code == 200
        assert client.get(out["mesh_url"]).content == before

    def test_reset_idempotent(self, client, library_sketch_png):
        out = _generate(client, library_sketch_png)
        sid = out["session_id"]
        client.post(f"/api/session/{sid}/reset")
        a = client.get(out["mesh_url"]).content
        client.post(f"/api/session/{sid}/reset")
        assert client.get(out["mesh_url"]).content == a

    def test_export_parses_as_obj(self, client, library_sketch_png, tmp_path):
        from udfcloth.mesh import load_obj

        out = _generate(client, library_sketch_png)
        data = client.get(out["mesh_url"]).content
        p = tmp_path / "export.obj"
        p.write_bytes(data)
        mesh = load_obj(p)
        assert mesh.n_triangles > 0

    def test_unknown_session_404(self, client):
        for method, url, kwargs in [
            ("post", "/api/session/nope/capture", {"json": {"azimuth": 0}}),
            ("post", "/api/session/nope/edit", {"content": b"x"}),
            ("post", "/api/session/nope/reset", {}),
            ("get", "/api/session/nope/model.obj", {}),
        ]:
            resp = getattr(client, method)(url, **kwargs)
            assert resp.status_code == 404


class TestPersistence:
    def test_sessions_survive_restart(self, toy_training, meshes, tmp_path):
        out_pairs = tmp_path / "pairs"
        entries = build_pair_dataset([meshes["sphere"]], n_views=2, out_dir=out_pairs)
        library = build_library(entries, toy_training.latents, out_pairs)
        cfg = ServiceConfig(mesh_resolution=48, generate_steps=4, persist_dir=str(tmp_path / "sessions"))
        rt1 = ServiceRuntime(toy_training.decoder, toy_training.latents, library, cfg)
        c1 = TestClient(create_app(rt1))
        from udfcloth.sketch import CameraPose, contour_from_depth, render_depth

        png = sketch_to_png_bytes(contour_from_depth(render_depth(meshes["sphere"], CameraPose()), CameraPose()))
        out = _generate(c1, png)
        mesh_before = c1.get(out["mesh_url"]).content

        rt2 = ServiceRuntime(toy_training.decoder, toy_training.latents, library, cfg)
        c2 = TestClient(create_app(rt2))
        resp = c2.get(out["mesh_url"])
        assert resp.status_code == 200
        assert resp.content == mesh_before
