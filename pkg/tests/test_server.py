"""HTTP API tests against an in-process app with a briefly trained session."""

import io

import numpy as np
import pytest
from fastapi.testclient import TestClient

from vqmat import brdf, vq
from vqmat.editor import EditSession
from vqmat.server import create_app


@pytest.fixture()
def client(trained_pair, tmp_path):
    model, bundle, _ = trained_pair
    session = EditSession(
        model, bundle, journal_path=tmp_path / "journal.ndjson", env_dir=tmp_path / "envs"
    )
    return TestClient(create_app(session)), session


def fetch_raw(client, view, branch):
    r = client.get(f"/api/render?view={view}&branch={branch}&format=npy")
    assert r.status_code == 200
    return np.load(io.BytesIO(r.content))


class TestReadEndpoints:
    def test_views_lists_ids_and_sizes(self, client):
        c, session = client
        r = c.get("/api/views")
        assert r.status_code == 200
        body = r.json()
        assert len(body) == len(session.bundle.views)
        assert body[0]["width"] == session.bundle.views[0].mask.shape[1]

    def test_materials_schema(self, client):
        c, session = client
        mats = c.get("/api/materials").json()
        assert len(mats) == session.m
        for m in mats:
            assert set(m) >= {"index", "k_d", "k_m", "k_r", "display_color", "overridden"}
            assert not m["overridden"]

    def test_render_png_and_raw(self, client):
        c, session = client
        png = c.get("/api/render?view=0&branch=continuous")
        assert png.status_code == 200
        assert png.headers["content-type"] == "image/png"
        assert png.content[:8] == b"\x89PNG\r\n\x1a\n"
        raw = fetch_raw(c, 0, "continuous")
        assert raw.shape == (*session.bundle.views[0].mask.shape, 3)
        assert raw.dtype == np.float32

    def test_unknown_view_404_with_code(self, client):
        c, _ = client
        r = c.get("/api/render?view=99&branch=continuous")
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_view"

    def test_segmentation_npy_matches_build(self, client):
        c, session = client
        r = c.get("/api/segmentation?view=0&format=npy")
        seg = np.load(io.BytesIO(r.content))
        np.testing.assert_array_equal(seg, session.segmentation(0))

    def test_region_mask_png(self, client):
        c, _ = client
        r = c.get("/api/region?view=0&index=0")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"


class TestMutatingEndpoints:
    def test_select_on_foreground_and_background(self, client):
        c, session = client
        seg = session.segmentation(0)
        ys, xs = np.where(seg >= 0)
        ok = c.post("/api/select", json={"view": 0, "x": int(xs[0]), "y": int(ys[0])})
        assert ok.status_code == 200
        assert ok.json()["index"] == int(seg[ys[0], xs[0]])
        ys, xs = np.where(seg == vq.BACKGROUND)
        bad = c.post("/api/select", json={"view": 0, "x": int(xs[0]), "y": int(ys[0])})
        assert bad.status_code == 422
        assert bad.json()["code"] == "background"

    def test_edit_then_render_reflects_change(self, client):
        c, session = client
        before = fetch_raw(c, 0, "edited")
        r = c.post(
            "/api/edit",
            json={"index": 0, "k_d": [0.9, 0.1, 0.1], "k_m": 0.8, "k_r": 0.2},
        )
        assert r.status_code == 200
        after = fetch_raw(c, 0, "edited")
        seg = session.segmentation(0)
        changed = np.abs(after - before).max(axis=-1) > 1e-4
        np.testing.assert_array_equal(changed, seg == 0)
        mats = c.get("/api/materials").json()
        assert mats[0]["overridden"]

    def test_edit_bad_index_422(self, client):
        c, session = client
        r = c.post(
            "/api/edit",
            json={"index": session.m + 5, "k_d": [0.5, 0.5, 0.5], "k_m": 0.5, "k_r": 0.5},
        )
        assert r.status_code == 422
        assert r.json()["code"] == "bad_index"

    def test_relight_preset_and_reset(self, client):
        c, _ = client
        base = fetch_raw(c, 0, "discrete")
        r = c.post("/api/relight", json={"preset": "sunset"})
        assert r.status_code == 200
        relit = fetch_raw(c, 0, "discrete")
        assert np.abs(relit - base).max() > 1e-3
        assert c.post("/api/reset").status_code == 200
        restored = fetch_raw(c, 0, "discrete")
        np.testing.assert_array_equal(restored, base)

    def test_relight_intensity_scales_linearly(self, client):
        c, _ = client
        base = fetch_raw(c, 0, "discrete")
        c.post("/api/relight", json={"intensity": 2.0})
        np.testing.assert_allclose(fetch_raw(c, 0, "discrete"), 2 * base, rtol=1e-4, atol=1e-6)

    def test_relight_env_upload_binary(self, client, tmp_path):
        c, _ = client
        env = brdf.env_preset("overcast", 8, 16)
        path = tmp_path / "up.envm"
        brdf.write_env(env, path)
        r = c.post("/api/relight", files={"file": ("up.envm", path.read_bytes())})
        assert r.status_code == 200
        bad = c.post("/api/relight", files={"file": ("bad.envm", b"JUNKDATA")})
        assert bad.status_code == 422

    def test_unknown_preset_rejected(self, client):
        c, _ = client
        r = c.post("/api/relight", json={"preset": "nonexistent"})
        assert r.status_code == 422
