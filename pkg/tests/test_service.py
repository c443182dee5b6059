import io
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from jpegexplore import codec, image_io, jfif
from jpegexplore.consistency import LatentField, reconstruct
from jpegexplore.service import create_app
from jpegexplore.session import SessionStore, latent_to_bytes
from jpegexplore.toolspec import JobRequest

from conftest import fixture_path, load_fixture


def wait_for(client, job_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        state = client.get(f"/jobs/{job_id}").json()
        if state["status"] in ("done", "cancelled", "error"):
            return state
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not finish")


def make_mask_png(h, w, box):
    mask = np.zeros((h, w))
    r0, c0, r1, c1 = box
    mask[r0:r1, c0:c1] = 255.0
    return image_io.write_png(mask)


@pytest.fixture()
def app_client(tmp_path):
    app = create_app(data_dir=str(tmp_path / "data"), max_workers=2)
    with TestClient(app) as client:
        yield client


@pytest.fixture()
def jpeg_bytes():
    img = load_fixture("chelsea.png")[:64, :80]
    return jfif.serialize_jfif(codec.encode_pipeline(img, 10, "4:2:0"))


class TestSessionStore:
    def test_create_from_jfif_initial_output_is_neutral(self, tmp_path, jpeg_bytes):
        store = SessionStore(tmp_path)
        session = store.create_from_bytes(jpeg_bytes)
        code = jfif.parse_jfif(jpeg_bytes)
        want = reconstruct(code, LatentField.neutral(code)).pixels()
        assert np.array_equal(session.current_output().pixels(), want)

    def test_create_from_png_matches_encode_pipeline(self, tmp_path):
        img = load_fixture("camera.png")[:32, :32]
        store = SessionStore(tmp_path)
        session = store.create_from_bytes(image_io.write_png(img), qf=10)
        code = codec.encode_pipeline(img, 10)
        assert np.array_equal(session.code.luma.blocks, code.luma.blocks)

    def test_restart_reproduces_state_bit_exactly(self, tmp_path, jpeg_bytes, rng):
        store = SessionStore(tmp_path)
        session = store.create_from_bytes(jpeg_bytes)
        latent = session.latent.copy()
        for arr in latent.arrays():
            arr += rng.normal(0, 0.3, arr.shape)
        session.push(latent, "random edit")
        sid = session.id
        pixels = session.current_output().pixels()

        store2 = SessionStore(tmp_path)  # fresh process, same directory
        reloaded = store2.get(sid)
        assert np.array_equal(reloaded.latent.luma, latent.luma)
        assert np.array_equal(reloaded.current_output().pixels(), pixels)
        assert [e.label for e in reloaded.history] == ["initial decode", "random edit"]

    def test_undo_redo_bit_exact(self, tmp_path, jpeg_bytes, rng):
        store = SessionStore(tmp_path)
        session = store.create_from_bytes(jpeg_bytes)
        a = session.latent.copy()
        b = a.copy()
        b.luma += rng.normal(0, 0.2, b.luma.shape)
        session.push(b, "edit B")
        assert session.undo()
        assert np.array_equal(session.latent.luma, a.luma)
        assert not session.undo()  # at root: no-op
        assert session.redo()
        assert np.array_equal(session.latent.luma, b.luma)
        assert not session.redo()

    def test_push_truncates_redo_tail(self, tmp_path, jpeg_bytes):
        store = SessionStore(tmp_path)
        session = store.create_from_bytes(jpeg_bytes)
        b = session.latent.copy()
        b.luma += 0.1
        session.push(b, "B")
        session.undo()
        c = session.latent.copy()
        c.luma -= 0.1
        session.push(c, "C")
        assert [e.label for e in session.history] == ["initial decode", "C"]
        assert not session.redo()


class TestServiceEndpoints:
    def create_session(self, client, jpeg_bytes):
        resp = client.post("/sessions",
                           files={"file": ("test.jpg", jpeg_bytes, "image/jpeg")})
        assert resp.status_code == 200, resp.text
        return resp.json()

    def test_create_get_and_image(self, app_client, jpeg_bytes):
        info = self.create_session(app_client, jpeg_bytes)
        sid = info["id"]
        assert info["history_length"] == 1
        got = app_client.get(f"/sessions/{sid}").json()
        assert got["width"] == 80 and got["height"] == 64
        img = app_client.get(f"/sessions/{sid}/image")
        assert img.headers["content-type"] == "image/png"

    def test_create_from_png_with_qf(self, app_client):
        png = image_io.write_png(load_fixture("camera.png")[:32, :32])
        resp = app_client.post("/sessions", data={"qf": "25"},
                               files={"file": ("in.png", png, "image/png")})
        assert resp.status_code == 200
        assert resp.json()["color"] is False

    def test_progressive_upload_rejected_415(self, app_client):
        data = fixture_path("progressive.jpg").read_bytes()
        resp = app_client.post("/sessions",
                               files={"file": ("p.jpg", data, "image/jpeg")})
        assert resp.status_code == 415
        assert "SOF2" in resp.json()["detail"]

    def test_malformed_upload_rejected_400(self, app_client):
        resp = app_client.post("/sessions",
                               files={"file": ("x.bin", b"\xff\xd8garbage", "")})
        assert resp.status_code == 400

    def test_missing_session_404(self, app_client):
        assert app_client.get("/sessions/nope").status_code == 404
        assert app_client.get("/jobs/nope").status_code == 404

    def test_tv_job_lifecycle(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        mask_png = make_mask_png(64, 80, (8, 8, 56, 72))
        resp = app_client.post(f"/sessions/{sid}/masks", data={"name": "region"},
                               files={"file": ("m.png", mask_png, "image/png")})
        assert resp.status_code == 200
        assert resp.json()["positive_pixels"] > 0

        job = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "tv"}],
            "mask": "region",
            "config": {"steps": 30},
        })
        assert job.status_code == 200
        state = wait_for(app_client, job.json()["job_id"])
        assert state["status"] == "done"
        assert len(state["trace"]) >= 2
        assert state["trace"][-1] < state["trace"][0]
        assert "preview_png_base64" in state

        info = app_client.get(f"/sessions/{sid}").json()
        assert info["history_length"] == 2
        verify = app_client.get(f"/sessions/{sid}/verify").json()
        assert verify["consistent"] is True

    def test_job_on_missing_session_404(self, app_client):
        resp = app_client.post("/sessions/nope/jobs",
                               json={"objectives": [{"type": "tv"}]})
        assert resp.status_code == 404

    def test_invalid_objective_400(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        resp = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "mystery"}]})
        assert resp.status_code == 422  # schema validation with the field path
        detail = resp.json()["detail"]
        assert any("objectives" in str(item.get("loc")) for item in detail)

    def test_concurrent_job_conflict_409(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        first = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "tv"}], "config": {"steps": 120}})
        assert first.status_code == 200
        second = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "tv"}], "config": {"steps": 5}})
        assert second.status_code == 409
        app_client.post(f"/jobs/{first.json()['job_id']}/cancel")
        state = wait_for(app_client, first.json()["job_id"])
        assert state["status"] in ("cancelled", "done")

    def test_cancel_preserves_latent(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        before = app_client.get(f"/sessions/{sid}").json()["history_length"]
        job = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "tv"}], "config": {"steps": 500}}).json()
        app_client.post(f"/jobs/{job['job_id']}/cancel")
        state = wait_for(app_client, job["job_id"])
        assert state["status"] == "cancelled"
        assert app_client.get(f"/sessions/{sid}").json()["history_length"] == before

    def test_undo_redo_endpoints(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        job = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "tv"}], "config": {"steps": 5}}).json()
        wait_for(app_client, job["job_id"])
        png_after = app_client.get(f"/sessions/{sid}/image").content

        undo = app_client.post(f"/sessions/{sid}/undo").json()
        assert undo["changed"] is True
        undo2 = app_client.post(f"/sessions/{sid}/undo").json()
        assert undo2["changed"] is False  # at root
        redo = app_client.post(f"/sessions/{sid}/redo").json()
        assert redo["changed"] is True
        assert app_client.get(f"/sessions/{sid}/image").content == png_after

    def test_export_jfif_parses_to_same_code(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        resp = app_client.get(f"/sessions/{sid}/export", params={"format": "jfif"})
        assert resp.status_code == 200
        summary = json.loads(resp.headers["X-Consistency"])
        assert summary["consistent"] is True
        exported = jfif.parse_jfif(resp.content)
        original = jfif.parse_jfif(jpeg_bytes)
        assert np.array_equal(exported.luma.blocks, original.luma.blocks)
        assert np.array_equal(exported.cb.blocks, original.cb.blocks)

    def test_export_png_and_ppm(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        png = app_client.get(f"/sessions/{sid}/export", params={"format": "png"})
        assert png.headers["content-type"] == "image/png"
        ppm = app_client.get(f"/sessions/{sid}/export", params={"format": "ppm"})
        assert ppm.content[:2] == b"P6"
        assert app_client.get(f"/sessions/{sid}/export",
                              params={"format": "bmp"}).status_code == 400

    def test_export_png_reencodes_to_same_coefficients(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        png = app_client.get(f"/sessions/{sid}/export", params={"format": "png"})
        pixels = image_io.load_image_bytes(png.content)
        code = jfif.parse_jfif(jpeg_bytes)
        again = codec.encode_pipeline(pixels, 10, code.sampling)
        total = match = 0
        for p1, p2 in zip(code.planes(), again.planes()):
            assert np.array_equal(p1.table, p2.table)  # same session tables
            total += p1.blocks.size
            match += int((p1.blocks == p2.blocks).sum())
        assert match / total >= 0.999

    def test_diversity_gallery_and_adopt(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        job = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "diversity", "count": 2}],
            "config": {"steps": 10, "learning_rate": 0.05},
        }).json()
        state = wait_for(app_client, job["job_id"])
        assert state["status"] == "done"
        assert len(state["results"]) == 2
        preview = app_client.get(f"/jobs/{job['job_id']}/results/1")
        assert preview.headers["content-type"] == "image/png"

        before = app_client.get(f"/sessions/{sid}/image").content
        adopt = app_client.post(f"/sessions/{sid}/adopt",
                                json={"job_id": job["job_id"], "index": 1})
        assert adopt.status_code == 200
        assert adopt.json()["history_length"] == 2
        assert app_client.get(f"/sessions/{sid}/image").content != before
        assert app_client.get(f"/sessions/{sid}/verify").json()["consistent"]

    def test_explore_classes_job(self, app_client):
        from jpegexplore.objectives import get_hook
        hook = get_hook("toy")
        img = np.full((32, 32), 128.0)
        img[8:24, 8:24] = hook.templates[1]
        png = image_io.write_png(img)
        resp = app_client.post("/sessions", data={"qf": "50"},
                               files={"file": ("in.png", png, "image/png")})
        sid = resp.json()["id"]
        mask_png = make_mask_png(32, 32, (8, 8, 24, 24))
        app_client.post(f"/sessions/{sid}/masks", data={"name": "m"},
                        files={"file": ("m.png", mask_png, "image/png")})
        job = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "explore_classes", "classes": [0, 1, 2, 3]}],
            "mask": "m",
            "config": {"steps": 3},
        }).json()
        state = wait_for(app_client, job["job_id"])
        assert state["status"] == "done"
        scores = {r["index"]: r["score"] for r in state["results"]}
        assert max(scores, key=scores.get) == 1

    def test_scribble_target_l1_job(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        base = image_io.load_image_bytes(
            app_client.get(f"/sessions/{sid}/export",
                           params={"format": "png"}).content)
        scribble = base.astype(np.float64)
        scribble[20:40, 20:60] = [200.0, 40.0, 40.0]
        resp = app_client.post(f"/sessions/{sid}/targets", data={"name": "scribble"},
                               files={"file": ("t.png",
                                               image_io.write_png(scribble),
                                               "image/png")})
        assert resp.status_code == 200
        mask_png = make_mask_png(64, 80, (20, 20, 40, 60))
        app_client.post(f"/sessions/{sid}/masks", data={"name": "m"},
                        files={"file": ("m.png", mask_png, "image/png")})
        job = app_client.post(f"/sessions/{sid}/jobs", json={
            "objectives": [{"type": "l1_target", "target": "scribble"}],
            "mask": "m",
            "config": {"steps": 20, "learning_rate": 0.01},
        }).json()
        state = wait_for(app_client, job["job_id"])
        assert state["status"] == "done"
        assert state["trace"][-1] < state["trace"][0]
        assert app_client.get(f"/sessions/{sid}/verify").json()["consistent"]

    def test_imprint_preview_and_shift_search(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        resp = app_client.post(f"/sessions/{sid}/imprint/preview", json={
            "crop": [8, 8, 16, 16], "top": 8, "left": 8})
        assert resp.status_code == 200
        body = resp.json()
        assert body["residual"] < 1e-6  # self-imprint at the same place
        assert "imprint_preview" in app_client.get(f"/sessions/{sid}").json()["targets"]

        shifted = app_client.post(f"/sessions/{sid}/imprint/shift_search", json={
            "crop": [16, 16, 16, 16], "top": 19, "left": 21})
        assert shifted.status_code == 200
        result = shifted.json()
        assert 0 <= result["dy"] < 8 and 0 <= result["dx"] < 8
        grid = np.asarray(result["residuals"])
        assert grid.shape == (8, 8)
        assert result["residual"] == pytest.approx(grid.min())

    def test_mask_upload_errors(self, app_client, jpeg_bytes):
        sid = self.create_session(app_client, jpeg_bytes)["id"]
        wrong = image_io.write_png(np.zeros((10, 10)))
        resp = app_client.post(f"/sessions/{sid}/masks", data={"name": "bad"},
                               files={"file": ("m.png", wrong, "image/png")})
        assert resp.status_code == 400


class TestConcurrentSessions:
    def test_independent_sessions_do_not_interfere(self, tmp_path, jpeg_bytes):
        store = SessionStore(tmp_path, max_workers=2)
        s1 = store.create_from_bytes(jpeg_bytes)
        s2 = store.create_from_bytes(jpeg_bytes)
        request = JobRequest.model_validate({
            "objectives": [{"type": "tv"}], "config": {"steps": 15}})
        j1 = store.start_job(s1.id, request)
        j2 = store.start_job(s2.id, request)
        deadline = time.time() + 60
        while time.time() < deadline:
            if all(store.get_job(j.id).status == "done" for j in (j1, j2)):
                break
            time.sleep(0.05)
        assert store.get_job(j1.id).status == "done"
        assert store.get_job(j2.id).status == "done"
        assert np.array_equal(s1.latent.luma, s2.latent.luma)  # same work, same result

        serial_store = SessionStore(tmp_path / "serial")
        s3 = serial_store.create_from_bytes(jpeg_bytes)
        j3 = serial_store.start_job(s3.id, request)
        deadline = time.time() + 60
        while serial_store.get_job(j3.id).status != "done" and time.time() < deadline:
            time.sleep(0.05)
        assert np.array_equal(s3.latent.luma, s1.latent.luma)
