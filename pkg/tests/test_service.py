import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from charstudio import checkpoint as ck
from charstudio import service, zoo


@pytest.fixture(scope="module")
def models_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("models")
    gan = zoo.build_gan("dcgan", 32, base_width=8, seed=1)
    ck.save(d / "sil32.ck", ck.pair_tensors(gan), {"descriptor": gan.descriptor()})
    cond = zoo.build_gan("dcgan", 32, base_width=8, conditional=True, seed=2)
    ck.save(d / "cond32.ck", ck.pair_tensors(cond), {"descriptor": cond.descriptor()})
    tr = zoo.build_translator(base_width=8, seed=3)
    ck.save(d / "colorizer.ck", ck.pair_tensors(tr), {"descriptor": tr.descriptor()})
    return d


@pytest.fixture()
def client(models_dir, tmp_path):
    app = service.create_app(models_dir, tmp_path / "session")
    return TestClient(app)


class TestModels:
    def test_listing(self, client):
        models = {m["id"]: m for m in client.get("/api/models").json()["models"]}
        assert set(models) == {"sil32", "cond32", "colorizer"}
        assert models["sil32"]["kind"] == "dcgan"
        assert models["colorizer"]["family"] == "translator"
        assert models["cond32"]["conditional"] is True


class TestSample:
    def test_count_16(self, client):
        body = client.post("/api/sample", json={"model_id": "sil32", "count": 16, "seed": 5}).json()
        assert len(body["images"]) == 16
        for ref in body["images"]:
            r = client.get(ref["url"])
            assert r.status_code == 200
            assert r.content.startswith(b"\x89PNG")

    def test_fixed_seed_identical_bytes(self, client):
        req = {"model_id": "sil32", "count": 3, "seed": 9}
        a = client.post("/api/sample", json=req).json()["images"]
        b = client.post("/api/sample", json=req).json()["images"]
        for ra, rb in zip(a, b):
            assert client.get(ra["url"]).content == client.get(rb["url"]).content

    def test_count_zero_rejected_nothing_stored(self, client):
        r = client.post("/api/sample", json={"model_id": "sil32", "count": 0})
        assert r.status_code == 400
        assert r.json()["code"] == "bad_count"
        assert client.get("/api/board").json()["items"] == []

    def test_count_above_limit_rejected(self, client):
        r = client.post("/api/sample", json={"model_id": "sil32", "count": 65})
        assert r.status_code == 400

    def test_unknown_model_404(self, client):
        r = client.post("/api/sample", json={"model_id": "nope", "count": 4})
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_model"

    def test_conditional_class_by_name(self, client):
        r = client.post(
            "/api/sample",
            json={"model_id": "cond32", "count": 2, "class_label": "Woman", "seed": 1},
        )
        assert r.status_code == 200


class TestColorize:
    def test_variants_share_parent(self, client):
        sil = client.post("/api/sample", json={"model_id": "sil32", "count": 1, "seed": 2}).json()
        sid = sil["images"][0]["id"]
        body = client.post(
            "/api/colorize",
            json={"translator_id": "colorizer", "silhouette_id": sid, "variants": 4, "seed": 3},
        ).json()
        assert len(body["images"]) == 4
        assert body["parent"] == sid
        for ref in body["images"]:
            prov_parent = body["parent"]
            assert prov_parent == sid
            assert client.get(ref["url"]).status_code == 200

    def test_upload_equals_stored_reference(self, client):
        sil = client.post("/api/sample", json={"model_id": "sil32", "count": 1, "seed": 4}).json()
        sid = sil["images"][0]["id"]
        png = client.get(f"/images/{sid}.png").content
        by_id = client.post(
            "/api/colorize",
            json={"translator_id": "colorizer", "silhouette_id": sid, "variants": 2, "seed": 7},
        ).json()
        by_upload = client.post(
            "/api/colorize",
            json={
                "translator_id": "colorizer",
                "png_base64": base64.b64encode(png).decode(),
                "variants": 2,
                "seed": 7,
            },
        ).json()
        for a, b in zip(by_id["images"], by_upload["images"]):
            assert client.get(a["url"]).content == client.get(b["url"]).content

    def test_nonbinary_upload_warns(self, client):
        from charstudio import data

        gradient = np.linspace(-1, 1, 64 * 64, dtype=np.float32).reshape(1, 64, 64)
        png = data.encode_png(np.repeat(gradient, 3, axis=0))
        body = client.post(
            "/api/colorize",
            json={
                "translator_id": "colorizer",
                "png_base64": base64.b64encode(png).decode(),
                "variants": 1,
            },
        ).json()
        assert "warning" in body

    def test_missing_silhouette_404_store_unchanged(self, client):
        before = client.get("/api/models").json()
        r = client.post(
            "/api/colorize",
            json={"translator_id": "colorizer", "silhouette_id": "img999999", "variants": 1},
        )
        assert r.status_code == 404
        assert client.get("/api/models").json() == before

    def test_wrong_model_kind(self, client):
        r = client.post(
            "/api/colorize", json={"translator_id": "sil32", "silhouette_id": "x", "variants": 1}
        )
        assert r.status_code == 400


class TestInterpolate:
    def make_two(self, client, seed=11):
        body = client.post("/api/sample", json={"model_id": "sil32", "count": 2, "seed": seed}).json()
        return [ref["id"] for ref in body["images"]]

    def test_endpoints_are_the_sources(self, client):
        a, b = self.make_two(client)
        frames = client.post(
            "/api/interpolate", json={"model_id": "sil32", "from_id": a, "to_id": b, "steps": 5}
        ).json()["frames"]
        assert len(frames) == 5
        assert frames[0]["id"] == a and frames[-1]["id"] == b
        ts = [f["t"] for f in frames]
        assert ts == sorted(ts)

    def test_two_steps_just_the_originals(self, client):
        a, b = self.make_two(client, seed=12)
        frames = client.post(
            "/api/interpolate", json={"model_id": "sil32", "from_id": a, "to_id": b, "steps": 2}
        ).json()["frames"]
        assert [f["id"] for f in frames] == [a, b]

    def test_midpoint_uses_mean_latent(self, client, models_dir, tmp_path):
        a, b = self.make_two(client, seed=13)
        frames = client.post(
            "/api/interpolate", json={"model_id": "sil32", "from_id": a, "to_id": b, "steps": 3}
        ).json()["frames"]
        mid_png = client.get(frames[1]["url"]).content

        from charstudio import data
        from charstudio.tensor import Rng, Tensor

        loaded = ck.load(models_dir / "sil32.ck")
        pair = zoo.build_from_descriptor(loaded.descriptor)
        ck.load_into_pair(pair, loaded)
        latents = []
        zoo.generate_images(pair, 2, Rng(13, stream=11), latents_out=latents)
        z = ((latents[0] + latents[1]) / 2.0).reshape(1, -1, 1, 1).astype(np.float32)
        img = pair.generator(Tensor._wrap(z), training=False).data[0]
        assert data.encode_png(img) == mid_png

    def test_upload_endpoint_rejected(self, client):
        sil = client.post("/api/sample", json={"model_id": "sil32", "count": 1, "seed": 14}).json()
        sid = sil["images"][0]["id"]
        png = client.get(f"/images/{sid}.png").content
        upload = client.post(
            "/api/colorize",
            json={
                "translator_id": "colorizer",
                "png_base64": base64.b64encode(png).decode(),
                "variants": 1,
            },
        ).json()["parent"]
        r = client.post(
            "/api/interpolate", json={"model_id": "sil32", "from_id": sid, "to_id": upload, "steps": 3}
        )
        assert r.status_code == 400
        assert r.json()["code"] == "no_latent"

    def test_frames_are_valid_pngs_at_model_resolution(self, client):
        a, b = self.make_two(client, seed=15)
        frames = client.post(
            "/api/interpolate", json={"model_id": "sil32", "from_id": a, "to_id": b, "steps": 4}
        ).json()["frames"]
        from charstudio import data

        for f in frames:
            png = client.get(f["url"]).content
            decoded = data.decode_png(png, 3)
            assert decoded.shape == (3, 32, 32)


class TestBoard:
    def test_empty_on_fresh_session(self, client):
        assert client.get("/api/board").json()["items"] == []

    def test_put_get_roundtrip_and_restart(self, models_dir, tmp_path):
        session = tmp_path / "session"
        app = service.create_app(models_dir, session)
        with TestClient(app) as client:
            body = client.post("/api/sample", json={"model_id": "sil32", "count": 2, "seed": 3}).json()
            ids = [r["id"] for r in body["images"]]
            items = [{"id": ids[0], "note": "keep"}, {"id": ids[1], "note": ""}]
            r = client.put("/api/board", json={"items": items})
            assert r.status_code == 200
        # simulate a restart: new app over the same session directory
        app2 = service.create_app(models_dir, session)
        with TestClient(app2) as client2:
            got = client2.get("/api/board").json()["items"]
            assert [g["id"] for g in got] == ids
            # images still dereference after restart
            for iid in ids:
                assert client2.get(f"/images/{iid}.png").status_code == 200

    def test_unknown_id_rejected_atomically(self, client):
        body = client.post("/api/sample", json={"model_id": "sil32", "count": 1, "seed": 4}).json()
        good = body["images"][0]["id"]
        r = client.put("/api/board", json={"items": [{"id": good}, {"id": "img424242"}]})
        assert r.status_code == 404
        assert client.get("/api/board").json()["items"] == []


class TestProvenance:
    def test_colored_walks_back_to_sample(self, client, models_dir, tmp_path):
        sil = client.post("/api/sample", json={"model_id": "sil32", "count": 1, "seed": 21}).json()
        sid = sil["images"][0]["id"]
        colored = client.post(
            "/api/colorize",
            json={"translator_id": "colorizer", "silhouette_id": sid, "variants": 1, "seed": 22},
        ).json()
        # walk the parent chain through the store the app exposes
        store = client.app.state.store
        prov = store.provenance(colored["images"][0]["id"])
        chain = []
        while prov is not None:
            chain.append(prov["kind"])
            parent = prov.get("parent")
            prov = store.provenance(parent) if parent else None
        assert chain[-1] in ("sample", "upload")
