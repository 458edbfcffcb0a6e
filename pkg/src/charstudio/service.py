"""HTTP studio service: sampling, colorization, interpolation, curation.

Inference-only: checkpoints are never mutated.  Every generated image is
stored with full provenance (model, seed, truncation, class, latent, parent
silhouette), so any colored result can be traced back to a noise-sampled
silhouette or an upload.  The image store and the curation board persist in
the session directory and survive restarts.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import checkpoint as ck
from . import data as dataio
from . import zoo
from . import tensor as T
from .tensor import Rng, Tensor

log = logging.getLogger(__name__)

MAX_SAMPLE_COUNT = 64


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class SessionStore:
    """Image bytes + provenance + board, persisted atomically on mutation."""

    def __init__(self, session_dir):
        self.root = Path(session_dir)
        self.images_dir = self.root / "images"
        self.images_dir.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "store.json"
        self._lock = threading.Lock()
        if self.index_path.exists():
            state = json.loads(self.index_path.read_text())
        else:
            state = {"images": {}, "board": [], "next_id": 1}
        self._images: dict[str, dict] = state["images"]
        self._board: list[dict] = state["board"]
        self._next_id: int = state["next_id"]

    def _persist(self) -> None:
        tmp = self.index_path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(
                {"images": self._images, "board": self._board, "next_id": self._next_id},
                sort_keys=True,
            )
        )
        os.replace(tmp, self.index_path)

    def add_image(self, png: bytes, provenance: dict) -> str:
        with self._lock:
            image_id = f"img{self._next_id:06d}"
            self._next_id += 1
            (self.images_dir / f"{image_id}.png").write_bytes(png)
            self._images[image_id] = provenance
            self._persist()
            return image_id

    def image_bytes(self, image_id: str) -> bytes:
        path = self.images_dir / f"{image_id}.png"
        if image_id not in self._images or not path.exists():
            raise ApiError(404, "unknown_image", f"no image {image_id!r}")
        return path.read_bytes()

    def provenance(self, image_id: str) -> dict:
        if image_id not in self._images:
            raise ApiError(404, "unknown_image", f"no image {image_id!r}")
        return self._images[image_id]

    def get_board(self) -> list[dict]:
        with self._lock:
            return list(self._board)

    def put_board(self, items: list[dict]) -> None:
        with self._lock:
            for item in items:
                if item["id"] not in self._images:
                    raise ApiError(404, "unknown_image", f"board references missing {item['id']!r}")
            self._board = items
            self._persist()


class ModelRegistry:
    """Checkpoints under a directory, rebuilt and loaded once, read-only."""

    def __init__(self, models_dir):
        self.models: dict[str, dict] = {}
        models_dir = Path(models_dir)
        for path in sorted(models_dir.glob("*.ck")):
            try:
                loaded = ck.load(path)
                pair = zoo.build_from_descriptor(loaded.descriptor)
                ck.load_into_pair(pair, loaded)
            except Exception as err:  # noqa: BLE001 - a bad file skips the entry
                log.warning("skipping %s: %s", path, err)
                continue
            self.models[path.stem] = {"pair": pair, "path": str(path)}

    def get(self, model_id: str) -> dict:
        entry = self.models.get(model_id)
        if entry is None:
            raise ApiError(404, "unknown_model", f"no model {model_id!r}")
        return entry

    def listing(self) -> list[dict]:
        out = []
        for model_id, entry in sorted(self.models.items()):
            pair = entry["pair"]
            info = {
                "id": model_id,
                "family": "translator" if pair.kind == "translator" else "gan",
                "kind": pair.kind,
                "resolution": pair.resolution,
            }
            if pair.kind != "translator":
                info["conditional"] = pair.conditional
                info["classes"] = list(zoo.CLASS_NAMES[: pair.n_classes]) if pair.conditional else []
            out.append(info)
        return out


class SampleRequest(BaseModel):
    model_id: str
    count: int = 16
    class_label: int | str | None = None
    truncation: float = 1.0
    seed: int | None = None


class ColorizeRequest(BaseModel):
    translator_id: str
    silhouette_id: str | None = None
    png_base64: str | None = None
    variants: int = 1
    seed: int | None = None


class InterpolateRequest(BaseModel):
    model_id: str
    from_id: str
    to_id: str
    steps: int = 5


class BoardItem(BaseModel):
    id: str
    note: str = ""


class BoardPut(BaseModel):
    items: list[BoardItem]


def _fresh_seed() -> int:
    return int.from_bytes(os.urandom(8), "little") & 0x7FFFFFFFFFFFFFFF


def _resolve_label(label, n_classes: int):
    if label is None:
        return None
    if isinstance(label, str):
        try:
            return zoo.CLASS_NAMES.index(label)
        except ValueError as err:
            raise ApiError(400, "bad_class", f"unknown class {label!r}") from err
    if not 0 <= int(label) < n_classes:
        raise ApiError(400, "bad_class", f"class index {label} out of range [0, {n_classes})")
    return int(label)


def create_app(models_dir, session_dir) -> FastAPI:
    app = FastAPI(title="charstudio", docs_url=None, redoc_url=None)
    registry = ModelRegistry(models_dir)
    store = SessionStore(session_dir)
    app.state.registry = registry
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(_: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.get("/api/models")
    def list_models():
        return {"models": registry.listing()}

    @app.post("/api/sample")
    def sample(req: SampleRequest):
        entry = registry.get(req.model_id)
        pair = entry["pair"]
        if pair.kind == "translator":
            raise ApiError(400, "not_a_sampler", "translators colorize; use /api/colorize")
        if not 1 <= req.count <= MAX_SAMPLE_COUNT:
            raise ApiError(400, "bad_count", f"count must be in [1, {MAX_SAMPLE_COUNT}]")
        if not 0.0 <= req.truncation <= 1.0:
            raise ApiError(400, "bad_truncation", "truncation must be in [0, 1]")
        label = _resolve_label(req.class_label, pair.n_classes or len(zoo.CLASS_NAMES))
        seed = req.seed if req.seed is not None else _fresh_seed()
        rng = Rng(seed, stream=11)
        if pair.conditional:
            labels = np.full(req.count, label, dtype=np.int64) if label is not None else rng.integers(req.count, 0, pair.n_classes)
        else:
            labels = None
        latents: list[np.ndarray] = []
        images = zoo.generate_images(
            pair, req.count, rng, truncation=req.truncation, labels=labels, latents_out=latents
        )
        out = []
        for i in range(req.count):
            provenance = {
                "kind": "sample",
                "model": req.model_id,
                "seed": seed,
                "index": i,
                "truncation": req.truncation,
                "class_label": int(labels[i]) if labels is not None else None,
                "latent": [float(v) for v in latents[i]],
                "parent": None,
                "created": time.time(),
            }
            image_id = store.add_image(dataio.encode_png(images[i]), provenance)
            out.append({"id": image_id, "url": f"/images/{image_id}.png"})
        return {"images": out, "seed": seed}

    def _silhouette_input(png: bytes, resolution: int) -> tuple[np.ndarray, bool]:
        decoded = dataio.decode_png(png, 3)
        if decoded.shape[1] != resolution:
            decoded = dataio.resample_bicubic(decoded, resolution)
        sil = dataio.silhouette_from_colored(decoded)
        was_binary = bool(np.all(np.isin(dataio.to_bytes(decoded), (0, 255))))
        return sil, was_binary

    @app.post("/api/colorize")
    def colorize(req: ColorizeRequest):
        entry = registry.get(req.translator_id)
        pair = entry["pair"]
        if pair.kind != "translator":
            raise ApiError(400, "not_a_translator", f"{req.translator_id!r} cannot colorize")
        if not 1 <= req.variants <= MAX_SAMPLE_COUNT:
            raise ApiError(400, "bad_count", f"variants must be in [1, {MAX_SAMPLE_COUNT}]")
        if (req.silhouette_id is None) == (req.png_base64 is None):
            raise ApiError(400, "bad_source", "provide exactly one of silhouette_id or png_base64")
        warning = None
        if req.silhouette_id is not None:
            png = store.image_bytes(req.silhouette_id)
            parent = req.silhouette_id
        else:
            try:
                png = base64.b64decode(req.png_base64)
            except Exception as err:  # noqa: BLE001
                raise ApiError(400, "bad_upload", f"png_base64 does not decode: {err}") from err
            sil_probe, was_binary = _silhouette_input(png, pair.resolution)
            parent = store.add_image(
                dataio.encode_png(sil_probe),
                {"kind": "upload", "parent": None, "created": time.time()},
            )
            if not was_binary:
                warning = "upload was not binary; thresholded at 0.95 luminance"
        sil, _ = _silhouette_input(png, pair.resolution)
        seed = req.seed if req.seed is not None else _fresh_seed()
        sil_t = Tensor._wrap(sil[None, :, :, :])
        out = []
        with T.no_grad():
            for i in range(req.variants):
                noise = pair.generator.sample_noise(Rng(seed, stream=12 + i), 1)
                colored = pair.generator.forward(sil_t, training=False, noise=noise).data[0]
                provenance = {
                    "kind": "colorized",
                    "model": req.translator_id,
                    "seed": seed,
                    "index": i,
                    "parent": parent,
                    "created": time.time(),
                }
                image_id = store.add_image(dataio.encode_png(colored), provenance)
                out.append({"id": image_id, "url": f"/images/{image_id}.png"})
        body = {"images": out, "parent": parent, "seed": seed}
        if warning:
            body["warning"] = warning
        return body

    @app.post("/api/interpolate")
    def interpolate(req: InterpolateRequest):
        entry = registry.get(req.model_id)
        pair = entry["pair"]
        if req.steps < 2:
            raise ApiError(400, "bad_steps", "steps must be >= 2")
        ends = []
        for image_id in (req.from_id, req.to_id):
            prov = store.provenance(image_id)
            if prov.get("model") != req.model_id or prov.get("latent") is None:
                raise ApiError(
                    400, "no_latent", f"{image_id!r} was not sampled from model {req.model_id!r}"
                )
            ends.append(prov)
        z0 = np.asarray(ends[0]["latent"], dtype=np.float32)
        z1 = np.asarray(ends[1]["latent"], dtype=np.float32)
        frames = []
        with T.no_grad():
            for i in range(req.steps):
                if i == 0:
                    frames.append({"id": req.from_id, "url": f"/images/{req.from_id}.png", "t": 0.0})
                    continue
                if i == req.steps - 1:
                    frames.append({"id": req.to_id, "url": f"/images/{req.to_id}.png", "t": 1.0})
                    continue
                t = i / (req.steps - 1)
                z = ((1.0 - t) * z0 + t * z1).reshape(1, -1, 1, 1)
                inp = Tensor._wrap(z)
                if pair.conditional:
                    label = ends[0].get("class_label") or 0
                    inp = zoo.condition_inputs(inp, label, pair.n_classes)
                image = pair.generator(inp, training=False).data[0]
                provenance = {
                    "kind": "frame",
                    "model": req.model_id,
                    "parent": req.from_id,
                    "parent_to": req.to_id,
                    "t": t,
                    "latent": [float(v) for v in z.reshape(-1)],
                    "created": time.time(),
                }
                image_id = store.add_image(dataio.encode_png(image), provenance)
                frames.append({"id": image_id, "url": f"/images/{image_id}.png", "t": t})
        return {"frames": frames}

    @app.get("/api/board")
    def get_board():
        return {"items": store.get_board()}

    @app.put("/api/board")
    def put_board(req: BoardPut):
        store.put_board([item.model_dump() for item in req.items])
        return {"items": store.get_board()}

    @app.get("/images/{image_id}.png")
    def get_image(image_id: str):
        return Response(content=store.image_bytes(image_id), media_type="image/png")

    return app


def serve(models_dir, session_dir, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    app = create_app(models_dir, session_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
