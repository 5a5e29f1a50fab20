"""HTTP API for the browser editor.

JSON over HTTP under ``/api``; renders ship as gamma-encoded PNG with a raw
float32 variant (``format=npy``) for tests. Mutating endpoints are
serialized through one lock and journaled by the session, so a restart with
the same session directory restores all edits. When a built frontend is
available its static files are served at the root.
"""

from __future__ import annotations

import io
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from . import brdf
from .editor import EditError, EditRequest

DEFAULT_ADDR = "127.0.0.1:8000"
ADDR_ENV_VAR = "VQNERF_ADDR"


def to_png_bytes(img, gamma=2.2):
    """Encode a linear-RGB float image (or uint8 image) as PNG."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) ** (1.0 / gamma) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def to_npy_bytes(arr):
    buf = io.BytesIO()
    np.save(buf, np.asarray(arr))
    return buf.getvalue()


def _error(status, code, message):
    return JSONResponse(status_code=status, content={"code": code, "message": message})


_ERROR_STATUS = {
    "background": 422,
    "out_of_bounds": 422,
    "unknown_view": 404,
    "bad_index": 422,
    "bad_attributes": 422,
    "bad_bbox": 422,
    "bad_branch": 400,
    "bad_intensity": 422,
    "bad_relight": 400,
}


def create_app(session, static_dir=None):
    app = FastAPI(title="vqmat editor")
    lock = threading.Lock()

    @app.exception_handler(EditError)
    async def _edit_error(request, exc):
        return _error(_ERROR_STATUS.get(exc.code, 400), exc.code, str(exc))

    @app.get("/api/views")
    def views():
        return [
            {"id": i, "height": v.mask.shape[0], "width": v.mask.shape[1]}
            for i, v in enumerate(session.bundle.views)
        ]

    @app.get("/api/materials")
    def materials():
        return session.materials()

    @app.get("/api/render")
    def render(view: int, branch: str = "continuous", format: str = "png"):
        img = session.render_view(view, branch)
        if format == "npy":
            return Response(to_npy_bytes(img), media_type="application/octet-stream")
        return Response(to_png_bytes(img), media_type="image/png")

    @app.get("/api/segmentation")
    def segmentation(view: int, format: str = "png"):
        if format == "npy":
            return Response(
                to_npy_bytes(session.segmentation(view)),
                media_type="application/octet-stream",
            )
        return Response(
            to_png_bytes(session.segmentation_overlay(view)), media_type="image/png"
        )

    @app.get("/api/region")
    def region(view: int, index: int):
        seg = session.segmentation(view)
        mask = (seg == index).astype(np.uint8)
        rgba = np.zeros((*mask.shape, 4), dtype=np.uint8)
        rgba[mask > 0] = (255, 255, 255, 160)
        buf = io.BytesIO()
        Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.post("/api/select")
    async def select(request: Request):
        body = await request.json()
        idx = session.select_material(int(body["view"]), int(body["x"]), int(body["y"]))
        return {"index": idx}

    @app.post("/api/edit")
    async def edit(request: Request):
        body = await request.json()
        req = EditRequest(
            index=int(body["index"]),
            k_d=tuple(body["k_d"]),
            k_m=float(body["k_m"]),
            k_r=float(body["k_r"]),
            bbox=tuple(body["bbox"]) if body.get("bbox") else None,
            view=body.get("view"),
        )
        with lock:
            session.apply_edit(req)
        return {"ok": True, "index": req.index}

    @app.post("/api/relight")
    async def relight(request: Request, file: UploadFile = None):
        if file is not None:
            data = await file.read()
            tmp = Path(session.env_dir or ".") / "_upload.envm"
            tmp.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_bytes(data)
            try:
                env = brdf.read_env(tmp)
            except brdf.EnvFormatError as e:
                return _error(422, "bad_env_file", str(e))
            with lock:
                session.relight(env=env)
            return {"ok": True, "env": "uploaded"}
        body = await request.json()
        with lock:
            if "preset" in body:
                try:
                    session.relight(preset=body["preset"])
                except KeyError as e:
                    return _error(422, "unknown_preset", str(e))
            elif "intensity" in body:
                session.relight(intensity=float(body["intensity"]))
            else:
                raise EditError("bad_relight", "provide preset, intensity, or file")
        return {"ok": True, "env": session.env_name, "scale": session.env_scale}

    @app.post("/api/reset")
    def reset():
        with lock:
            session.reset()
        return {"ok": True}

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve_http(session, addr=DEFAULT_ADDR, static_dir=None):
    """Run the editor API with uvicorn until interrupted."""
    import uvicorn

    host, _, port = addr.partition(":")
    app = create_app(session, static_dir=static_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
