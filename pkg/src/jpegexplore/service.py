"""HTTP session service: upload, masks, tool jobs, history, export, verify.

Thin FastAPI layer over SessionStore; all numerical work happens in the
library. Responses are JSON except exports and previews, which stream bytes
with the consistency summary in a header.
"""

from __future__ import annotations

import base64
import json
import os
from typing import Optional

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, Query, Response, UploadFile
from pydantic import BaseModel, Field

from . import image_io
from .errors import (InvalidParameterError, JpegExploreError, ParseError,
                     UnsupportedFormatError)
from .optimizer import ImprintSpec, apply_imprint, imprint_shift_search
from .session import NotFoundError, SessionBusyError, SessionStore, preview_png
from .toolspec import JobRequest


class AdoptRequest(BaseModel):
    job_id: str
    index: int = Field(ge=0)


class ImprintRequest(BaseModel):
    content: Optional[str] = None        # target id of uploaded content
    crop: Optional[tuple[int, int, int, int]] = None  # top, left, h, w of self-crop
    top: int = 0
    left: int = 0
    translate: tuple[int, int] = (0, 0)
    scale: float = Field(default=1.0, gt=0.0)
    rotation_deg: float = 0.0
    store_preview_as: str = "imprint_preview"


class ShiftSearchRequest(BaseModel):
    content: Optional[str] = None
    crop: Optional[tuple[int, int, int, int]] = None
    top: int = 0
    left: int = 0


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, UnsupportedFormatError):
        return HTTPException(415, str(exc))
    if isinstance(exc, (NotFoundError, FileNotFoundError)):
        return HTTPException(404, str(exc))
    if isinstance(exc, SessionBusyError):
        return HTTPException(409, str(exc))
    if isinstance(exc, (InvalidParameterError, ParseError, ValueError)):
        return HTTPException(400, str(exc))
    return HTTPException(500, f"{type(exc).__name__}: {exc}")


def create_app(data_dir: Optional[str] = None, max_workers: int = 2) -> FastAPI:
    data_dir = data_dir or os.environ.get("JPEGEXPLORE_DATA", "./jpegexplore-data")
    store = SessionStore(data_dir, max_workers=max_workers)
    app = FastAPI(title="jpegexplore", version="0.1.0")
    app.state.store = store

    @app.post("/sessions")
    async def create_session(file: UploadFile = File(...),
                             qf: Optional[int] = Form(None),
                             sampling: str = Form("4:2:0")):
        data = await file.read()
        try:
            session = store.create_from_bytes(data, qf=qf, sampling=sampling)
        except JpegExploreError as exc:
            raise _http_error(exc) from exc
        return session.info()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            return store.get(session_id).info()
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.get("/sessions/{session_id}/image")
    def get_image(session_id: str):
        try:
            session = store.get(session_id)
            return Response(preview_png(session.current_output()),
                            media_type="image/png")
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.post("/sessions/{session_id}/masks")
    async def upload_mask(session_id: str, name: str = Form(...),
                          file: UploadFile = File(...)):
        try:
            session = store.get(session_id)
            mask = image_io.load_image_bytes(await file.read())
            if mask.ndim == 3:
                mask = mask.mean(axis=2)
            session.add_mask(name, mask.astype(np.float64) / 255.0)
            return {"name": name, "positive_pixels": int((session.masks[name] > 0).sum())}
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.post("/sessions/{session_id}/targets")
    async def upload_target(session_id: str, name: str = Form(...),
                            file: UploadFile = File(...)):
        try:
            session = store.get(session_id)
            image = image_io.load_image_bytes(await file.read())
            if (image.shape[0], image.shape[1]) != (session.code.height,
                                                    session.code.width):
                raise InvalidParameterError(
                    f"target {image.shape[:2]} does not match session image "
                    f"{(session.code.height, session.code.width)}")
            session.add_target(name, image)
            return {"name": name}
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.post("/sessions/{session_id}/jobs")
    def submit_job(session_id: str, request: JobRequest):
        try:
            job = store.start_job(session_id, request)
            return {"job_id": job.id, "status": job.status}
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.get("/jobs/{job_id}")
    def poll_job(job_id: str):
        try:
            job = store.get_job(job_id)
        except JpegExploreError as exc:
            raise _http_error(exc) from exc
        state = job.public_state()
        with job.lock:
            if job.preview is not None:
                state["preview_png_base64"] = base64.b64encode(job.preview).decode()
        return state

    @app.get("/jobs/{job_id}/results/{index}")
    def job_result_preview(job_id: str, index: int):
        try:
            job = store.get_job(job_id)
            with job.lock:
                if not 0 <= index < len(job.results):
                    raise NotFoundError(f"no result {index}")
                return Response(job.results[index]["preview"],
                                media_type="image/png")
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.post("/jobs/{job_id}/cancel")
    def cancel_job(job_id: str):
        try:
            store.cancel_job(job_id)
            return store.get_job(job_id).public_state()
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        return _history_step(session_id, forward=False)

    @app.post("/sessions/{session_id}/redo")
    def redo(session_id: str):
        return _history_step(session_id, forward=True)

    def _history_step(session_id: str, forward: bool):
        try:
            session = store.get(session_id)
            with session.lock:
                if session.active_job is not None:
                    raise SessionBusyError("session busy")
                changed = session.redo() if forward else session.undo()
            return {"changed": changed, "cursor": session.cursor,
                    "history_length": len(session.history)}
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.post("/sessions/{session_id}/adopt")
    def adopt(session_id: str, request: AdoptRequest):
        try:
            store.adopt_result(session_id, request.job_id, request.index)
            return store.get(session_id).info()
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    def _imprint_content(session, req):
        if (req.content is None) == (req.crop is None):
            raise InvalidParameterError("provide exactly one of content or crop")
        if req.content is not None:
            return session.resolve_target(req.content)
        top, left, h, w = req.crop
        base = session.current_output().pixels(clamp=False)
        return base[top:top + h, left:left + w].copy()

    @app.post("/sessions/{session_id}/imprint/preview")
    def imprint_preview(session_id: str, request: ImprintRequest):
        try:
            session = store.get(session_id)
            content = _imprint_content(session, request)
            spec = ImprintSpec(content, request.top, request.left,
                               tuple(request.translate), request.scale,
                               request.rotation_deg)
            preview, desired = apply_imprint(session.code, session.latent, spec)
            residual = float(np.sqrt(np.sum(
                (preview.pixels(clamp=False) - desired) ** 2)))
            session.add_target(request.store_preview_as, preview.to_uint8())
            return {
                "residual": residual,
                "stored_as": request.store_preview_as,
                "preview_png_base64": base64.b64encode(preview_png(preview)).decode(),
            }
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.post("/sessions/{session_id}/imprint/shift_search")
    def shift_search(session_id: str, request: ShiftSearchRequest):
        try:
            session = store.get(session_id)
            content = _imprint_content(session, ImprintRequest(
                content=request.content, crop=request.crop,
                top=request.top, left=request.left))
            base = session.current_output().pixels(clamp=False)
            result = imprint_shift_search(content, session.code, base,
                                          request.top, request.left)
            return {"dy": result.dy, "dx": result.dx,
                    "residual": result.residual,
                    "residuals": result.residuals.tolist()}
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str, format: str = Query("jfif")):
        try:
            payload, media, report = store.export(session_id, format)
        except JpegExploreError as exc:
            raise _http_error(exc) from exc
        summary = {"consistent": report.consistent,
                   "total_violations": report.total_violations,
                   "mode": report.mode}
        return Response(payload, media_type=media,
                        headers={"X-Consistency": json.dumps(summary)})

    @app.get("/sessions/{session_id}/verify")
    def verify(session_id: str, mode: str = Query("dct-exact")):
        try:
            session = store.get(session_id)
            from .consistency import verify_consistency
            report = verify_consistency(session.current_output(), session.code,
                                        mode=mode)
            return report.to_dict()
        except JpegExploreError as exc:
            raise _http_error(exc) from exc

    return app
