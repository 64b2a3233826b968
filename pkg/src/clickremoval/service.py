"""HTTP session service: upload an image, add clicks, run removal, poll results.

One long-running job queue per backbone device; progress is polled, not
pushed. Sessions live in memory and expire after a configurable TTL.
"""

from __future__ import annotations

import base64
import io
import os
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from .attention_control import GuidanceSchedule
from .backbone import PRESET_NAMES, load_descriptor
from .guidance_pipeline import RemovalRequest, remove_object
from .semantic_map import ClickSet, PropagationConfig, rasterize_click

MAX_UPLOAD_ENV = "CLICKREMOVAL_MAX_UPLOAD"
SESSION_TTL_ENV = "CLICKREMOVAL_SESSION_TTL"
BIND_ENV = "CLICKREMOVAL_BIND"

DEFAULT_MAX_UPLOAD = 16 * 1024 * 1024
DEFAULT_TTL = 3600.0

IDLE = "IDLE"
RUNNING = "RUNNING"
DONE = "DONE"
FAILED = "FAILED"


class ClickIn(BaseModel):
    u: float = Field(ge=0.0, le=1.0)
    v: float = Field(ge=0.0, le=1.0)
    polarity: str = Field(pattern=r"^[+-]$")


class ClicksBody(BaseModel):
    clicks: list[ClickIn]


class RemovalParams(BaseModel):
    r: float = Field(default=1.0, ge=0.0, le=1.0)
    steps: int | None = Field(default=None, ge=4, le=1000)
    preset: str = "toy"
    seed: int = 0
    tau: float = Field(default=0.05, gt=0.0, le=1.0)
    n_max: int = Field(default=20, ge=1, le=256)


@dataclass
class Session:
    id: str
    image: np.ndarray
    clicks: list = field(default_factory=list)  # (u, v, polarity) tuples
    status: str = IDLE
    result: object = None
    error: str | None = None
    progress: dict = field(default_factory=dict)
    preset: str = "toy"
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)

    def click_set(self) -> ClickSet:
        return ClickSet(
            positives=tuple((u, v) for u, v, p in self.clicks if p == "+"),
            negatives=tuple((u, v) for u, v, p in self.clicks if p == "-"),
        )


class SessionStore:
    def __init__(self, ttl: float):
        self.ttl = ttl
        self._sessions: dict[str, Session] = {}
        self._lock = threading.RLock()

    def create(self, image: np.ndarray) -> Session:
        s = Session(id=uuid.uuid4().hex, image=image)
        with self._lock:
            self._sessions[s.id] = s
        return s

    def get(self, sid: str) -> Session | None:
        self.expire()
        with self._lock:
            return self._sessions.get(sid)

    def delete(self, sid: str) -> bool:
        with self._lock:
            return self._sessions.pop(sid, None) is not None

    def expire(self):
        now = time.time()
        with self._lock:
            stale = [sid for sid, s in self._sessions.items()
                     if now - s.updated > self.ttl and s.status != RUNNING]
            for sid in stale:
                del self._sessions[sid]


class RemovalWorker:
    """Single per-device worker; jobs run strictly one at a time."""

    def __init__(self):
        self._queue: queue.Queue = queue.Queue()
        self._thread: threading.Thread | None = None
        self._lock = threading.Lock()

    def _ensure_started(self):
        with self._lock:
            if self._thread is None or not self._thread.is_alive():
                self._thread = threading.Thread(target=self._loop, daemon=True)
                self._thread.start()

    def submit(self, job):
        self._ensure_started()
        self._queue.put(job)

    def _loop(self):
        while True:
            job = self._queue.get()
            try:
                job()
            except Exception:
                pass  # job records its own failure state
            finally:
                self._queue.task_done()


def _png_bytes(image01: np.ndarray) -> bytes:
    arr = (np.clip(image01, 0, 1) * 255).astype(np.uint8)
    buf = io.BytesIO()
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
    else:
        Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _dedupe_clicks(clicks, grid):
    """Grid-cell identity: two clicks landing on the same cell with the same
    polarity collapse into one."""
    h, w = grid
    seen = set()
    out = []
    for u, v, pol in clicks:
        key = (rasterize_click(u, v, h, w), pol)
        if key not in seen:
            seen.add(key)
            out.append((u, v, pol))
    return out


def create_app(max_upload: int = None, ttl: float = None) -> FastAPI:
    max_upload = max_upload or int(os.environ.get(MAX_UPLOAD_ENV, DEFAULT_MAX_UPLOAD))
    ttl = ttl or float(os.environ.get(SESSION_TTL_ENV, DEFAULT_TTL))

    app = FastAPI(title="clickremoval")
    store = SessionStore(ttl)
    worker = RemovalWorker()
    app.state.store = store

    def not_found():
        return JSONResponse({"detail": "unknown session id"}, status_code=404)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "presets": list(PRESET_NAMES)}

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.body()
        if len(body) > max_upload:
            return JSONResponse({"detail": "upload too large"}, status_code=413)
        content_type = request.headers.get("content-type", "")
        data = body
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("image") or form.get("file")
            if upload is None:
                return JSONResponse({"detail": "missing image field"}, status_code=415)
            data = await upload.read()
            if len(data) > max_upload:
                return JSONResponse({"detail": "upload too large"}, status_code=413)
        try:
            img = Image.open(io.BytesIO(data))
            img.load()
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        except Exception:
            return JSONResponse({"detail": "not a decodable PNG/JPEG image"},
                                status_code=415)
        session = store.create(arr)
        return JSONResponse({"session_id": session.id}, status_code=201)

    @app.post("/sessions/{sid}/clicks")
    async def add_clicks(sid: str, request: Request):
        session = store.get(sid)
        if session is None:
            return not_found()
        if session.status == RUNNING:
            return JSONResponse({"detail": "removal in progress"}, status_code=409)
        try:
            payload = await request.json()
        except Exception:
            return JSONResponse({"detail": "malformed JSON"}, status_code=422)
        if isinstance(payload, dict) and "clicks" in payload:
            raw = payload["clicks"]
        elif isinstance(payload, list):
            raw = payload
        else:
            raw = [payload]
        try:
            parsed = [ClickIn.model_validate(c) for c in raw]
        except Exception as exc:
            return JSONResponse({"detail": f"malformed clicks: {exc}"}, status_code=422)
        session.clicks.extend((c.u, c.v, c.polarity) for c in parsed)
        grid = load_descriptor(session.preset).layer(
            load_descriptor(session.preset).map_extraction_layers[0]).resolution
        session.clicks = _dedupe_clicks(session.clicks, grid)
        session.updated = time.time()
        return {"clicks": [{"u": u, "v": v, "polarity": p} for u, v, p in session.clicks],
                "count": len(session.clicks)}

    @app.post("/sessions/{sid}/remove")
    def start_removal(sid: str, params: RemovalParams):
        session = store.get(sid)
        if session is None:
            return not_found()
        if session.status == RUNNING:
            return JSONResponse({"detail": "a removal job is already running"},
                                status_code=409)
        if params.preset not in PRESET_NAMES:
            return JSONResponse({"detail": f"unknown preset {params.preset!r}"},
                                status_code=422)
        clicks = session.click_set()
        if not clicks.positives:
            return JSONResponse({"detail": "no positive clicks"}, status_code=412)

        descriptor = load_descriptor(params.preset)
        steps = params.steps or descriptor.default_steps
        try:
            schedule = GuidanceSchedule(total_steps=steps, r=params.r)
            cfg = PropagationConfig(tau=params.tau, n_max=params.n_max)
        except ValueError as exc:
            return JSONResponse({"detail": str(exc)}, status_code=422)

        session.preset = params.preset
        session.status = RUNNING
        session.progress = {"stage": None, "step": 0, "total": steps}
        session.updated = time.time()

        req = RemovalRequest(image=session.image, clicks=clicks, schedule=schedule,
                             propagation=cfg, preset=params.preset, seed=params.seed)

        def job():
            def on_progress(stage, step, total):
                session.progress = {"stage": stage, "step": step, "total": total}
                session.updated = time.time()
            try:
                session.result = remove_object(req, progress=on_progress)
                session.status = DONE
            except Exception as exc:
                session.error = str(exc)
                session.status = FAILED
            session.updated = time.time()

        worker.submit(job)
        return JSONResponse({"status": "accepted"}, status_code=202)

    @app.get("/sessions/{sid}/result")
    def get_result(sid: str, request: Request):
        session = store.get(sid)
        if session is None:
            return not_found()
        if session.status == RUNNING:
            return {"status": RUNNING, "progress": session.progress}
        if session.status == FAILED:
            return {"status": FAILED, "detail": session.error}
        if session.status == IDLE or session.result is None:
            return {"status": IDLE}
        result = session.result
        image_png = _png_bytes(result.image)
        if "image/png" in request.headers.get("accept", ""):
            return Response(content=image_png, media_type="image/png")
        return {
            "status": DONE,
            "image": base64.b64encode(image_png).decode("ascii"),
            "m_ob": base64.b64encode(_png_bytes(result.m_ob_image.astype(np.float64))).decode("ascii"),
            "step_log": result.step_log,
            "duration": result.duration,
            "flags": list(result.flags),
        }

    @app.delete("/sessions/{sid}")
    def delete_session(sid: str):
        if not store.delete(sid):
            return not_found()
        return Response(status_code=204)

    return app


app = create_app()


def main():
    import uvicorn
    bind = os.environ.get(BIND_ENV, "127.0.0.1:8000")
    host, _, port = bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))


if __name__ == "__main__":
    main()
