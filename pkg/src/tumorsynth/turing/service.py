"""HTTP service for the visual discrimination test.

JSON endpoints for session lifecycle plus PNG slice rendering; optionally
hosts the browser client as a static bundle at the site root.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .render import render_slice, slice_png
from .session import (DEFAULT_REAL_RATIO, DEFAULT_TRIALS, ProtocolError,
                      SessionStore, next_trial, score)


class CreateSessionRequest(BaseModel):
    n_trials: int = Field(default=DEFAULT_TRIALS, ge=1)
    ratio: float = Field(default=DEFAULT_REAL_RATIO, ge=0.0, le=1.0)
    seed: Optional[int] = None
    level_hu: float = 40.0
    width_hu: float = Field(default=400.0, gt=0.0)


class AnswerRequest(BaseModel):
    trial_index: int = Field(ge=0)
    verdict: str


def _http_error(exc: ProtocolError) -> HTTPException:
    message = str(exc)
    if message.startswith("unknown"):
        return HTTPException(status_code=404, detail=message)
    if "complete" in message or "remaining" in message or "active" in message:
        return HTTPException(status_code=409, detail=message)
    return HTTPException(status_code=400, detail=message)


def create_app(store: SessionStore, static_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="tumorsynth visual test")
    lock = threading.Lock()

    @app.post("/sessions")
    def create_session_endpoint(req: CreateSessionRequest):
        with lock:
            try:
                session = store.create(n_trials=req.n_trials, ratio=req.ratio,
                                       seed=req.seed, level_hu=req.level_hu,
                                       width_hu=req.width_hu)
            except ProtocolError as exc:
                raise _http_error(exc) from exc
        return {"session_id": session.session_id, "n_trials": session.n_trials,
                "state": session.state}

    @app.get("/sessions/{session_id}/trial")
    def get_trial(session_id: str):
        with lock:
            try:
                session = store.get(session_id)
                payload = next_trial(session)
            except ProtocolError as exc:
                raise _http_error(exc) from exc
        payload["image_url"] = f"/images/{payload.pop('image_token')}"
        payload["session_id"] = session_id
        return payload

    @app.post("/sessions/{session_id}/answers")
    def post_answer(session_id: str, req: AnswerRequest):
        with lock:
            try:
                return store.answer(session_id, req.trial_index, req.verdict)
            except ProtocolError as exc:
                raise _http_error(exc) from exc

    @app.get("/sessions/{session_id}/score")
    def get_score(session_id: str, partial: bool = False):
        with lock:
            try:
                return score(store.get(session_id), allow_partial=partial)
            except ProtocolError as exc:
                raise _http_error(exc) from exc

    @app.get("/images/{token}")
    def get_image(token: str):
        with lock:
            try:
                session, trial = store.resolve_token(token)
            except ProtocolError as exc:
                raise _http_error(exc) from exc
            pool = (store.real_pool if trial.truth == "real"
                    else store.synthetic_pool)
            volume = pool.image(trial.case_id)
        render = render_slice(volume, trial.axis, trial.slice_index,
                              session.level_hu, session.width_hu)
        return Response(content=slice_png(render), media_type="image/png")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")
    return app
