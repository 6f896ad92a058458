"""HTTP surface for reviewing a run: parts, selection, removal, relinking.

One session, one shape. Mutating requests serialize on the session lock;
a relink that finds the lock busy reports conflict instead of queueing, so
the client can keep exactly one mutation in flight. Reads serve the live
state, including the staleness flag the UI surfaces as a banner.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .pipeline import (
    SelectionValidationError,
    SessionState,
    _jsonable,
    parts_payload,
    selection_payload,
    skeleton_payload,
)


class SelectionBody(BaseModel):
    ids: list[int]


class RemoveBody(BaseModel):
    id: int


def make_app(session: SessionState, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="part review")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.get("/parts")
    def get_parts():
        with session.lock:
            return _jsonable(parts_payload(session))

    @app.get("/selection")
    def get_selection():
        with session.lock:
            return _jsonable(selection_payload(session))

    @app.post("/selection")
    def post_selection(body: SelectionBody):
        with session.lock:
            try:
                session.set_selection(body.ids)
            except SelectionValidationError as err:
                raise HTTPException(status_code=422,
                                    detail={"unknown": err.unknown, "removed": err.removed})
            return {"ok": True, "selection_stale": session.skeleton_stale,
                    "chosen_ids": sorted(session.selection_ids)}

    @app.post("/remove")
    def post_remove(body: RemoveBody):
        with session.lock:
            try:
                session.remove_part(body.id)
            except KeyError:
                raise HTTPException(status_code=404, detail={"unknown": [body.id]})
            return {"ok": True, "selection_stale": session.skeleton_stale,
                    "removed_ids": sorted(session.removed_ids)}

    @app.post("/relink")
    def post_relink():
        if not session.lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="relink already in progress")
        try:
            session.relink()
            return _jsonable(skeleton_payload(session))
        finally:
            session.lock.release()

    @app.get("/skeleton")
    def get_skeleton():
        with session.lock:
            if session.skeleton is None:
                raise HTTPException(status_code=404, detail="no skeleton linked yet")
            return _jsonable(skeleton_payload(session))

    @app.get("/cloud")
    def get_cloud():
        with session.lock:
            idx = session.cloud_sample()
            return _jsonable({
                "schema": "cloud/1",
                "n_points_full": len(session.cloud),
                "indices": idx,
                "positions": session.cloud.positions[idx],
            })

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(session: SessionState, port: int = 8787, host: str = "127.0.0.1",
          static_dir: str | None = None) -> None:
    import uvicorn

    uvicorn.run(make_app(session, static_dir), host=host, port=port)
