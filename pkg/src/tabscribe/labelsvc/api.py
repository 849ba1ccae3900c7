"""HTTP interface over the labeling queue (FastAPI).

Serves tasks, accepts submissions, exposes cell images and queue stats, and
optionally hosts the static labeler front-end bundle.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Query, Response
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..domain import ColumnSchema, read_manifest
from .queue import LabelQueue, StaleLease, ValidationFailed


class SubmitBody(BaseModel):
    labeler: str
    value: Optional[str] = None
    rejections: Optional[list[str]] = None


class CreateQueueBody(BaseModel):
    kind: str
    source: str  # manifest path (label kind) or prediction export (verify kinds)
    r: int = 1
    images: Optional[str] = None  # image root for prediction sources


def create_app(
    queue: LabelQueue,
    image_root: Optional[str | Path] = None,
    static_dir: Optional[str | Path] = None,
) -> FastAPI:
    app = FastAPI(title="tabscribe labeling service")
    image_root_path = Path(image_root) if image_root else None

    @app.get("/tasks/next")
    def next_task(labeler: str = Query(...)):
        task = queue.next_task(labeler)
        if task is None:
            return Response(status_code=204)
        return task.to_record()

    @app.post("/tasks/{task_id}/submit")
    def submit(task_id: str, body: SubmitBody):
        try:
            queue.submit(task_id, body.labeler, value=body.value, rejections=body.rejections)
        except StaleLease as e:
            return JSONResponse(status_code=409, content={"detail": str(e)})
        except ValidationFailed as e:
            return JSONResponse(status_code=400, content={"detail": str(e)})
        return {"status": "ok"}

    @app.get("/cells/{cell_id}/image")
    def cell_image(cell_id: str):
        rel = queue.images.get(cell_id)
        if rel is None:
            return JSONResponse(status_code=404, content={"detail": f"no image for {cell_id}"})
        path = Path(rel)
        if not path.is_absolute() and image_root_path is not None:
            path = image_root_path / path
        if not path.exists():
            return JSONResponse(status_code=404, content={"detail": f"missing file {path}"})
        return FileResponse(path, media_type="image/png")

    @app.get("/queue/stats")
    def stats():
        return queue.stats()

    @app.get("/schema")
    def schema():
        s = queue.schema
        return {
            "name": s.name,
            "digit_count": s.digit_count,
            "valid_codes": sorted(s.valid_codes) if s.valid_codes is not None else None,
            "allows_blank": s.allows_blank,
            "allows_text": s.allows_text,
        }

    @app.post("/queues")
    def create_queue(body: CreateQueueBody):
        source = Path(body.source)
        if not source.exists():
            return JSONResponse(status_code=400, content={"detail": f"missing source {source}"})
        if body.kind == "label":
            manifest = read_manifest(source, queue.schema)
            cells = [(str(e.cell_id), str((source.parent / e.image))) for e in manifest.entries]
            created = queue.enqueue_cells(cells, kind="label", r=body.r)
        else:
            from ..models import read_predictions

            preds = read_predictions(source)
            root = Path(body.images) if body.images else source.parent
            images = {str(p.cell_id): str(root / f"{p.cell_id}.png") for p in preds}
            created = queue.enqueue_predictions(preds, images, kind=body.kind, r=body.r)
        return {"created": created}

    if static_dir is not None and Path(static_dir).exists():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def schema_for_service(name: str) -> ColumnSchema:
    from ..domain import PRESET_SCHEMAS

    return PRESET_SCHEMAS[name]
