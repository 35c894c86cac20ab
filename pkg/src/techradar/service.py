"""HTTP labeling service: the API behind the annotation frontend.

Mutations are acknowledged only after the label store has fsync'd the
event, so a crash right after a 2xx can never lose work. The service is
localhost-first and unauthenticated by default; set a static token to
require an X-Auth-Token header.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .classifier import INITIAL_LABELS
from .labeling import (
    InvalidLabel, LabelStore, TaskAlreadyDone, UnknownAnnotator, UnknownTask,
)

API_VERSION = "1"


class TaskOut(BaseModel):
    point_id: str
    keyword: str
    paragraph: str
    page_url: str
    round: int
    char_offset: int
    annotator: str
    position: int
    total: int


class NextTaskResponse(BaseModel):
    done: bool
    task: Optional[TaskOut] = None
    tally: dict[str, int] = Field(default_factory=dict)


class LabelIn(BaseModel):
    label: str
    flag_keyword: bool = False


class AckResponse(BaseModel):
    ok: bool
    point_id: str
    status: str


class ProgressResponse(BaseModel):
    total: dict[str, int]
    per_annotator: dict[str, dict[str, int]]
    labels: dict[str, int]
    rounds: dict[str, dict]


class FlagsResponse(BaseModel):
    flags: dict[str, int]


class MetaResponse(BaseModel):
    api_version: str
    initial_labels: list[str]


def create_app(
    store: LabelStore,
    static_dir: str | Path | None = None,
    token: str = "",
) -> FastAPI:
    app = FastAPI(title="techradar label service", version=API_VERSION)

    def check_token(x_auth_token: Optional[str] = Header(default=None)) -> None:
        if token and x_auth_token != token:
            raise HTTPException(status_code=401, detail="missing or wrong token")

    guard = Depends(check_token)

    @app.get("/api/meta", response_model=MetaResponse)
    def meta() -> MetaResponse:
        return MetaResponse(api_version=API_VERSION, initial_labels=list(INITIAL_LABELS))

    @app.get("/api/tasks/next", response_model=NextTaskResponse, dependencies=[guard])
    def next_task(annotator: str = Query(...)) -> NextTaskResponse:
        try:
            task = store.next_task(annotator)
        except UnknownAnnotator:
            raise HTTPException(status_code=404, detail=f"unknown annotator {annotator!r}")
        if task is None:
            tally = store.progress()["labels"]
            return NextTaskResponse(done=True, tally=tally)
        position, total = store.annotator_queue_size(annotator)
        return NextTaskResponse(
            done=False,
            task=TaskOut(
                point_id=task.point_id,
                keyword=task.keyword,
                paragraph=task.paragraph,
                page_url=task.page_url,
                round=task.round,
                char_offset=task.char_offset,
                annotator=annotator,
                position=position,
                total=total,
            ),
        )

    @app.post("/api/tasks/{point_id}/label", response_model=AckResponse, dependencies=[guard])
    def submit_label(point_id: str, body: LabelIn, annotator: str = Query(default="")) -> AckResponse:
        try:
            task = store.submit_label(point_id, annotator, body.label, body.flag_keyword)
        except InvalidLabel as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except UnknownTask:
            raise HTTPException(status_code=404, detail=f"unknown task {point_id!r}")
        except TaskAlreadyDone as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return AckResponse(ok=True, point_id=point_id, status=task.status)

    @app.post("/api/tasks/{point_id}/skip", response_model=AckResponse, dependencies=[guard])
    def skip_task(point_id: str, annotator: str = Query(default="")) -> AckResponse:
        try:
            task = store.skip_task(point_id, annotator)
        except UnknownTask:
            raise HTTPException(status_code=404, detail=f"unknown task {point_id!r}")
        except TaskAlreadyDone as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return AckResponse(ok=True, point_id=point_id, status=task.status)

    @app.get("/api/progress", response_model=ProgressResponse, dependencies=[guard])
    def progress() -> ProgressResponse:
        return ProgressResponse(**store.progress())

    @app.get("/api/keywords/flags", response_model=FlagsResponse, dependencies=[guard])
    def keyword_flags() -> FlagsResponse:
        return FlagsResponse(flags=store.keyword_flags())

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
