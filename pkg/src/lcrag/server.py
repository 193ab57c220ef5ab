"""HTTP wire API for the Copa session service."""

from __future__ import annotations

import json

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .copa import CopaService
from .errors import (
    AgentUnavailable,
    FormatError,
    InvalidInput,
    LcragError,
    NotFound,
)
from .seglog import model_from_json

_STATUS = {
    NotFound: 404,
    InvalidInput: 400,
    FormatError: 400,
    AgentUnavailable: 503,
}


class CreateSessionBody(BaseModel):
    task_id: str
    student_model: dict | None = None


class ModelBody(BaseModel):
    model: dict


class MessageBody(BaseModel):
    speaker: str = "student"
    text: str


def create_app(service: CopaService) -> FastAPI:
    app = FastAPI(title="lcrag copa service")
    # the web client is served from a different origin in local use
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(LcragError)
    async def _lcrag_error(request, exc: LcragError):
        status = next(
            (code for cls, code in _STATUS.items() if isinstance(exc, cls)), 500)
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "message": str(exc)},
        )

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        student = (model_from_json(json.dumps(body.student_model))
                   if body.student_model is not None else None)
        session = service.create_session(body.task_id, student_model=student)
        return {"session_id": session.session_id}

    @app.post("/sessions/{session_id}/model", status_code=204)
    def update_model(session_id: str, body: ModelBody):
        model = model_from_json(json.dumps(body.model))
        service.update_model(session_id, model)
        return Response(status_code=204)

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        turn = service.post_message(session_id, body.speaker, body.text)
        return {
            "reply_text": turn.reply_text,
            "retrieved": turn.retrieved,
            "diagnosis": turn.diagnosis,
            "trace_id": turn.trace_id,
        }

    @app.get("/sessions/{session_id}/transcript")
    def get_transcript(session_id: str):
        return service.get_transcript(session_id)

    @app.get("/healthz")
    def healthz():
        return service.health()

    return app
