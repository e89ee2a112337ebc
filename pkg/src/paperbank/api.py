"""The engine's external surface: HTTP resource routes plus the persistent
message channel for uploads and live progress.

No business logic lives here; every route delegates to a module operation and
maps DomainError codes onto HTTP statuses. All responses carry a request id
header and bodies over 1 KiB are compressed.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.middleware.gzip import GZipMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .config import AppConfig
from .engagement import EngagementService
from .errors import DomainError
from .events import EventBus, TERMINAL_STAGES
from .models import Question, ROLE_ADMIN
from .ocr import FixtureOcrProvider, RemoteOcrProvider
from .pipeline import JobRunner
from .store import Store
from .sync import SyncOp, SyncService
from .synthesis import LocalRuleBasedProvider, RemoteChatProvider
from .upload import UploadManager
from .util import utcnow

logger = logging.getLogger("paperbank.api")

_CONFLICT_CODES = {
    "flag-closed", "incomplete", "content-corrupt", "not-flaggable",
    "session-expired", "cursor-expired", "job-not-queued", "concept-cycle",
}


def status_for(code: str) -> int:
    if code == "forbidden":
        return 403
    if code.startswith("unknown-") or code in ("fixture-missing", "not-available"):
        return 404
    if code in _CONFLICT_CODES:
        return 409
    return 422


@dataclass
class Principal:
    token: str
    user_id: str
    role: str


class AuthTable:
    """Static bearer-token table; real identity providers are out of scope.
    With no table configured the API runs open as a dev admin."""

    def __init__(self, path: str = ""):
        self.tokens: dict[str, dict] = {}
        self.open_mode = not path
        if path:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            self.tokens = raw.get("tokens", raw)
        else:
            logger.warning("no auth tokens file configured; running in open dev mode")

    def lookup(self, token: Optional[str]) -> Optional[Principal]:
        if self.open_mode:
            return Principal(token or "", "usr_dev", ROLE_ADMIN)
        if token and token in self.tokens:
            entry = self.tokens[token]
            return Principal(token, entry["user_id"], entry["role"])
        return None


def principal_dep(request: Request) -> Principal:
    auth: AuthTable = request.app.state.auth
    header = request.headers.get("authorization", "")
    token = header[7:] if header.lower().startswith("bearer ") else None
    principal = auth.lookup(token)
    if principal is None:
        raise DomainError("unauthenticated", "missing or unknown bearer token")
    return principal


class ResponseBody(BaseModel):
    kind: str
    chosen_index: Optional[int] = None
    answers: Optional[list[dict]] = None
    self_correct: Optional[bool] = None


class FeedbackBody(BaseModel):
    rating: int
    comment: Optional[str] = None


class FlagBody(BaseModel):
    reason: str


class ResolveBody(BaseModel):
    outcome: str


class PushBody(BaseModel):
    ops: list[dict]


def question_payload(q: Question) -> dict:
    payload = {
        "id": q.id,
        "kind": q.kind,
        "stem": q.stem,
        "explanation": q.explanation,
        "state": q.state,
        "course_id": q.course_id,
        "past_paper_id": q.past_paper_id,
        "concept_ids": sorted(q.concept_ids),
        "confidence": q.provenance.confidence,
    }
    if q.choices:
        payload["choices"] = [
            {"index": c.index, "text": c.text, "is_correct": c.is_correct} for c in q.choices
        ]
    if q.parts:
        payload["parts"] = [
            {"index": p.index, "prompt": p.prompt, "expected_answer": p.expected_answer,
             "marks": p.marks}
            for p in q.parts
        ]
    return payload


def build_ocr_provider(config: AppConfig):
    if config.ocr_endpoint:
        return RemoteOcrProvider(config.ocr_endpoint, config.ocr_api_key)
    return FixtureOcrProvider(config.fixtures_dir)


def build_synth_provider(config: AppConfig):
    if config.synth_provider == "remote":
        return RemoteChatProvider(config.llm_endpoint, config.llm_api_key, config.llm_model,
                                  timeout=config.provider_timeout_seconds,
                                  max_response_bytes=config.max_provider_response_bytes)
    return LocalRuleBasedProvider()


def create_app(config: Optional[AppConfig] = None, store: Optional[Store] = None,
               ocr_provider=None, synth_provider=None, clock=utcnow) -> FastAPI:
    config = config or AppConfig()
    store = store or Store(config.database_url, clock=clock)
    bus = EventBus()
    engagement = EngagementService(store, clock=clock)
    sync_service = SyncService(store, engagement, clock=clock)
    runner = JobRunner(
        store, config,
        ocr_provider or build_ocr_provider(config),
        synth_provider or build_synth_provider(config),
        bus=bus, clock=clock,
    )
    uploads = UploadManager(
        config, bus=bus,
        resolve_course=lambda ref: (lambda c: c.id if c else None)(store.get_course(ref)),
        on_complete=lambda session, data: _store_and_submit(store, runner, session, data),
        clock=clock,
    )

    app = FastAPI(title="paperbank", version=__version__)
    app.add_middleware(GZipMiddleware, minimum_size=1024)
    app.state.config = config
    app.state.store = store
    app.state.bus = bus
    app.state.engagement = engagement
    app.state.sync = sync_service
    app.state.runner = runner
    app.state.uploads = uploads
    app.state.auth = AuthTable(config.auth_tokens_file)

    @app.middleware("http")
    async def add_request_id(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Request-Id"] = uuid.uuid4().hex
        return response

    @app.exception_handler(DomainError)
    async def domain_error_handler(request: Request, exc: DomainError):
        status = 401 if exc.code == "unauthenticated" else status_for(exc.code)
        return JSONResponse(status_code=status, content={"code": exc.code, "message": exc.message})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/courses")
    def courses(institution: Optional[str] = None,
                principal: Principal = Depends(principal_dep)):
        items = store.list_courses(institution)
        return {"items": [{"id": c.id, "code": c.code, "title": c.title} for c in items]}

    @app.get("/papers/{paper_id}/questions")
    def paper_questions(paper_id: str, page: int = 1, page_size: int = 20,
                        state: Optional[str] = None,
                        principal: Principal = Depends(principal_dep)):
        result = store.query_questions(
            role=principal.role, paper=paper_id, state=state, page=page, page_size=page_size
        )
        return {
            "items": [question_payload(q) for q in result["items"]],
            "total": result["total"],
            "page": result["page"],
            "page_size": result["page_size"],
        }

    @app.post("/questions/{question_id}/responses")
    def post_response(question_id: str, body: ResponseBody,
                      principal: Principal = Depends(principal_dep)):
        if body.kind == "mcq":
            if body.chosen_index is None:
                raise DomainError("bad-choice", "mcq responses need chosen_index")
            return engagement.record_mcq_response(principal.user_id, question_id, body.chosen_index)
        if body.kind == "saq":
            return engagement.record_saq_response(
                principal.user_id, question_id, body.answers or [],
                bool(body.self_correct),
            )
        raise DomainError("bad-kind", "kind must be mcq or saq")

    @app.post("/questions/{question_id}/feedback")
    def post_feedback(question_id: str, body: FeedbackBody,
                      principal: Principal = Depends(principal_dep)):
        return engagement.record_feedback(principal.user_id, question_id, body.rating, body.comment)

    @app.post("/questions/{question_id}/flags")
    def post_flag(question_id: str, body: FlagBody,
                  principal: Principal = Depends(principal_dep)):
        flag = engagement.flag_question(principal.user_id, question_id, body.reason)
        return {"id": flag.id, "question_id": flag.question_id, "state": flag.state, "at": flag.at}

    @app.get("/flags")
    def list_flags(state: Optional[str] = None,
                   principal: Principal = Depends(principal_dep)):
        if principal.role not in ("faculty", "admin"):
            raise DomainError("forbidden", "only faculty or admin may list flags")
        flags = engagement.list_flags(state)
        return {"items": [vars(f) for f in flags]}

    @app.post("/flags/{flag_id}/resolve")
    def resolve_flag(flag_id: str, body: ResolveBody,
                     principal: Principal = Depends(principal_dep)):
        new_state = engagement.resolve_flag(principal.user_id, flag_id, body.outcome)
        return {"question_state": new_state}

    @app.get("/analytics/dau")
    def analytics_dau(frm: str = Query(alias="from"), to: str = Query(),
                      baseline_from: Optional[str] = None, baseline_to: Optional[str] = None,
                      principal: Principal = Depends(principal_dep)):
        return engagement.daily_active_users(frm, to, baseline_from, baseline_to)

    @app.get("/analytics/processing")
    def analytics_processing(frm: Optional[str] = Query(default=None, alias="from"),
                             to: Optional[str] = None,
                             principal: Principal = Depends(principal_dep)):
        return engagement.processing_time_stats(frm, to)

    @app.get("/analytics/satisfaction")
    def analytics_satisfaction(frm: Optional[str] = Query(default=None, alias="from"),
                               to: Optional[str] = None,
                               principal: Principal = Depends(principal_dep)):
        return engagement.satisfaction_summary(frm, to)

    @app.post("/sync/push")
    def sync_push(body: PushBody, principal: Principal = Depends(principal_dep)):
        ops = [SyncOp.from_dict(raw) for raw in body.ops]
        return {"results": sync_service.push(ops, principal.user_id)}

    @app.get("/sync/pull")
    def sync_pull(cursor: Optional[int] = None,
                  principal: Principal = Depends(principal_dep)):
        changeset = sync_service.pull(cursor)
        return {
            "cursor": changeset.cursor,
            "upserted_questions": changeset.upserted_questions,
            "retired_question_ids": changeset.retired_question_ids,
        }

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str, principal: Principal = Depends(principal_dep)):
        return runner.job_status(job_id)

    @app.websocket("/ws")
    async def channel(ws: WebSocket):
        auth: AuthTable = app.state.auth
        principal = auth.lookup(ws.query_params.get("token"))
        if principal is None:
            await ws.close(code=4401)
            return
        await ws.accept()
        handler = ChannelHandler(ws, uploads, runner, bus)
        try:
            await handler.run()
        except WebSocketDisconnect:
            pass
        finally:
            handler.cleanup()

    return app


def _store_and_submit(store: Store, runner: JobRunner, session, data: bytes) -> tuple[str, str]:
    document_id = store.put_document(
        data, session.filename, _content_type_for(session.filename), session.declared_hash
    )
    job_id = runner.submit_job(
        document_id, session.course_id,
        {"title": session.paper_meta.get("title", session.filename),
         "year": session.paper_meta.get("year", utcnow().year)},
    )
    return document_id, job_id


def _content_type_for(filename: str) -> str:
    lowered = filename.lower()
    if lowered.endswith(".pdf"):
        return "application/pdf"
    if lowered.endswith(".txt"):
        return "text/plain"
    return "application/pdf"


class ChannelHandler:
    """One connected channel: upload control frames in, acks and progress out.

    Chunk payloads arrive either as base64 inside the control frame or as the
    next binary frame prefixed with a 4-byte big-endian chunk index; presence
    of the `data` field selects the mode per message.
    """

    def __init__(self, ws: WebSocket, uploads: UploadManager, runner: JobRunner, bus: EventBus):
        self.ws = ws
        self.uploads = uploads
        self.runner = runner
        self.bus = bus
        self.queue: asyncio.Queue = asyncio.Queue()
        self.loop = asyncio.get_event_loop()
        self.unsubscribes: list = []
        self.pending_chunk: Optional[dict] = None
        self.active_job: Optional[str] = None

    def cleanup(self):
        for unsub in self.unsubscribes:
            unsub()
        self.unsubscribes.clear()

    def _forward(self, event):
        frame = {"type": "progress", "id": event.target_id, "stage": event.stage,
                 "percent": event.percent, "log": event.log, "ts": event.at}
        self.loop.call_soon_threadsafe(self.queue.put_nowait, frame)

    async def _drain(self):
        while not self.queue.empty():
            await self.ws.send_text(json.dumps(self.queue.get_nowait()))

    async def _error(self, code: str, message: str):
        await self.ws.send_text(json.dumps({"type": "error", "code": code, "message": message}))

    async def run(self):
        while True:
            message = await self.ws.receive()
            if message.get("type") == "websocket.disconnect":
                return
            try:
                if "bytes" in message and message["bytes"] is not None:
                    await self._handle_binary(message["bytes"])
                elif message.get("text"):
                    await self._handle_control(json.loads(message["text"]))
            except DomainError as exc:
                await self._error(exc.code, exc.message)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                await self._error("protocol-violation", str(exc))
            await self._drain()
            if self.active_job:
                await self._stream_job(self.active_job)
                self.active_job = None

    async def _handle_control(self, frame: dict):
        kind = frame.get("type")
        if kind == "upload.init":
            session = self.uploads.init_upload(
                filename=frame["filename"],
                declared_size=int(frame["size"]),
                declared_hash=frame["sha256"],
                course_id=frame["course_id"],
                paper_meta=frame.get("paper") or {},
            )
            self.unsubscribes.append(self.bus.subscribe(session.session_id, self._forward))
            await self.ws.send_text(json.dumps({
                "type": "ack", "for": "upload.init",
                "session_id": session.session_id,
                "chunk_size": session.chunk_size,
                "total_chunks": session.total_chunks,
            }))
        elif kind == "upload.chunk":
            if "data" in frame and frame["data"] is not None:
                payload = base64.b64decode(frame["data"])
                status = self.uploads.append_chunk(
                    frame["session_id"], int(frame["index"]), payload, frame["sha256"]
                )
                await self._ack_chunk(int(frame["index"]), status)
            else:
                self.pending_chunk = {
                    "session_id": frame["session_id"],
                    "index": int(frame["index"]),
                    "sha256": frame["sha256"],
                }
        elif kind == "upload.resume":
            session_id = frame["session_id"]
            missing = self.uploads.resume_upload(session_id)
            self.unsubscribes.append(self.bus.subscribe(session_id, self._forward))
            await self.ws.send_text(json.dumps({
                "type": "ack", "for": "upload.resume", "session_id": session_id,
                "missing": missing,
            }))
        elif kind == "upload.complete":
            result = self.uploads.complete_upload(frame["session_id"])
            job_id = result["job_id"]
            self.unsubscribes.append(self.bus.subscribe(job_id, self._forward))
            await self.ws.send_text(json.dumps({
                "type": "ack", "for": "upload.complete",
                "document_id": result["document_id"], "job_id": job_id,
            }))
            # Replay events persisted before the subscription, then go live.
            status = self.runner.job_status(job_id)
            for event in status["events"]:
                await self.ws.send_text(json.dumps({
                    "type": "progress", "id": job_id, "stage": event["stage"],
                    "percent": event["percent"], "log": event["log"], "ts": event["ts"],
                }))
            if status["state"] in ("done", "failed"):
                # Re-completed after a reconnect: the job already ran.
                await self._send_terminal(job_id)
            else:
                self.runner.start_async(job_id)
                self.active_job = job_id
        else:
            await self._error("protocol-violation", f"unknown frame type {kind!r}")

    async def _handle_binary(self, data: bytes):
        if self.pending_chunk is None:
            raise DomainError("protocol-violation", "binary frame without a pending chunk header")
        pending, self.pending_chunk = self.pending_chunk, None
        if len(data) < 4:
            raise DomainError("protocol-violation", "binary frame too short for index prefix")
        index = int.from_bytes(data[:4], "big")
        if index != pending["index"]:
            raise DomainError("protocol-violation",
                              f"binary frame index {index} does not match header {pending['index']}")
        status = self.uploads.append_chunk(
            pending["session_id"], index, data[4:], pending["sha256"]
        )
        await self._ack_chunk(index, status)

    async def _ack_chunk(self, index: int, status: str):
        await self.ws.send_text(json.dumps({
            "type": "ack", "for": "upload.chunk", "index": index, "status": status,
        }))

    async def _stream_job(self, job_id: str):
        while True:
            frame = await self.queue.get()
            await self.ws.send_text(json.dumps(frame))
            if frame.get("id") == job_id and frame.get("stage") in TERMINAL_STAGES:
                break
        await self._send_terminal(job_id)

    async def _send_terminal(self, job_id: str):
        status = self.runner.job_status(job_id)
        if status["state"] == "done":
            await self.ws.send_text(json.dumps({
                "type": "result", "job_id": job_id,
                "paper_id": status["result"]["past_paper_id"],
                "question_count": status["result"]["accepted_count"],
            }))
        else:
            failure = status["failure"] or {}
            await self._error(failure.get("error_code", "internal-error"),
                              failure.get("message", "pipeline failed"))
