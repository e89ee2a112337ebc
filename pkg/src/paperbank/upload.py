"""Resumable chunked upload sessions with live progress events.

Chunks may arrive out of order and any number of times; a per-session bitmap
makes delivery order irrelevant and re-delivery a no-op. Sessions survive
connection drops (they are keyed by id, not by connection) and expire after
an idle timeout so a student on intermittent power can resume the next day.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from .config import AppConfig
from .errors import DomainError
from .events import EventBus, ProgressEvent, STAGE_UPLOADING
from .util import Clock, new_id, rfc3339, sha256_hex, utcnow

STATE_OPEN = "open"
STATE_COMPLETE = "complete"
STATE_ABORTED = "aborted"
STATE_EXPIRED = "expired"


def chunk_count(declared_size: int, chunk_size: int) -> int:
    return -(-declared_size // chunk_size)


@dataclass
class UploadSession:
    session_id: str
    filename: str
    declared_size: int
    chunk_size: int
    total_chunks: int
    declared_hash: str
    course_id: str
    paper_meta: dict
    created_at: str
    state: str = STATE_OPEN
    received: set[int] = field(default_factory=set)
    chunks: dict[int, bytes] = field(default_factory=dict)
    last_activity: float = 0.0
    result: Optional[dict] = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def expected_length(self, index: int) -> int:
        if index < self.total_chunks - 1:
            return self.chunk_size
        return self.declared_size - self.chunk_size * (self.total_chunks - 1)

    def percent(self) -> float:
        return 100.0 * len(self.received) / self.total_chunks


class UploadManager:
    """Owns every live session. `on_complete` receives the assembled document
    and returns (document_id, job_id); the pipeline plugs in there."""

    def __init__(self, config: AppConfig, bus: Optional[EventBus] = None,
                 resolve_course: Optional[Callable[[str], Optional[str]]] = None,
                 on_complete: Optional[Callable[[UploadSession, bytes], tuple[str, str]]] = None,
                 clock: Clock = utcnow):
        self.config = config
        self.bus = bus or EventBus()
        self.resolve_course = resolve_course
        self.on_complete = on_complete
        self.clock = clock
        self._sessions: dict[str, UploadSession] = {}
        self._lock = threading.Lock()

    def _get(self, session_id: str) -> UploadSession:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise DomainError("unknown-session", f"no upload session {session_id}")
        if session.state == STATE_OPEN:
            idle = self.clock().timestamp() - session.last_activity
            if idle > self.config.session_idle_seconds:
                session.state = STATE_EXPIRED
        if session.state == STATE_EXPIRED:
            raise DomainError("session-expired", "upload session expired, re-init required")
        return session

    def init_upload(self, filename: str, declared_size: int, declared_hash: str,
                    course_id: str, paper_meta: Optional[dict] = None) -> UploadSession:
        if declared_size <= 0:
            raise DomainError("empty-document", "declared size must be positive")
        if declared_size > self.config.max_upload_bytes:
            raise DomainError("too-large",
                              f"declared size exceeds cap of {self.config.max_upload_bytes} bytes")
        resolved = self.resolve_course(course_id) if self.resolve_course else course_id
        if resolved is None:
            raise DomainError("unknown-course", f"no course {course_id}")
        chunk_size = self.config.effective_chunk_size()
        session = UploadSession(
            session_id=new_id("ses"),
            filename=filename,
            declared_size=declared_size,
            chunk_size=chunk_size,
            total_chunks=chunk_count(declared_size, chunk_size),
            declared_hash=declared_hash.lower(),
            course_id=resolved,
            paper_meta=paper_meta or {},
            created_at=rfc3339(self.clock()),
            last_activity=self.clock().timestamp(),
        )
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def append_chunk(self, session_id: str, index: int, payload: bytes, chunk_hash: str) -> str:
        session = self._get(session_id)
        if not (0 <= index < session.total_chunks):
            raise DomainError("bad-index", f"chunk index {index} out of range")
        if len(payload) != session.expected_length(index):
            raise DomainError(
                "bad-length",
                f"chunk {index} must be {session.expected_length(index)} bytes, got {len(payload)}",
            )
        if sha256_hex(payload) != chunk_hash.lower():
            raise DomainError("chunk-corrupt", f"chunk {index} hash mismatch")
        with session.lock:
            session.last_activity = self.clock().timestamp()
            if index in session.received:
                return "duplicate"
            session.received.add(index)
            session.chunks[index] = payload
            event = ProgressEvent(
                target_id=session.session_id,
                stage=STAGE_UPLOADING,
                percent=session.percent(),
                log=f"received chunk {index + 1}/{session.total_chunks}",
                at=rfc3339(self.clock()),
            )
            # Published under the session lock so percents stream in order.
            self.bus.publish(event)
        return "accepted"

    def resume_upload(self, session_id: str) -> list[int]:
        session = self._get(session_id)
        with session.lock:
            session.last_activity = self.clock().timestamp()
            return sorted(set(range(session.total_chunks)) - session.received)

    def complete_upload(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            if session.state == STATE_COMPLETE and session.result is not None:
                return session.result
            if len(session.received) != session.total_chunks:
                missing = session.total_chunks - len(session.received)
                raise DomainError("incomplete", f"{missing} chunks still missing")
            data = b"".join(session.chunks[i] for i in range(session.total_chunks))
            if sha256_hex(data) != session.declared_hash:
                session.state = STATE_ABORTED
                session.chunks.clear()
                session.received.clear()
                raise DomainError("content-corrupt", "assembled content does not match declared hash")
            if self.on_complete is None:
                raise DomainError("internal-error", "no completion handler wired")
            document_id, job_id = self.on_complete(session, data)
            session.state = STATE_COMPLETE
            session.chunks.clear()
            session.result = {"document_id": document_id, "job_id": job_id}
            return session.result

    def drop_expired(self) -> int:
        """Housekeeping: forget sessions idle past the expiry window."""
        now = self.clock().timestamp()
        dropped = 0
        with self._lock:
            for sid in list(self._sessions):
                session = self._sessions[sid]
                if session.state == STATE_OPEN and \
                        now - session.last_activity > self.config.session_idle_seconds:
                    session.state = STATE_EXPIRED
                if session.state in (STATE_EXPIRED, STATE_ABORTED):
                    del self._sessions[sid]
                    dropped += 1
        return dropped
