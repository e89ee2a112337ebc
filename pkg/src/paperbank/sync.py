"""Offline-first sync: replayable client mutations and a pull cursor.

Engagement ops are append-only and commutative, so conflict handling reduces
to idempotency keys: each op carries a client-generated globally unique id,
and a previously seen id is acknowledged as a duplicate with no effect.
Content flows one way (server to client) through changesets ordered by a
strictly increasing change sequence persisted with every content mutation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .engagement import EngagementService
from .errors import DomainError
from .models import STATE_PUBLISHED
from .store import Store
from .util import Clock, rfc3339, utcnow

OP_KINDS = ("mcq-response", "saq-response", "feedback")

APPLIED = "applied"
DUPLICATE = "duplicate"
REJECTED = "rejected"


@dataclass
class SyncOp:
    op_id: str
    kind: str
    payload: dict
    client_clock: str
    user_id: str

    @classmethod
    def from_dict(cls, raw: dict) -> "SyncOp":
        return cls(
            op_id=str(raw.get("op_id", "")),
            kind=str(raw.get("kind", "")),
            payload=raw.get("payload") if isinstance(raw.get("payload"), dict) else {},
            client_clock=str(raw.get("client_clock", "")),
            user_id=str(raw.get("user_id", "")),
        )


@dataclass
class Changeset:
    cursor: int
    upserted_questions: list[dict] = field(default_factory=list)
    retired_question_ids: list[str] = field(default_factory=list)


class SyncService:
    def __init__(self, store: Store, engagement: EngagementService, clock: Clock = utcnow):
        self.store = store
        self.engagement = engagement
        self.clock = clock

    def push(self, ops: list[SyncOp], authenticated_user: str) -> list[dict]:
        """Apply ops in order; every op gets its own verdict and a bad op never
        blocks its neighbors."""
        results = []
        for op in ops:
            results.append(self._apply_one(op, authenticated_user))
        return results

    def _apply_one(self, op: SyncOp, authenticated_user: str) -> dict:
        if not op.op_id:
            return {"op_id": op.op_id, "status": REJECTED, "reason": "bad-op-id"}
        seen = self.store.query_one("SELECT status FROM sync_ops WHERE op_id = ?", (op.op_id,))
        if seen is not None:
            return {"op_id": op.op_id, "status": DUPLICATE}
        server_at = rfc3339(self.clock())
        status, reason = APPLIED, None
        if op.user_id != authenticated_user:
            status, reason = REJECTED, "forbidden"
        elif op.kind not in OP_KINDS:
            status, reason = REJECTED, "bad-kind"
        else:
            try:
                self._dispatch(op, server_at)
            except DomainError as exc:
                status, reason = REJECTED, exc.code
        self.store.execute(
            "INSERT INTO sync_ops(op_id, user_id, kind, payload, client_clock, server_at, "
            "status, reason) VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
            (op.op_id, op.user_id, op.kind, json.dumps(op.payload), op.client_clock,
             server_at, status, reason),
        )
        result = {"op_id": op.op_id, "status": status}
        if reason:
            result["reason"] = reason
        return result

    def _dispatch(self, op: SyncOp, server_at: str) -> None:
        payload = op.payload
        question_id = payload.get("question_id")
        if not question_id:
            raise DomainError("bad-payload", "op payload needs a question_id")
        if op.kind == "mcq-response":
            if not isinstance(payload.get("chosen_index"), int):
                raise DomainError("bad-payload", "mcq-response needs an integer chosen_index")
            self.engagement.record_mcq_response(
                op.user_id, question_id, payload["chosen_index"],
                at=server_at, client_clock=op.client_clock,
            )
        elif op.kind == "saq-response":
            answers = payload.get("answers")
            if not isinstance(answers, list):
                raise DomainError("bad-payload", "saq-response needs an answers list")
            self.engagement.record_saq_response(
                op.user_id, question_id, answers, bool(payload.get("self_correct", False)),
                at=server_at,
            )
        else:
            rating = payload.get("rating")
            if not isinstance(rating, int):
                raise DomainError("bad-rating", "feedback needs an integer rating")
            self.engagement.record_feedback(
                op.user_id, question_id, rating, payload.get("comment"),
                at=server_at, client_clock=op.client_clock,
            )

    def pull(self, cursor: Optional[int] = None) -> Changeset:
        """Published-content changes after the cursor. No cursor means full
        sync; an expired or never-issued cursor forces the client to re-sync."""
        latest = self.store.current_change_seq()
        if cursor is None:
            rows = self.store.query(
                "SELECT * FROM questions WHERE state = ? ORDER BY change_seq", (STATE_PUBLISHED,)
            )
            return Changeset(
                cursor=latest,
                upserted_questions=[self._question_payload(r["id"]) for r in rows],
            )
        if cursor > latest or cursor < self.store.compaction_floor():
            raise DomainError("cursor-expired", "cursor unknown or compacted; full sync required")
        rows = self.store.query(
            "SELECT * FROM questions WHERE change_seq > ? ORDER BY change_seq", (cursor,)
        )
        changeset = Changeset(cursor=latest)
        for row in rows:
            if row["state"] == STATE_PUBLISHED:
                changeset.upserted_questions.append(self._question_payload(row["id"]))
            else:
                changeset.retired_question_ids.append(row["id"])
        return changeset

    def _question_payload(self, question_id: str) -> dict:
        q = self.store.get_question(question_id)
        payload = {
            "id": q.id,
            "kind": q.kind,
            "stem": q.stem,
            "explanation": q.explanation,
            "course_id": q.course_id,
            "past_paper_id": q.past_paper_id,
            "concept_ids": sorted(q.concept_ids),
        }
        if q.choices:
            payload["choices"] = [
                {"index": c.index, "text": c.text, "is_correct": c.is_correct} for c in q.choices
            ]
        if q.parts:
            payload["parts"] = [
                {"index": p.index, "prompt": p.prompt, "marks": p.marks} for p in q.parts
            ]
        return payload
