"""Relational persistence behind a single storage interface.

The embedded backend is SQLite (file-backed or in-memory) and carries the
whole platform schema: user and institution management, educational content,
engagement tracking, feedback and progress, plus the job queue, document
audit store and sync log. The DDL sticks to portable SQL so a server-backed
engine can implement the same interface.

All mutations go through `transaction()`, which serializes writers on one
connection; that is the concurrency model at desk scale.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from contextlib import contextmanager
from typing import Any, Iterable, Optional

from .errors import DomainError
from .models import (
    Concept,
    Course,
    DraftChoice,
    DraftPart,
    DraftQuestion,
    GENERATOR_MANUAL,
    Institution,
    McqChoice,
    MIN_PAPER_YEAR,
    Provenance,
    Question,
    ROLES,
    SAQ,
    SaqPart,
    STATE_DRAFT,
    STATE_PUBLISHED,
    UserAccount,
    question_fingerprint,
    validate_question,
)
from .util import Clock, new_id, rfc3339, utcnow

BANK_VERSION = 1
MAX_PAGE_SIZE = 100

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS roles (
    name TEXT PRIMARY KEY
);
CREATE TABLE IF NOT EXISTS institutions (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL CHECK (name <> ''),
    country_code TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS users (
    id TEXT PRIMARY KEY,
    role TEXT NOT NULL REFERENCES roles(name),
    institution_id TEXT REFERENCES institutions(id),
    display_name TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS courses (
    id TEXT PRIMARY KEY,
    code TEXT NOT NULL CHECK (code <> ''),
    title TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS institution_courses (
    institution_id TEXT NOT NULL REFERENCES institutions(id),
    course_id TEXT NOT NULL REFERENCES courses(id),
    PRIMARY KEY (institution_id, course_id)
);
CREATE TABLE IF NOT EXISTS concepts (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    parent_id TEXT REFERENCES concepts(id)
);
CREATE TABLE IF NOT EXISTS past_papers (
    id TEXT PRIMARY KEY,
    course_id TEXT NOT NULL REFERENCES courses(id),
    year INTEGER NOT NULL,
    title TEXT NOT NULL,
    source_document_id TEXT,
    UNIQUE (course_id, title, year)
);
CREATE TABLE IF NOT EXISTS questions (
    id TEXT PRIMARY KEY,
    kind TEXT NOT NULL CHECK (kind IN ('mcq', 'saq')),
    stem TEXT NOT NULL,
    explanation TEXT,
    past_paper_id TEXT NOT NULL REFERENCES past_papers(id),
    course_id TEXT NOT NULL REFERENCES courses(id),
    state TEXT NOT NULL CHECK (state IN ('draft', 'published', 'flagged', 'retired')),
    source_document_id TEXT,
    generator TEXT NOT NULL,
    confidence REAL NOT NULL,
    created_at TEXT NOT NULL,
    fingerprint TEXT NOT NULL,
    change_seq INTEGER NOT NULL,
    UNIQUE (course_id, fingerprint)
);
CREATE TABLE IF NOT EXISTS question_concepts (
    question_id TEXT NOT NULL REFERENCES questions(id),
    concept_id TEXT NOT NULL REFERENCES concepts(id),
    PRIMARY KEY (question_id, concept_id)
);
CREATE TABLE IF NOT EXISTS mcq_choices (
    question_id TEXT NOT NULL REFERENCES questions(id),
    idx INTEGER NOT NULL,
    text TEXT NOT NULL,
    is_correct INTEGER NOT NULL,
    PRIMARY KEY (question_id, idx)
);
CREATE TABLE IF NOT EXISTS saq_parts (
    question_id TEXT NOT NULL REFERENCES questions(id),
    idx INTEGER NOT NULL,
    prompt TEXT NOT NULL,
    expected_answer TEXT NOT NULL DEFAULT '',
    marks INTEGER NOT NULL CHECK (marks >= 1),
    PRIMARY KEY (question_id, idx)
);
CREATE TABLE IF NOT EXISTS user_mcq_responses (
    id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(id),
    question_id TEXT NOT NULL REFERENCES questions(id),
    chosen_index INTEGER NOT NULL,
    correct INTEGER NOT NULL,
    at TEXT NOT NULL,
    session_id TEXT
);
CREATE TABLE IF NOT EXISTS user_saq_responses (
    id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(id),
    question_id TEXT NOT NULL REFERENCES questions(id),
    answers TEXT NOT NULL,
    self_correct INTEGER NOT NULL,
    at TEXT NOT NULL,
    session_id TEXT
);
CREATE TABLE IF NOT EXISTS question_feedbacks (
    id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(id),
    question_id TEXT NOT NULL REFERENCES questions(id),
    rating INTEGER NOT NULL CHECK (rating BETWEEN 1 AND 5),
    comment TEXT,
    at TEXT NOT NULL,
    client_clock TEXT,
    UNIQUE (user_id, question_id)
);
CREATE TABLE IF NOT EXISTS question_flags (
    id TEXT PRIMARY KEY,
    question_id TEXT NOT NULL REFERENCES questions(id),
    raised_by TEXT NOT NULL REFERENCES users(id),
    reason TEXT NOT NULL,
    state TEXT NOT NULL CHECK (state IN ('open', 'resolved-republished', 'resolved-retired')),
    at TEXT NOT NULL,
    resolved_at TEXT
);
CREATE TABLE IF NOT EXISTS user_study_sessions (
    id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(id),
    started_at TEXT NOT NULL,
    last_event_at TEXT NOT NULL,
    ended_at TEXT
);
CREATE TABLE IF NOT EXISTS user_study_times (
    user_id TEXT NOT NULL REFERENCES users(id),
    day TEXT NOT NULL,
    seconds REAL NOT NULL,
    PRIMARY KEY (user_id, day)
);
CREATE TABLE IF NOT EXISTS user_concept_progress (
    user_id TEXT NOT NULL REFERENCES users(id),
    concept_id TEXT NOT NULL REFERENCES concepts(id),
    attempted INTEGER NOT NULL,
    correct INTEGER NOT NULL,
    PRIMARY KEY (user_id, concept_id),
    CHECK (correct >= 0 AND correct <= attempted)
);
CREATE TABLE IF NOT EXISTS analytics (
    id TEXT PRIMARY KEY,
    user_id TEXT REFERENCES users(id),
    event_kind TEXT NOT NULL,
    at TEXT NOT NULL,
    payload TEXT
);
CREATE TABLE IF NOT EXISTS documents (
    id TEXT PRIMARY KEY,
    sha256 TEXT NOT NULL,
    filename TEXT NOT NULL,
    content_type TEXT NOT NULL,
    size INTEGER NOT NULL,
    data BLOB NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS document_artifacts (
    document_id TEXT NOT NULL REFERENCES documents(id),
    kind TEXT NOT NULL,
    payload TEXT NOT NULL,
    created_at TEXT NOT NULL,
    PRIMARY KEY (document_id, kind)
);
CREATE TABLE IF NOT EXISTS jobs (
    id TEXT PRIMARY KEY,
    document_id TEXT NOT NULL REFERENCES documents(id),
    course_id TEXT NOT NULL REFERENCES courses(id),
    paper_title TEXT NOT NULL,
    paper_year INTEGER NOT NULL,
    state TEXT NOT NULL,
    attempt_counts TEXT NOT NULL DEFAULT '{}',
    timestamps TEXT NOT NULL DEFAULT '{}',
    failure TEXT,
    result TEXT,
    events TEXT NOT NULL DEFAULT '[]'
);
CREATE TABLE IF NOT EXISTS sync_ops (
    op_id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    payload TEXT NOT NULL,
    client_clock TEXT NOT NULL,
    server_at TEXT NOT NULL,
    status TEXT NOT NULL,
    reason TEXT
);
CREATE INDEX IF NOT EXISTS idx_questions_paper ON questions(past_paper_id);
CREATE INDEX IF NOT EXISTS idx_questions_course ON questions(course_id);
CREATE INDEX IF NOT EXISTS idx_questions_change ON questions(change_seq);
CREATE INDEX IF NOT EXISTS idx_mcq_resp_user ON user_mcq_responses(user_id, at);
CREATE INDEX IF NOT EXISTS idx_analytics_at ON analytics(at);
"""


def _db_path(url: str) -> str:
    if url.startswith("sqlite:///"):
        return url[len("sqlite:///"):]
    if url.startswith("sqlite://"):
        return url[len("sqlite://"):] or ":memory:"
    return url


class Store:
    """Embedded relational store. One connection, one writer at a time."""

    def __init__(self, url: str = ":memory:", clock: Clock = utcnow):
        self.url = url
        self.clock = clock
        self._lock = threading.RLock()
        self._tx_depth = 0
        self._conn = sqlite3.connect(_db_path(url), check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._conn.isolation_level = None
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._bootstrap()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def _bootstrap(self) -> None:
        with self._lock:
            self._conn.executescript(_SCHEMA)
            for role in ROLES:
                self._conn.execute("INSERT OR IGNORE INTO roles(name) VALUES (?)", (role,))
            for key, value in (("schema_version", "1"), ("change_seq", "0"), ("compaction_floor", "0")):
                self._conn.execute("INSERT OR IGNORE INTO meta(key, value) VALUES (?, ?)", (key, value))

    @contextmanager
    def transaction(self):
        with self._lock:
            if self._tx_depth == 0:
                self._conn.execute("BEGIN IMMEDIATE")
            self._tx_depth += 1
            try:
                yield self._conn
            except BaseException:
                self._tx_depth -= 1
                if self._tx_depth == 0:
                    self._conn.execute("ROLLBACK")
                raise
            else:
                self._tx_depth -= 1
                if self._tx_depth == 0:
                    self._conn.execute("COMMIT")

    def execute(self, sql: str, params: Iterable = ()) -> None:
        with self.transaction() as conn:
            conn.execute(sql, tuple(params))

    def query(self, sql: str, params: Iterable = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, tuple(params)).fetchall()

    def query_one(self, sql: str, params: Iterable = ()) -> Optional[sqlite3.Row]:
        rows = self.query(sql, params)
        return rows[0] if rows else None

    # -- meta ---------------------------------------------------------------

    def get_meta(self, key: str) -> str:
        row = self.query_one("SELECT value FROM meta WHERE key = ?", (key,))
        return row["value"] if row else ""

    def set_meta(self, key: str, value: str) -> None:
        self.execute(
            "INSERT INTO meta(key, value) VALUES (?, ?) "
            "ON CONFLICT(key) DO UPDATE SET value = excluded.value",
            (key, value),
        )

    def next_change_seq(self, conn: sqlite3.Connection) -> int:
        """Allocate the next content-change sequence number (call in a transaction)."""
        conn.execute("UPDATE meta SET value = CAST(value AS INTEGER) + 1 WHERE key = 'change_seq'")
        row = conn.execute("SELECT value FROM meta WHERE key = 'change_seq'").fetchone()
        return int(row["value"])

    def current_change_seq(self) -> int:
        return int(self.get_meta("change_seq"))

    def compaction_floor(self) -> int:
        return int(self.get_meta("compaction_floor"))

    # -- reference data -----------------------------------------------------

    def add_institution(self, name: str, country_code: str, id: Optional[str] = None) -> Institution:
        if not name:
            raise DomainError("bad-institution", "institution name must be non-empty")
        inst = Institution(id or new_id("inst"), name, country_code)
        self.execute(
            "INSERT INTO institutions(id, name, country_code) VALUES (?, ?, ?)",
            (inst.id, inst.name, inst.country_code),
        )
        return inst

    def add_course(self, code: str, title: str, institution_ids: Iterable[str] = (),
                   id: Optional[str] = None) -> Course:
        if not code:
            raise DomainError("bad-course", "course code must be non-empty")
        course = Course(id or new_id("crs"), code, title, set(institution_ids))
        with self.transaction() as conn:
            conn.execute(
                "INSERT INTO courses(id, code, title) VALUES (?, ?, ?)",
                (course.id, course.code, course.title),
            )
            for inst_id in course.institution_ids:
                conn.execute(
                    "INSERT OR IGNORE INTO institution_courses(institution_id, course_id) VALUES (?, ?)",
                    (inst_id, course.id),
                )
        return course

    def get_course(self, course_ref: str) -> Optional[Course]:
        """Resolve a course by id, falling back to its code."""
        row = self.query_one("SELECT * FROM courses WHERE id = ?", (course_ref,))
        if row is None:
            row = self.query_one("SELECT * FROM courses WHERE code = ?", (course_ref,))
        if row is None:
            return None
        links = self.query(
            "SELECT institution_id FROM institution_courses WHERE course_id = ?", (row["id"],)
        )
        return Course(row["id"], row["code"], row["title"], {r["institution_id"] for r in links})

    def list_courses(self, institution_id: Optional[str] = None) -> list[Course]:
        if institution_id:
            rows = self.query(
                "SELECT c.* FROM courses c JOIN institution_courses ic ON ic.course_id = c.id "
                "WHERE ic.institution_id = ? ORDER BY c.code",
                (institution_id,),
            )
        else:
            rows = self.query("SELECT * FROM courses ORDER BY code")
        return [Course(r["id"], r["code"], r["title"]) for r in rows]

    def add_concept(self, name: str, parent_id: Optional[str] = None, id: Optional[str] = None) -> Concept:
        concept = Concept(id or new_id("cpt"), name, parent_id)
        if parent_id:
            seen = {concept.id}
            cursor: Optional[str] = parent_id
            while cursor is not None:
                if cursor in seen:
                    raise DomainError("concept-cycle", "concept parent links must not form a cycle")
                seen.add(cursor)
                row = self.query_one("SELECT parent_id FROM concepts WHERE id = ?", (cursor,))
                cursor = row["parent_id"] if row else None
        self.execute(
            "INSERT INTO concepts(id, name, parent_id) VALUES (?, ?, ?)",
            (concept.id, concept.name, concept.parent_id),
        )
        return concept

    def resolve_concept(self, conn: sqlite3.Connection, name: str) -> str:
        """Concept id for a name (case-insensitive match), creating it if new."""
        row = conn.execute(
            "SELECT id FROM concepts WHERE lower(name) = lower(?)", (name,)
        ).fetchone()
        if row:
            return row["id"]
        cid = new_id("cpt")
        conn.execute("INSERT INTO concepts(id, name, parent_id) VALUES (?, ?, NULL)", (cid, name))
        return cid

    def add_user(self, role: str, display_name: str, institution_id: Optional[str] = None,
                 id: Optional[str] = None) -> UserAccount:
        user = UserAccount(id or new_id("usr"), role, institution_id, display_name)
        self.execute(
            "INSERT INTO users(id, role, institution_id, display_name) VALUES (?, ?, ?, ?)",
            (user.id, user.role, user.institution_id, user.display_name),
        )
        return user

    def get_user(self, user_id: str) -> Optional[UserAccount]:
        row = self.query_one("SELECT * FROM users WHERE id = ?", (user_id,))
        if row is None:
            return None
        return UserAccount(row["id"], row["role"], row["institution_id"], row["display_name"])

    # -- document audit store ------------------------------------------------

    def put_document(self, data: bytes, filename: str, content_type: str, sha256: str) -> str:
        doc_id = new_id("doc")
        self.execute(
            "INSERT INTO documents(id, sha256, filename, content_type, size, data, created_at) "
            "VALUES (?, ?, ?, ?, ?, ?, ?)",
            (doc_id, sha256, filename, content_type, len(data), data, rfc3339(self.clock())),
        )
        return doc_id

    def get_document(self, doc_id: str) -> Optional[sqlite3.Row]:
        return self.query_one("SELECT * FROM documents WHERE id = ?", (doc_id,))

    def put_artifact(self, doc_id: str, kind: str, payload: str) -> None:
        self.execute(
            "INSERT INTO document_artifacts(document_id, kind, payload, created_at) VALUES (?, ?, ?, ?) "
            "ON CONFLICT(document_id, kind) DO UPDATE SET payload = excluded.payload, "
            "created_at = excluded.created_at",
            (doc_id, kind, payload, rfc3339(self.clock())),
        )

    def get_artifact(self, doc_id: str, kind: str) -> Optional[str]:
        row = self.query_one(
            "SELECT payload FROM document_artifacts WHERE document_id = ? AND kind = ?",
            (doc_id, kind),
        )
        return row["payload"] if row else None

    # -- jobs -----------------------------------------------------------------

    def create_job(self, row: dict) -> None:
        self.execute(
            "INSERT INTO jobs(id, document_id, course_id, paper_title, paper_year, state, "
            "attempt_counts, timestamps, failure, result, events) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
            (
                row["id"], row["document_id"], row["course_id"], row["paper_title"],
                row["paper_year"], row["state"], json.dumps(row.get("attempt_counts", {})),
                json.dumps(row.get("timestamps", {})),
                json.dumps(row["failure"]) if row.get("failure") else None,
                json.dumps(row["result"]) if row.get("result") else None,
                json.dumps(row.get("events", [])),
            ),
        )

    def load_job(self, job_id: str) -> Optional[dict]:
        row = self.query_one("SELECT * FROM jobs WHERE id = ?", (job_id,))
        if row is None:
            return None
        return {
            "id": row["id"],
            "document_id": row["document_id"],
            "course_id": row["course_id"],
            "paper_title": row["paper_title"],
            "paper_year": row["paper_year"],
            "state": row["state"],
            "attempt_counts": json.loads(row["attempt_counts"]),
            "timestamps": json.loads(row["timestamps"]),
            "failure": json.loads(row["failure"]) if row["failure"] else None,
            "result": json.loads(row["result"]) if row["result"] else None,
            "events": json.loads(row["events"]),
        }

    def save_job(self, row: dict) -> None:
        self.execute(
            "UPDATE jobs SET state = ?, attempt_counts = ?, timestamps = ?, failure = ?, result = ? "
            "WHERE id = ?",
            (
                row["state"], json.dumps(row["attempt_counts"]), json.dumps(row["timestamps"]),
                json.dumps(row["failure"]) if row.get("failure") else None,
                json.dumps(row["result"]) if row.get("result") else None,
                row["id"],
            ),
        )

    def append_job_event(self, job_id: str, event: dict) -> None:
        with self.transaction() as conn:
            row = conn.execute("SELECT events FROM jobs WHERE id = ?", (job_id,)).fetchone()
            if row is None:
                return
            events = json.loads(row["events"])
            events.append(event)
            conn.execute("UPDATE jobs SET events = ? WHERE id = ?", (json.dumps(events), job_id))

    def list_jobs(self, states: Iterable[str] = ()) -> list[dict]:
        states = tuple(states)
        if states:
            marks = ",".join("?" for _ in states)
            rows = self.query(f"SELECT id FROM jobs WHERE state IN ({marks})", states)
        else:
            rows = self.query("SELECT id FROM jobs")
        return [self.load_job(r["id"]) for r in rows]

    # -- question bank -------------------------------------------------------

    def existing_fingerprints(self, course_id: str) -> set[str]:
        rows = self.query("SELECT fingerprint FROM questions WHERE course_id = ?", (course_id,))
        return {r["fingerprint"] for r in rows}

    def _upsert_past_paper(self, conn: sqlite3.Connection, course_id: str, title: str,
                           year: int, source_document_id: Optional[str]) -> str:
        current_year = self.clock().year
        if not (MIN_PAPER_YEAR <= year <= current_year + 1):
            raise DomainError("integrity-violation", f"paper year {year} out of range")
        row = conn.execute(
            "SELECT id FROM past_papers WHERE course_id = ? AND title = ? AND year = ?",
            (course_id, title, year),
        ).fetchone()
        if row:
            return row["id"]
        paper_id = new_id("pp")
        conn.execute(
            "INSERT INTO past_papers(id, course_id, year, title, source_document_id) "
            "VALUES (?, ?, ?, ?, ?)",
            (paper_id, course_id, year, title, source_document_id),
        )
        return paper_id

    def insert_question_bank(self, drafts: list[DraftQuestion], course_id: str,
                             paper_meta: dict, document_id: Optional[str] = None,
                             publish: bool = True) -> dict:
        """Atomically upsert the past paper and insert validated drafts.

        Idempotent under retry: a draft whose fingerprint already exists for
        the course maps to the existing row, whose id is returned in place.
        """
        created_at = rfc3339(self.clock())
        state = STATE_PUBLISHED if publish else STATE_DRAFT
        try:
            with self.transaction() as conn:
                paper_id = self._upsert_past_paper(
                    conn, course_id, paper_meta["title"], int(paper_meta["year"]), document_id
                )
                question_ids: list[str] = []
                inserted = 0
                for draft in drafts:
                    fp = question_fingerprint(draft)
                    row = conn.execute(
                        "SELECT id FROM questions WHERE course_id = ? AND fingerprint = ?",
                        (course_id, fp),
                    ).fetchone()
                    if row:
                        question_ids.append(row["id"])
                        continue
                    qid = new_id("q")
                    conn.execute(
                        "INSERT INTO questions(id, kind, stem, explanation, past_paper_id, course_id, "
                        "state, source_document_id, generator, confidence, created_at, fingerprint, "
                        "change_seq) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                        (
                            qid, draft.kind, draft.stem, draft.explanation, paper_id, course_id,
                            state, document_id, draft.generator, draft.confidence, created_at, fp,
                            self.next_change_seq(conn),
                        ),
                    )
                    for i, choice in enumerate(draft.choices):
                        conn.execute(
                            "INSERT INTO mcq_choices(question_id, idx, text, is_correct) VALUES (?, ?, ?, ?)",
                            (qid, i, choice.text, int(choice.is_correct)),
                        )
                    for i, part in enumerate(draft.parts):
                        conn.execute(
                            "INSERT INTO saq_parts(question_id, idx, prompt, expected_answer, marks) "
                            "VALUES (?, ?, ?, ?, ?)",
                            (qid, i, part.prompt, part.expected_answer, part.marks),
                        )
                    names = draft.concept_names or [self._course_code(conn, course_id)]
                    for name in names:
                        concept_id = self.resolve_concept(conn, name)
                        conn.execute(
                            "INSERT OR IGNORE INTO question_concepts(question_id, concept_id) VALUES (?, ?)",
                            (qid, concept_id),
                        )
                    question_ids.append(qid)
                    inserted += 1
        except sqlite3.IntegrityError as exc:
            raise DomainError("integrity-violation", str(exc)) from exc
        return {"past_paper_id": paper_id, "question_ids": question_ids, "inserted": inserted}

    @staticmethod
    def _course_code(conn: sqlite3.Connection, course_id: str) -> str:
        row = conn.execute("SELECT code FROM courses WHERE id = ?", (course_id,)).fetchone()
        if row is None:
            raise DomainError("integrity-violation", f"unknown course {course_id}")
        return row["code"]

    def get_question(self, question_id: str) -> Optional[Question]:
        row = self.query_one("SELECT * FROM questions WHERE id = ?", (question_id,))
        if row is None:
            return None
        return self._hydrate_question(row)

    def _hydrate_question(self, row: sqlite3.Row) -> Question:
        qid = row["id"]
        choices = [
            McqChoice(r["idx"], r["text"], bool(r["is_correct"]))
            for r in self.query(
                "SELECT * FROM mcq_choices WHERE question_id = ? ORDER BY idx", (qid,)
            )
        ]
        parts = [
            SaqPart(r["idx"], r["prompt"], r["expected_answer"], r["marks"])
            for r in self.query(
                "SELECT * FROM saq_parts WHERE question_id = ? ORDER BY idx", (qid,)
            )
        ]
        concept_ids = {
            r["concept_id"]
            for r in self.query(
                "SELECT concept_id FROM question_concepts WHERE question_id = ?", (qid,)
            )
        }
        return Question(
            id=qid,
            kind=row["kind"],
            stem=row["stem"],
            explanation=row["explanation"],
            past_paper_id=row["past_paper_id"],
            course_id=row["course_id"],
            concept_ids=concept_ids,
            state=row["state"],
            provenance=Provenance(
                row["source_document_id"], row["generator"], row["confidence"], row["created_at"]
            ),
            fingerprint=row["fingerprint"],
            choices=choices,
            parts=parts,
        )

    def set_question_state(self, question_id: str, state: str) -> None:
        with self.transaction() as conn:
            seq = self.next_change_seq(conn)
            conn.execute(
                "UPDATE questions SET state = ?, change_seq = ? WHERE id = ?",
                (state, seq, question_id),
            )

    def query_questions(self, role: str, institution: Optional[str] = None,
                        course: Optional[str] = None, concept: Optional[str] = None,
                        paper: Optional[str] = None, state: Optional[str] = None,
                        page: int = 1, page_size: int = 20) -> dict:
        """Filtered, deterministic page of questions. Students only ever see
        published content; faculty and admin see every state."""
        if page_size > MAX_PAGE_SIZE:
            raise DomainError("page-too-large", f"page_size must be <= {MAX_PAGE_SIZE}")
        page = max(page, 1)
        where: list[str] = []
        params: list[Any] = []
        if role == "student":
            where.append("q.state = 'published'")
            if state and state != STATE_PUBLISHED:
                return {"items": [], "total": 0, "page": page, "page_size": page_size}
        elif state:
            where.append("q.state = ?")
            params.append(state)
        if course:
            where.append("q.course_id = ?")
            params.append(course)
        if paper:
            where.append("q.past_paper_id = ?")
            params.append(paper)
        if concept:
            where.append("q.id IN (SELECT question_id FROM question_concepts WHERE concept_id = ?)")
            params.append(concept)
        if institution:
            where.append(
                "q.course_id IN (SELECT course_id FROM institution_courses WHERE institution_id = ?)"
            )
            params.append(institution)
        clause = ("WHERE " + " AND ".join(where)) if where else ""
        total = self.query_one(f"SELECT COUNT(*) AS n FROM questions q {clause}", params)["n"]
        rows = self.query(
            f"SELECT q.* FROM questions q {clause} ORDER BY q.created_at, q.id LIMIT ? OFFSET ?",
            params + [page_size, (page - 1) * page_size],
        )
        return {
            "items": [self._hydrate_question(r) for r in rows],
            "total": total,
            "page": page,
            "page_size": page_size,
        }

    # -- interchange -----------------------------------------------------------

    def _concept_names(self, concept_ids: Iterable[str]) -> list[str]:
        names = []
        for cid in concept_ids:
            row = self.query_one("SELECT name FROM concepts WHERE id = ?", (cid,))
            if row:
                names.append(row["name"])
        return sorted(names)

    def export_bank(self, past_paper_id: str) -> str:
        """Canonical interchange document for one paper's bank.

        Content-addressed: no ids, no timestamps, questions ordered by
        fingerprint, keys sorted. Identical content exports byte-identically.
        """
        from .util import canonical_json

        paper = self.query_one("SELECT * FROM past_papers WHERE id = ?", (past_paper_id,))
        if paper is None:
            raise DomainError("unknown-paper", f"no past paper {past_paper_id}")
        rows = self.query("SELECT * FROM questions WHERE past_paper_id = ?", (past_paper_id,))
        questions = []
        for row in rows:
            q = self._hydrate_question(row)
            item: dict[str, Any] = {
                "kind": q.kind,
                "stem": q.stem,
                "explanation": q.explanation,
                "concepts": self._concept_names(q.concept_ids),
                "fingerprint": q.fingerprint,
            }
            if q.kind == SAQ:
                item["parts"] = [
                    {"index": p.index, "prompt": p.prompt, "expected_answer": p.expected_answer,
                     "marks": p.marks}
                    for p in q.parts
                ]
            else:
                item["choices"] = [
                    {"index": c.index, "text": c.text, "is_correct": c.is_correct}
                    for c in q.choices
                ]
            questions.append(item)
        questions.sort(key=lambda it: it["fingerprint"])
        doc = {
            "bank_version": BANK_VERSION,
            "paper": {"title": paper["title"], "year": paper["year"]},
            "questions": questions,
        }
        return canonical_json(doc)

    def import_bank(self, document: str, course_id: str) -> dict:
        """Idempotent inverse of export_bank: new content inserted, known
        fingerprints skipped, any invalid item rejects the whole file."""
        try:
            doc = json.loads(document)
        except (json.JSONDecodeError, TypeError) as exc:
            raise DomainError("bad-interchange", f"unparseable interchange document: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("bank_version") != BANK_VERSION:
            raise DomainError("bad-interchange", "missing or unsupported bank_version")
        paper = doc.get("paper")
        items = doc.get("questions")
        if not isinstance(paper, dict) or "title" not in paper or "year" not in paper \
                or not isinstance(items, list):
            raise DomainError("bad-interchange", "interchange document missing paper or questions")

        drafts: list[DraftQuestion] = []
        for item in items:
            if not isinstance(item, dict):
                raise DomainError("bad-interchange", "question entries must be objects")
            try:
                draft = DraftQuestion(
                    kind=item.get("kind", ""),
                    stem=item.get("stem", ""),
                    explanation=item.get("explanation"),
                    concept_names=list(item.get("concepts", [])),
                    choices=[
                        DraftChoice(c["text"], bool(c["is_correct"]))
                        for c in sorted(item.get("choices", []), key=lambda c: c.get("index", 0))
                    ],
                    parts=[
                        DraftPart(p["prompt"], p.get("expected_answer", ""), int(p.get("marks", 1)))
                        for p in sorted(item.get("parts", []), key=lambda p: p.get("index", 0))
                    ],
                    generator=GENERATOR_MANUAL,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DomainError("bad-interchange", f"malformed question entry: {exc}") from exc
            report = validate_question(draft)
            if not report.ok:
                raise DomainError(
                    "invalid-content", f"invalid question in bank: {', '.join(report.violations)}"
                )
            drafts.append(draft)

        course = self.get_course(course_id)
        if course is None:
            raise DomainError("unknown-course", f"no course {course_id}")
        existing = self.existing_fingerprints(course.id)
        to_insert = []
        skipped = 0
        seen: set[str] = set()
        for draft in drafts:
            fp = question_fingerprint(draft)
            if fp in existing or fp in seen:
                skipped += 1
                continue
            seen.add(fp)
            to_insert.append(draft)
        result = self.insert_question_bank(
            to_insert, course.id, {"title": paper["title"], "year": paper["year"]}
        )
        return {
            "past_paper_id": result["past_paper_id"],
            "inserted": result["inserted"],
            "skipped": skipped,
        }

    # -- integrity -------------------------------------------------------------

    def scan_integrity(self) -> list[str]:
        """Full-table invariant check; returns human-readable problems, empty when clean."""
        problems: list[str] = []
        for row in self.query("SELECT * FROM questions"):
            q = self._hydrate_question(row)
            if self.query_one("SELECT 1 FROM past_papers WHERE id = ?", (q.past_paper_id,)) is None:
                problems.append(f"{q.id}: dangling past paper {q.past_paper_id}")
            if self.query_one("SELECT 1 FROM courses WHERE id = ?", (q.course_id,)) is None:
                problems.append(f"{q.id}: dangling course {q.course_id}")
            if not q.concept_ids:
                problems.append(f"{q.id}: no concept links")
            report = validate_question(q)
            if not report.ok:
                problems.append(f"{q.id}: {', '.join(report.violations)}")
            if question_fingerprint(q) != q.fingerprint:
                problems.append(f"{q.id}: stored fingerprint does not match content")
        dupes = self.query(
            "SELECT course_id, fingerprint, COUNT(*) AS n FROM questions "
            "GROUP BY course_id, fingerprint HAVING n > 1"
        )
        for row in dupes:
            problems.append(
                f"fingerprint {row['fingerprint']} appears {row['n']} times in course {row['course_id']}"
            )
        return problems
