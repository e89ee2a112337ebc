"""Responses, feedback, flag lifecycle and the pilot-style analytics.

Response recording is append-only; concept progress counters update in the
same transaction as the response insert so they always equal a recount.
Flagging is the human-in-the-loop gate: a flagged question disappears from
student-visible queries immediately and stays hidden until a faculty member
republishes or retires it.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from datetime import date, timedelta
from math import ceil
from typing import Optional

from .errors import DomainError
from .models import (
    ROLE_ADMIN,
    ROLE_FACULTY,
    STATE_DRAFT,
    STATE_FLAGGED,
    STATE_PUBLISHED,
    STATE_RETIRED,
)
from .store import Store
from .util import Clock, new_id, parse_rfc3339, rfc3339, utcnow

SESSION_IDLE_MINUTES = 30
SATISFIED_MEAN_RATING = 4.0

FLAG_OPEN = "open"
FLAG_REPUBLISHED = "resolved-republished"
FLAG_RETIRED = "resolved-retired"


@dataclass
class Flag:
    id: str
    question_id: str
    raised_by: str
    reason: str
    state: str
    at: str
    resolved_at: Optional[str] = None


class EngagementService:
    def __init__(self, store: Store, clock: Clock = utcnow):
        self.store = store
        self.clock = clock

    # -- event plumbing --------------------------------------------------------

    def _log_event(self, conn, user_id: str, kind: str, at: str, payload: Optional[dict] = None):
        conn.execute(
            "INSERT INTO analytics(id, user_id, event_kind, at, payload) VALUES (?, ?, ?, ?, ?)",
            (new_id("evt"), user_id, kind, at, json.dumps(payload) if payload else None),
        )

    def log_engagement_event(self, user_id: str, kind: str, at: Optional[str] = None) -> None:
        """Record a bare engagement event (used for batch ingestion and for
        constructing synthetic activity logs)."""
        at = at or rfc3339(self.clock())
        with self.store.transaction() as conn:
            self._log_event(conn, user_id, kind, at)

    def _touch_session(self, conn, user_id: str, at: str) -> str:
        """Open or extend the user's study session; sessions close after
        30 minutes of inactivity and their duration lands in user_study_times."""
        row = conn.execute(
            "SELECT * FROM user_study_sessions WHERE user_id = ? AND ended_at IS NULL "
            "ORDER BY started_at DESC LIMIT 1",
            (user_id,),
        ).fetchone()
        now = parse_rfc3339(at)
        if row is not None:
            last = parse_rfc3339(row["last_event_at"])
            if now - last <= timedelta(minutes=SESSION_IDLE_MINUTES):
                if now > last:
                    conn.execute(
                        "UPDATE user_study_sessions SET last_event_at = ? WHERE id = ?",
                        (at, row["id"]),
                    )
                return row["id"]
            self._close_session(conn, row)
        session_id = new_id("study")
        conn.execute(
            "INSERT INTO user_study_sessions(id, user_id, started_at, last_event_at) "
            "VALUES (?, ?, ?, ?)",
            (session_id, user_id, at, at),
        )
        return session_id

    def _close_session(self, conn, row) -> None:
        started = parse_rfc3339(row["started_at"])
        last = parse_rfc3339(row["last_event_at"])
        seconds = max((last - started).total_seconds(), 0.0)
        day = row["started_at"][:10]
        conn.execute(
            "UPDATE user_study_sessions SET ended_at = ? WHERE id = ?",
            (row["last_event_at"], row["id"]),
        )
        conn.execute(
            "INSERT INTO user_study_times(user_id, day, seconds) VALUES (?, ?, ?) "
            "ON CONFLICT(user_id, day) DO UPDATE SET seconds = seconds + excluded.seconds",
            (row["user_id"], day, seconds),
        )

    def _published_question(self, question_id: str):
        question = self.store.get_question(question_id)
        if question is None:
            raise DomainError("unknown-question", f"no question {question_id}")
        if question.state != STATE_PUBLISHED:
            raise DomainError("not-available", "question is not available for practice")
        return question

    # -- responses ---------------------------------------------------------------

    def record_mcq_response(self, user_id: str, question_id: str, chosen_index: int,
                            at: Optional[str] = None, client_clock: Optional[str] = None) -> dict:
        question = self._published_question(question_id)
        if not (0 <= chosen_index < len(question.choices)):
            raise DomainError("bad-choice", f"choice index {chosen_index} out of range")
        correct = question.choices[chosen_index].is_correct
        at = at or rfc3339(self.clock())
        with self.store.transaction() as conn:
            session_id = self._touch_session(conn, user_id, at)
            conn.execute(
                "INSERT INTO user_mcq_responses(id, user_id, question_id, chosen_index, correct, "
                "at, session_id) VALUES (?, ?, ?, ?, ?, ?, ?)",
                (new_id("resp"), user_id, question_id, chosen_index, int(correct), at, session_id),
            )
            for concept_id in question.concept_ids:
                self._bump_progress(conn, user_id, concept_id, correct)
            self._log_event(conn, user_id, "mcq-response", at, {"question_id": question_id})
        return {"correct": correct, "explanation": question.explanation}

    def record_saq_response(self, user_id: str, question_id: str, answers: list[dict],
                            self_correct: bool, at: Optional[str] = None) -> dict:
        question = self._published_question(question_id)
        valid_indices = {p.index for p in question.parts}
        for answer in answers:
            if answer.get("index") not in valid_indices:
                raise DomainError("bad-part", f"part index {answer.get('index')} out of range")
        at = at or rfc3339(self.clock())
        with self.store.transaction() as conn:
            session_id = self._touch_session(conn, user_id, at)
            conn.execute(
                "INSERT INTO user_saq_responses(id, user_id, question_id, answers, self_correct, "
                "at, session_id) VALUES (?, ?, ?, ?, ?, ?, ?)",
                (new_id("resp"), user_id, question_id, json.dumps(answers),
                 int(self_correct), at, session_id),
            )
            for concept_id in question.concept_ids:
                self._bump_progress(conn, user_id, concept_id, self_correct)
            self._log_event(conn, user_id, "saq-response", at, {"question_id": question_id})
        return {"recorded": True, "self_correct": self_correct}

    @staticmethod
    def _bump_progress(conn, user_id: str, concept_id: str, correct: bool) -> None:
        conn.execute(
            "INSERT INTO user_concept_progress(user_id, concept_id, attempted, correct) "
            "VALUES (?, ?, 1, ?) ON CONFLICT(user_id, concept_id) DO UPDATE SET "
            "attempted = attempted + 1, correct = correct + excluded.correct",
            (user_id, concept_id, int(correct)),
        )

    def record_feedback(self, user_id: str, question_id: str, rating: int,
                        comment: Optional[str] = None, at: Optional[str] = None,
                        client_clock: Optional[str] = None) -> dict:
        if not isinstance(rating, int) or not (1 <= rating <= 5):
            raise DomainError("bad-rating", "rating must be an integer from 1 to 5")
        self._published_question(question_id)
        at = at or rfc3339(self.clock())
        with self.store.transaction() as conn:
            # One feedback row per user and question: server receipt order
            # wins for edits, the client clock is kept for audit.
            conn.execute(
                "INSERT INTO question_feedbacks(id, user_id, question_id, rating, comment, at, "
                "client_clock) VALUES (?, ?, ?, ?, ?, ?, ?) "
                "ON CONFLICT(user_id, question_id) DO UPDATE SET rating = excluded.rating, "
                "comment = excluded.comment, at = excluded.at, client_clock = excluded.client_clock",
                (new_id("fb"), user_id, question_id, rating, comment, at, client_clock),
            )
            self._touch_session(conn, user_id, at)
            self._log_event(conn, user_id, "feedback", at, {"question_id": question_id})
        return {"recorded": True}

    def concept_progress(self, user_id: str) -> list[dict]:
        rows = self.store.query(
            "SELECT * FROM user_concept_progress WHERE user_id = ? ORDER BY concept_id", (user_id,)
        )
        return [
            {
                "concept_id": r["concept_id"],
                "attempted": r["attempted"],
                "correct": r["correct"],
                "mastery": (r["correct"] / r["attempted"]) if r["attempted"] else 0.0,
            }
            for r in rows
        ]

    # -- flag lifecycle -----------------------------------------------------------

    def _require_reviewer(self, user_id: str):
        user = self.store.get_user(user_id)
        if user is None:
            raise DomainError("unknown-user", f"no user {user_id}")
        if user.role not in (ROLE_FACULTY, ROLE_ADMIN):
            raise DomainError("forbidden", "only faculty or admin may review content")
        return user

    def flag_question(self, user_id: str, question_id: str, reason: str,
                      at: Optional[str] = None) -> Flag:
        self._require_reviewer(user_id)
        question = self.store.get_question(question_id)
        if question is None:
            raise DomainError("unknown-question", f"no question {question_id}")
        if question.state not in (STATE_PUBLISHED, STATE_DRAFT):
            raise DomainError("not-flaggable", f"cannot flag a {question.state} question")
        at = at or rfc3339(self.clock())
        flag = Flag(new_id("flag"), question_id, user_id, reason, FLAG_OPEN, at)
        with self.store.transaction() as conn:
            conn.execute(
                "INSERT INTO question_flags(id, question_id, raised_by, reason, state, at) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (flag.id, flag.question_id, flag.raised_by, flag.reason, flag.state, flag.at),
            )
            self.store.set_question_state(question_id, STATE_FLAGGED)
        return flag

    def resolve_flag(self, user_id: str, flag_id: str, outcome: str,
                     at: Optional[str] = None) -> str:
        self._require_reviewer(user_id)
        if outcome not in ("republish", "retire"):
            raise DomainError("bad-outcome", "outcome must be republish or retire")
        row = self.store.query_one("SELECT * FROM question_flags WHERE id = ?", (flag_id,))
        if row is None:
            raise DomainError("unknown-flag", f"no flag {flag_id}")
        if row["state"] != FLAG_OPEN:
            raise DomainError("flag-closed", "flag already resolved")
        at = at or rfc3339(self.clock())
        new_state = STATE_PUBLISHED if outcome == "republish" else STATE_RETIRED
        flag_state = FLAG_REPUBLISHED if outcome == "republish" else FLAG_RETIRED
        with self.store.transaction() as conn:
            conn.execute(
                "UPDATE question_flags SET state = ?, resolved_at = ? WHERE id = ?",
                (flag_state, at, flag_id),
            )
            self.store.set_question_state(row["question_id"], new_state)
        return new_state

    def list_flags(self, state: Optional[str] = None) -> list[Flag]:
        if state:
            rows = self.store.query(
                "SELECT * FROM question_flags WHERE state = ? ORDER BY at", (state,)
            )
        else:
            rows = self.store.query("SELECT * FROM question_flags ORDER BY at")
        return [
            Flag(r["id"], r["question_id"], r["raised_by"], r["reason"], r["state"],
                 r["at"], r["resolved_at"])
            for r in rows
        ]

    # -- analytics ------------------------------------------------------------------

    @staticmethod
    def _days(frm: str, to: str) -> list[str]:
        start = date.fromisoformat(frm)
        end = date.fromisoformat(to)
        if end < start:
            raise DomainError("bad-range", "date range end precedes start")
        return [(start + timedelta(days=i)).isoformat() for i in range((end - start).days + 1)]

    def _dau_by_day(self, days: list[str]) -> dict[str, int]:
        counts = {day: 0 for day in days}
        rows = self.store.query(
            "SELECT substr(at, 1, 10) AS day, COUNT(DISTINCT user_id) AS n FROM analytics "
            "WHERE substr(at, 1, 10) BETWEEN ? AND ? GROUP BY day",
            (days[0], days[-1]),
        )
        for row in rows:
            if row["day"] in counts:
                counts[row["day"]] = row["n"]
        return counts

    def daily_active_users(self, frm: str, to: str, baseline_frm: Optional[str] = None,
                           baseline_to: Optional[str] = None) -> dict:
        """DAU per UTC day (distinct users with at least one engagement event)
        plus the percent change of the range mean over a baseline range."""
        days = self._days(frm, to)
        counts = self._dau_by_day(days)
        series = [{"date": day, "dau": counts[day]} for day in days]
        current_mean = sum(counts.values()) / len(days)
        result: dict = {"series": series, "mean": current_mean, "percent_change": None}
        if baseline_frm and baseline_to:
            base_days = self._days(baseline_frm, baseline_to)
            base_counts = self._dau_by_day(base_days)
            base_mean = sum(base_counts.values()) / len(base_days)
            if base_mean == 0:
                if current_mean > 0:
                    raise DomainError("undefined-baseline", "baseline range has no activity")
                result["percent_change"] = 0.0
            else:
                result["percent_change"] = (current_mean - base_mean) / base_mean * 100.0
        return result

    def satisfaction_summary(self, frm: Optional[str] = None, to: Optional[str] = None) -> dict:
        """Histogram of ratings plus the share of distinct raters whose mean
        rating is at least 4 on the 1 to 5 scale."""
        where, params = "", []
        if frm and to:
            where = "WHERE substr(at, 1, 10) BETWEEN ? AND ?"
            params = [frm, to]
        rows = self.store.query(f"SELECT user_id, rating FROM question_feedbacks {where}", params)
        histogram: dict[int, int] = {}
        per_user: dict[str, list[int]] = {}
        for row in rows:
            histogram[row["rating"]] = histogram.get(row["rating"], 0) + 1
            per_user.setdefault(row["user_id"], []).append(row["rating"])
        if not per_user:
            return {"histogram": {}, "fraction_satisfied": 0.0, "raters": 0}
        satisfied = sum(
            1 for ratings in per_user.values()
            if sum(ratings) / len(ratings) >= SATISFIED_MEAN_RATING
        )
        return {
            "histogram": dict(sorted(histogram.items())),
            "fraction_satisfied": satisfied / len(per_user),
            "raters": len(per_user),
        }

    def processing_time_stats(self, frm: Optional[str] = None, to: Optional[str] = None) -> dict:
        """Queued-to-done wall time for completed jobs, optionally filtered by
        the UTC day the job finished. p95 uses the nearest-rank method."""
        jobs = self.store.list_jobs(["done"])
        per_job = []
        for job in jobs:
            queued = job["timestamps"].get("queued")
            done = job["timestamps"].get("done")
            if not queued or not done:
                continue
            if frm and to and not (frm <= done[:10] <= to):
                continue
            seconds = (parse_rfc3339(done) - parse_rfc3339(queued)).total_seconds()
            per_job.append({"job_id": job["id"], "seconds": seconds})
        if not per_job:
            return {"median_seconds": None, "p95_seconds": None, "jobs": []}
        durations = sorted(j["seconds"] for j in per_job)
        median = statistics.median(durations)
        p95 = durations[max(0, ceil(0.95 * len(durations)) - 1)]
        return {"median_seconds": median, "p95_seconds": p95, "jobs": per_job}
