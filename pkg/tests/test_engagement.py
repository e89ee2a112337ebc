from __future__ import annotations

import random
from collections import defaultdict

import pytest

from paperbank.engagement import EngagementService
from paperbank.errors import DomainError
from paperbank.models import DraftChoice, DraftPart, DraftQuestion

PAPER = {"title": "Engagement fixture paper", "year": 2024}


@pytest.fixture
def service(store, clock):
    return EngagementService(store, clock=clock)


@pytest.fixture
def bank(store):
    course_id = store.get_course("PHA301").id
    drafts = [
        DraftQuestion(
            kind="mcq", stem=f"stem {i}", concept_names=["Antimicrobials", "Pharmacokinetics"],
            explanation=f"explanation {i}",
            choices=[DraftChoice("right", True), DraftChoice("wrong a"),
                     DraftChoice("wrong b"), DraftChoice("wrong c")],
        )
        for i in range(3)
    ] + [
        DraftQuestion(kind="saq", stem="saq stem", concept_names=["Emergencies"],
                      parts=[DraftPart(prompt="part one", marks=2),
                             DraftPart(prompt="part two", marks=3)]),
    ]
    result = store.insert_question_bank(drafts, course_id, PAPER)
    return result["question_ids"]


class TestResponses:
    def test_correct_choice(self, service, bank):
        out = service.record_mcq_response("usr_amina", bank[0], 0)
        assert out["correct"] is True
        assert out["explanation"] == "explanation 0"

    def test_incorrect_choice(self, service, bank):
        assert service.record_mcq_response("usr_amina", bank[0], 2)["correct"] is False

    def test_out_of_range_choice(self, service, bank):
        with pytest.raises(DomainError) as err:
            service.record_mcq_response("usr_amina", bank[0], 7)
        assert err.value.code == "bad-choice"

    def test_unpublished_question_not_available(self, service, store, bank):
        store.set_question_state(bank[1], "flagged")
        with pytest.raises(DomainError) as err:
            service.record_mcq_response("usr_amina", bank[1], 0)
        assert err.value.code == "not-available"

    def test_saq_response_stored_with_self_assessment(self, service, store, bank):
        out = service.record_saq_response(
            "usr_amina", bank[3],
            [{"index": 0, "text": "free text"}, {"index": 1, "text": "more"}],
            self_correct=True,
        )
        assert out["recorded"] is True
        row = store.query_one("SELECT * FROM user_saq_responses")
        assert row["self_correct"] == 1

    def test_saq_bad_part_index(self, service, bank):
        with pytest.raises(DomainError) as err:
            service.record_saq_response("usr_amina", bank[3], [{"index": 9, "text": "x"}], False)
        assert err.value.code == "bad-part"

    def test_progress_counters_updated(self, service, store, bank):
        service.record_mcq_response("usr_amina", bank[0], 0)
        service.record_mcq_response("usr_amina", bank[1], 1)
        progress = {p["concept_id"]: p for p in service.concept_progress("usr_amina")}
        for entry in progress.values():
            assert entry["attempted"] == 2
            assert entry["correct"] == 1
            assert entry["mastery"] == 0.5

    def test_progress_matches_brute_force_recount(self, service, store, bank, clock):
        rng = random.Random(3)
        users = ["usr_amina", "usr_otieno"]
        for _ in range(60):
            clock.tick(rng.randint(1, 900))
            user = rng.choice(users)
            qid = rng.choice(bank)
            question = store.get_question(qid)
            if question.kind == "mcq":
                service.record_mcq_response(user, qid, rng.randrange(4))
            else:
                service.record_saq_response(user, qid, [{"index": 0, "text": "t"}],
                                            rng.random() < 0.5)

        expected: dict[tuple[str, str], list[int]] = defaultdict(lambda: [0, 0])
        for row in store.query("SELECT * FROM user_mcq_responses"):
            q = store.get_question(row["question_id"])
            for concept in q.concept_ids:
                cell = expected[(row["user_id"], concept)]
                cell[0] += 1
                cell[1] += row["correct"]
        for row in store.query("SELECT * FROM user_saq_responses"):
            q = store.get_question(row["question_id"])
            for concept in q.concept_ids:
                cell = expected[(row["user_id"], concept)]
                cell[0] += 1
                cell[1] += row["self_correct"]

        for user in users:
            for entry in service.concept_progress(user):
                attempted, correct = expected[(user, entry["concept_id"])]
                assert (entry["attempted"], entry["correct"]) == (attempted, correct)

    def test_feedback_upserts_per_user_question(self, service, store, bank):
        service.record_feedback("usr_amina", bank[0], 2, "meh")
        service.record_feedback("usr_amina", bank[0], 5, "fixed now")
        rows = store.query("SELECT * FROM question_feedbacks")
        assert len(rows) == 1 and rows[0]["rating"] == 5

    def test_feedback_rating_bounds(self, service, bank):
        with pytest.raises(DomainError) as err:
            service.record_feedback("usr_amina", bank[0], 6)
        assert err.value.code == "bad-rating"


class TestStudySessions:
    def test_events_within_window_share_a_session(self, service, store, bank, clock):
        service.record_mcq_response("usr_amina", bank[0], 0)
        clock.tick(10 * 60)
        service.record_mcq_response("usr_amina", bank[1], 0)
        assert store.query_one("SELECT COUNT(*) AS n FROM user_study_sessions")["n"] == 1

    def test_idle_gap_closes_and_aggregates(self, service, store, bank, clock):
        service.record_mcq_response("usr_amina", bank[0], 0)
        clock.tick(20 * 60)
        service.record_mcq_response("usr_amina", bank[1], 0)
        clock.tick(2 * 3600)
        service.record_mcq_response("usr_amina", bank[2], 0)
        sessions = store.query("SELECT * FROM user_study_sessions ORDER BY started_at")
        assert len(sessions) == 2
        assert sessions[0]["ended_at"] is not None
        times = store.query_one("SELECT seconds FROM user_study_times WHERE user_id = 'usr_amina'")
        assert times["seconds"] == 20 * 60


class TestFlags:
    def test_flag_hides_from_students(self, service, store, bank):
        course_id = store.get_course("PHA301").id
        before = store.query_questions(role="student", course=course_id, page_size=50)["total"]
        flag = service.flag_question("usr_wanjiku", bank[0], "outdated guideline")
        after = store.query_questions(role="student", course=course_id, page_size=50)["total"]
        assert (before, after) == (4, 3)
        assert store.get_question(bank[0]).state == "flagged"
        assert flag.state == "open"

    def test_student_cannot_flag(self, service, bank):
        with pytest.raises(DomainError) as err:
            service.flag_question("usr_amina", bank[0], "nope")
        assert err.value.code == "forbidden"

    def test_republish_restores_visibility(self, service, store, bank):
        flag = service.flag_question("usr_wanjiku", bank[0], "check me")
        state = service.resolve_flag("usr_wanjiku", flag.id, "republish")
        assert state == "published"
        assert store.get_question(bank[0]).state == "published"

    def test_retire_is_terminal(self, service, store, bank):
        flag = service.flag_question("usr_wanjiku", bank[0], "wrong")
        assert service.resolve_flag("usr_admin", flag.id, "retire") == "retired"
        with pytest.raises(DomainError) as err:
            service.flag_question("usr_wanjiku", bank[0], "again")
        assert err.value.code == "not-flaggable"

    def test_double_resolve(self, service, bank):
        flag = service.flag_question("usr_wanjiku", bank[0], "check")
        service.resolve_flag("usr_wanjiku", flag.id, "republish")
        with pytest.raises(DomainError) as err:
            service.resolve_flag("usr_wanjiku", flag.id, "retire")
        assert err.value.code == "flag-closed"

    def test_bad_outcome(self, service, bank):
        flag = service.flag_question("usr_wanjiku", bank[0], "check")
        with pytest.raises(DomainError) as err:
            service.resolve_flag("usr_wanjiku", flag.id, "delete")
        assert err.value.code == "bad-outcome"


def seed_users(store, n):
    users = []
    for i in range(n):
        uid = f"usr_synth_{i:04d}"
        store.add_user("student", f"Synthetic {i}", "inst_uon", id=uid)
        users.append(uid)
    return users


class TestDailyActiveUsers:
    def test_identical_ranges_are_zero_change(self, service, store):
        for uid in seed_users(store, 5):
            service.log_engagement_event(uid, "mcq-response", "2025-05-01T10:00:00+00:00")
        out = service.daily_active_users("2025-05-01", "2025-05-01",
                                         "2025-05-01", "2025-05-01")
        assert out["percent_change"] == 0.0

    def test_undefined_baseline(self, service, store):
        for uid in seed_users(store, 3):
            service.log_engagement_event(uid, "feedback", "2025-05-02T10:00:00+00:00")
        with pytest.raises(DomainError) as err:
            service.daily_active_users("2025-05-02", "2025-05-02",
                                       "2025-04-01", "2025-04-01")
        assert err.value.code == "undefined-baseline"

    def test_zero_everywhere_is_zero_change(self, service):
        out = service.daily_active_users("2025-05-02", "2025-05-02",
                                         "2025-04-01", "2025-04-01")
        assert out["percent_change"] == 0.0

    def test_matches_brute_force_distinct_count(self, service, store):
        rng = random.Random(17)
        users = seed_users(store, 30)
        events = []
        for _ in range(1000):
            uid = rng.choice(users)
            day = f"2025-05-{rng.randint(1, 10):02d}"
            events.append((uid, day))
            service.log_engagement_event(uid, "mcq-response", f"{day}T{rng.randint(0, 23):02d}:00:00+00:00")

        by_day = defaultdict(set)
        for uid, day in events:
            by_day[day].add(uid)

        out = service.daily_active_users("2025-05-01", "2025-05-10")
        for point in out["series"]:
            assert point["dau"] == len(by_day.get(point["date"], set())), point["date"]

    def test_multiple_events_count_once(self, service, store):
        (uid,) = seed_users(store, 1)
        for hour in (8, 9, 15):
            service.log_engagement_event(uid, "feedback", f"2025-05-03T{hour:02d}:00:00+00:00")
        out = service.daily_active_users("2025-05-03", "2025-05-03")
        assert out["series"][0]["dau"] == 1


class TestSatisfaction:
    def test_nine_of_ten_raters(self, service, store, bank):
        users = seed_users(store, 10)
        for i, uid in enumerate(users):
            rating = 5 if i < 9 else 1
            service.record_feedback(uid, bank[0], rating)
        out = service.satisfaction_summary()
        assert out["fraction_satisfied"] == 0.9
        assert out["raters"] == 10
        assert out["histogram"] == {1: 1, 5: 9}

    def test_no_ratings(self, service):
        out = service.satisfaction_summary()
        assert out == {"histogram": {}, "fraction_satisfied": 0.0, "raters": 0}

    def test_all_fives(self, service, store, bank):
        for uid in seed_users(store, 4):
            service.record_feedback(uid, bank[1], 5)
        assert service.satisfaction_summary()["fraction_satisfied"] == 1.0

    def test_mean_threshold_uses_per_rater_mean(self, service, store, bank):
        (uid,) = seed_users(store, 1)
        service.record_feedback(uid, bank[0], 3)
        service.record_feedback(uid, bank[1], 5)
        # mean 4.0 counts as satisfied
        assert service.satisfaction_summary()["fraction_satisfied"] == 1.0


class TestProcessingStats:
    def make_job(self, store, job_id, queued, done):
        store.create_job({
            "id": job_id, "document_id": "doc_x", "course_id": "crs_x",
            "paper_title": "t", "paper_year": 2024, "state": "done",
            "timestamps": {"queued": queued, "done": done},
        })

    @pytest.fixture(autouse=True)
    def doc(self, store):
        store.execute(
            "INSERT INTO documents(id, sha256, filename, content_type, size, data, created_at) "
            "VALUES ('doc_x', 'h', 'f.pdf', 'application/pdf', 1, X'00', '2025-05-01T00:00:00+00:00')"
        )
        store.add_course("XX1", "X", id="crs_x")

    def test_duration_subtraction(self, service, store):
        self.make_job(store, "job_1", "2025-05-01T10:00:00+00:00", "2025-05-01T10:03:20+00:00")
        out = service.processing_time_stats()
        assert out["jobs"] == [{"job_id": "job_1", "seconds": 200.0}]
        assert out["median_seconds"] == 200.0

    def test_empty(self, service):
        out = service.processing_time_stats()
        assert out == {"median_seconds": None, "p95_seconds": None, "jobs": []}

    def test_median_matches_brute_force(self, service, store):
        rng = random.Random(5)
        durations = [rng.randint(30, 4000) for _ in range(7)]
        for i, seconds in enumerate(durations):
            minutes, rem = divmod(seconds, 60)
            done = f"2025-05-01T{10 + minutes // 60:02d}:{minutes % 60:02d}:{rem:02d}+00:00"
            self.make_job(store, f"job_{i}", "2025-05-01T10:00:00+00:00", done)
        out = service.processing_time_stats()
        ordered = sorted(durations)
        assert out["median_seconds"] == ordered[len(ordered) // 2]
        assert out["p95_seconds"] == ordered[-1]
