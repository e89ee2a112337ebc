"""Job state machine: document in, validated question bank out.

States move queued -> ocr -> generating -> inserting -> done, any non-terminal
state may fall to failed. Every transition is persisted before the next
stage's side effects, and each stage's output is written to the document
audit store before the transition, so a crash at any boundary resumes (or
restarts the stage) without duplicating questions: insertion is transactional
and keyed by course and fingerprint.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, Optional

from .config import AppConfig
from .errors import DomainError, RETRYABLE_CODES
from .events import (
    EventBus,
    ProgressEvent,
    STAGE_DONE,
    STAGE_FAILED,
    STAGE_GENERATING,
    STAGE_INSERTING,
    STAGE_OCR,
    STAGE_UPLOADING,
)
from .ocr import layout_to_text, normalize_layout
from .store import Store
from .synthesis import (
    SynthesisProvider,
    draft_to_item,
    generate_with_model,
    parse_model_output,
    validate_and_dedupe,
    window_text,
)
from .util import Clock, new_id, rfc3339, utcnow

JOB_QUEUED = "queued"
JOB_OCR = "ocr"
JOB_GENERATING = "generating"
JOB_INSERTING = "inserting"
JOB_DONE = "done"
JOB_FAILED = "failed"
ACTIVE_STATES = (JOB_QUEUED, JOB_OCR, JOB_GENERATING, JOB_INSERTING)

MAX_STAGE_ATTEMPTS = 3

ARTIFACT_OCR_RAW = "ocr-raw"
ARTIFACT_LAYOUT = "ocr-normalized"
ARTIFACT_DRAFTS = "drafts"

StageHook = Callable[[str, str], None]


class JobRunner:
    """Executes pipeline jobs against the durable queue in the store."""

    def __init__(self, store: Store, config: AppConfig, ocr_provider,
                 synth_provider: SynthesisProvider, bus: Optional[EventBus] = None,
                 clock: Clock = utcnow, stage_hook: Optional[StageHook] = None):
        self.store = store
        self.config = config
        self.ocr_provider = ocr_provider
        self.synth_provider = synth_provider
        self.bus = bus or EventBus()
        self.clock = clock
        self.stage_hook = stage_hook
        self._executor: Optional[ThreadPoolExecutor] = None
        self._executor_lock = threading.Lock()

    # -- public surface ------------------------------------------------------

    def submit_job(self, document_id: str, course_id: str, paper_meta: dict) -> str:
        if self.store.get_document(document_id) is None:
            raise DomainError("unknown-document", f"no document {document_id} in the audit store")
        course = self.store.get_course(course_id)
        if course is None:
            raise DomainError("unknown-course", f"no course {course_id}")
        job_id = new_id("job")
        self.store.create_job({
            "id": job_id,
            "document_id": document_id,
            "course_id": course.id,
            "paper_title": paper_meta.get("title", "Untitled paper"),
            "paper_year": int(paper_meta.get("year", self.clock().year)),
            "state": JOB_QUEUED,
            "timestamps": {JOB_QUEUED: rfc3339(self.clock())},
        })
        self._emit(job_id, STAGE_UPLOADING, 100.0, "document received, job queued")
        return job_id

    def run_job(self, job_id: str) -> str:
        job = self.store.load_job(job_id)
        if job is None:
            raise DomainError("unknown-job", f"no job {job_id}")
        if job["state"] != JOB_QUEUED:
            raise DomainError("job-not-queued", f"job {job_id} is {job['state']}")
        return self._run(job)

    def start_async(self, job_id: str) -> Future:
        with self._executor_lock:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(
                    max_workers=self.config.job_concurrency, thread_name_prefix="job"
                )
        job = self.store.load_job(job_id)
        if job is None:
            raise DomainError("unknown-job", f"no job {job_id}")
        return self._executor.submit(self._run, job)

    def recover(self) -> list[str]:
        """Resume every job interrupted mid-flight (call on process start)."""
        resumed = []
        for job in self.store.list_jobs(ACTIVE_STATES):
            self._run(job)
            resumed.append(job["id"])
        return resumed

    def job_status(self, job_id: str) -> dict:
        job = self.store.load_job(job_id)
        if job is None:
            raise DomainError("unknown-job", f"no job {job_id}")
        return {
            "state": job["state"],
            "events": job["events"],
            "result": job["result"],
            "failure": job["failure"],
        }

    # -- internals -------------------------------------------------------------

    def _emit(self, job_id: str, stage: str, percent: float, log: str) -> None:
        at = rfc3339(self.clock())
        self.store.append_job_event(
            job_id, {"stage": stage, "percent": percent, "log": log, "ts": at}
        )
        self.bus.publish(ProgressEvent(job_id, stage, percent, log, at))

    def _advance(self, job: dict, state: str) -> None:
        job["state"] = state
        job["timestamps"][state] = rfc3339(self.clock())
        self.store.save_job(job)
        if self.stage_hook is not None:
            self.stage_hook(job["id"], state)

    def _fail(self, job: dict, stage: str, exc: Exception) -> None:
        code = exc.code if isinstance(exc, DomainError) else "internal-error"
        job["failure"] = {"stage": stage, "error_code": code, "message": str(exc)}
        self._advance(job, JOB_FAILED)
        self._emit(job["id"], STAGE_FAILED, 100.0, f"{stage} failed: {code}")

    def _with_retries(self, job: dict, stage: str, fn: Callable[[], object]) -> object:
        while True:
            attempts = job["attempt_counts"].get(stage, 0) + 1
            job["attempt_counts"][stage] = attempts
            self.store.save_job(job)
            try:
                return fn()
            except DomainError as exc:
                if exc.code in RETRYABLE_CODES and attempts < MAX_STAGE_ATTEMPTS:
                    self._emit(job["id"], stage, 0.0,
                               f"attempt {attempts} failed ({exc.code}), retrying")
                    continue
                raise

    def _run(self, job: dict) -> str:
        stage = job["state"]
        try:
            while True:
                stage = job["state"]
                if stage == JOB_QUEUED:
                    self._advance(job, JOB_OCR)
                elif stage == JOB_OCR:
                    self._stage_ocr(job)
                    self._advance(job, JOB_GENERATING)
                elif stage == JOB_GENERATING:
                    self._stage_generate(job)
                    self._advance(job, JOB_INSERTING)
                elif stage == JOB_INSERTING:
                    result = self._stage_insert(job)
                    job["result"] = result
                    self._advance(job, JOB_DONE)
                    self._emit(
                        job["id"], STAGE_DONE, 100.0,
                        f"done: {result['accepted_count']} questions "
                        f"({result['dropped_count']} dropped)",
                    )
                    return JOB_DONE
                else:
                    return job["state"]
        except Exception as exc:  # SimulatedCrash-style BaseExceptions propagate
            self._fail(job, stage, exc)
            return JOB_FAILED

    def _stage_ocr(self, job: dict) -> None:
        doc = self.store.get_document(job["document_id"])
        if doc is None:
            raise DomainError("unknown-document", "document vanished from the audit store")
        self._emit(job["id"], STAGE_OCR, 0.0, f"analyzing {doc['filename']}")
        analysis = self._with_retries(
            job, JOB_OCR, lambda: self.ocr_provider.analyze(doc["data"], doc["content_type"])
        )
        if analysis.raw is not None:
            self.store.put_artifact(job["document_id"], ARTIFACT_OCR_RAW, analysis.raw)
        layout = analysis.layout
        layout.source_document_id = job["document_id"]
        self.store.put_artifact(
            job["document_id"], ARTIFACT_LAYOUT, json.dumps(layout.to_dict(), ensure_ascii=False)
        )
        pages = len(layout.pages)
        self._emit(job["id"], STAGE_OCR, 100.0, f"layout ready: {pages} pages")

    def _load_layout(self, job: dict):
        payload = self.store.get_artifact(job["document_id"], ARTIFACT_LAYOUT)
        if payload is None:
            raise DomainError("internal-error", "layout artifact missing; cannot resume")
        return normalize_layout(json.loads(payload))

    def _context_tags(self, job: dict) -> dict:
        course = self.store.get_course(job["course_id"])
        institution = ""
        if course and course.institution_ids:
            inst_id = sorted(course.institution_ids)[0]
            row = self.store.query_one("SELECT name FROM institutions WHERE id = ?", (inst_id,))
            institution = row["name"] if row else ""
        return {
            "institution": institution,
            "course_code": course.code if course else "",
            "locale_note": self.config.locale_note,
        }

    def _stage_generate(self, job: dict) -> None:
        layout = self._load_layout(job)
        ordered = layout_to_text(layout)
        bundles = window_text(
            ordered, self.config.window_chars,
            system_instructions=self.config.system_prompt(),
            context_tags=self._context_tags(job),
        )
        self._emit(job["id"], STAGE_GENERATING, 0.0, f"{len(bundles)} prompt windows")

        outputs: list = [None] * len(bundles)
        progress_lock = threading.Lock()
        completed = 0

        def synthesize(i: int, bundle):
            nonlocal completed
            result = generate_with_model(
                bundle, self.synth_provider,
                persist=lambda raw: self.store.put_artifact(
                    job["document_id"], f"synthesis-raw-{i}", raw
                ),
                max_response_bytes=self.config.max_provider_response_bytes,
            )
            outputs[i] = parse_model_output(result.raw)
            with progress_lock:
                completed += 1
                self._emit(job["id"], STAGE_GENERATING,
                           100.0 * completed / len(bundles),
                           f"window {i + 1}/{len(bundles)} parsed")

        def run_all():
            if not bundles:
                return
            if len(bundles) == 1 or self.config.synth_concurrency <= 1:
                for i, bundle in enumerate(bundles):
                    synthesize(i, bundle)
                return
            with ThreadPoolExecutor(max_workers=self.config.synth_concurrency) as pool:
                futures = [pool.submit(synthesize, i, b) for i, b in enumerate(bundles)]
                for f in futures:
                    f.result()

        self._with_retries(job, JOB_GENERATING, run_all)

        course = self.store.get_course(job["course_id"])
        drafts = []
        rejected = 0
        for output in outputs:
            if output is None:
                continue
            rejected += len(output.rejected)
            for draft in output.drafts:
                draft.generator = self.synth_provider.generator_kind
                if not draft.concept_names and course is not None:
                    draft.concept_names = [course.code]
                drafts.append(draft)
        artifact = {
            "provider": self.synth_provider.name,
            "model_version": self.synth_provider.model_version,
            "generator": self.synth_provider.generator_kind,
            "rejected": rejected,
            "items": [draft_to_item(d) for d in drafts],
        }
        self.store.put_artifact(
            job["document_id"], ARTIFACT_DRAFTS, json.dumps(artifact, ensure_ascii=False)
        )
        if bundles:
            self._emit(job["id"], STAGE_GENERATING, 100.0,
                       f"{len(drafts)} drafts, {rejected} fragments rejected")

    def _stage_insert(self, job: dict) -> dict:
        payload = self.store.get_artifact(job["document_id"], ARTIFACT_DRAFTS)
        if payload is None:
            raise DomainError("internal-error", "drafts artifact missing; cannot resume")
        artifact = json.loads(payload)
        parsed = parse_model_output(json.dumps({"questions": artifact["items"]}))
        drafts = parsed.drafts
        for draft in drafts:
            draft.generator = artifact.get("generator", draft.generator)

        self._emit(job["id"], STAGE_INSERTING, 0.0, f"validating {len(drafts)} drafts")
        existing = self.store.existing_fingerprints(job["course_id"])
        own = {
            r["fingerprint"] for r in self.store.query(
                "SELECT fingerprint FROM questions WHERE source_document_id = ?",
                (job["document_id"],),
            )
        }
        # A re-run after a crash must not count this document's own prior
        # insertions as foreign duplicates; insertion itself is idempotent.
        dedupe = validate_and_dedupe(drafts, existing - own)
        inserted = self.store.insert_question_bank(
            dedupe.accepted, job["course_id"],
            {"title": job["paper_title"], "year": job["paper_year"]},
            document_id=job["document_id"],
            publish=not self.config.review_first,
        )
        self._emit(job["id"], STAGE_INSERTING, 100.0,
                   f"inserted bank for paper {inserted['past_paper_id']}")
        return {
            "past_paper_id": inserted["past_paper_id"],
            "accepted_count": len(dedupe.accepted),
            "dropped_count": len(dedupe.dropped) + int(artifact.get("rejected", 0)),
        }
