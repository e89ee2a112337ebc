"""Core entities and the invariants every other module relies on.

Everything here is a plain value type plus pure functions, safe to share
across threads without coordination. Persistence lives in `store`, lifecycle
rules in `engagement`.
"""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass, field
from typing import Optional

MCQ = "mcq"
SAQ = "saq"
KINDS = (MCQ, SAQ)

STATE_DRAFT = "draft"
STATE_PUBLISHED = "published"
STATE_FLAGGED = "flagged"
STATE_RETIRED = "retired"
QUESTION_STATES = (STATE_DRAFT, STATE_PUBLISHED, STATE_FLAGGED, STATE_RETIRED)

ROLE_STUDENT = "student"
ROLE_FACULTY = "faculty"
ROLE_ADMIN = "admin"
ROLES = (ROLE_STUDENT, ROLE_FACULTY, ROLE_ADMIN)

GENERATOR_RULE_BASED = "rule-based"
GENERATOR_MODEL = "model"
GENERATOR_MANUAL = "manual"

MIN_CHOICES = 2
MAX_CHOICES = 10
MIN_PAPER_YEAR = 1900


@dataclass
class Institution:
    id: str
    name: str
    country_code: str


@dataclass
class Course:
    id: str
    code: str
    title: str
    institution_ids: set[str] = field(default_factory=set)


@dataclass
class Concept:
    id: str
    name: str
    parent_id: Optional[str] = None


@dataclass
class PastPaper:
    id: str
    course_id: str
    year: int
    title: str
    source_document_id: Optional[str] = None


@dataclass
class UserAccount:
    id: str
    role: str
    institution_id: Optional[str]
    display_name: str


@dataclass
class McqChoice:
    index: int
    text: str
    is_correct: bool


@dataclass
class SaqPart:
    index: int
    prompt: str
    expected_answer: str = ""
    marks: int = 1


@dataclass
class Provenance:
    source_document_id: Optional[str]
    generator: str
    confidence: float
    created_at: str


@dataclass
class Question:
    """A persisted question with its children loaded."""

    id: str
    kind: str
    stem: str
    explanation: Optional[str]
    past_paper_id: str
    course_id: str
    concept_ids: set[str]
    state: str
    provenance: Provenance
    fingerprint: str
    choices: list[McqChoice] = field(default_factory=list)
    parts: list[SaqPart] = field(default_factory=list)


@dataclass
class DraftChoice:
    text: str
    is_correct: bool = False


@dataclass
class DraftPart:
    prompt: str
    expected_answer: str = ""
    marks: int = 1


@dataclass
class DraftQuestion:
    """Generated question content before it gets an id, a state, or a home.

    `concept_names` are provider-suggested topic names; empty means "use the
    course default". The orchestrator resolves names to concept ids at
    insertion time.
    """

    kind: str
    stem: str
    choices: list[DraftChoice] = field(default_factory=list)
    parts: list[DraftPart] = field(default_factory=list)
    explanation: Optional[str] = None
    concept_names: list[str] = field(default_factory=list)
    confidence: float = 1.0
    generator: str = GENERATOR_MODEL
    source_span: Optional[tuple] = None


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _strip_edges(s: str) -> str:
    start, end = 0, len(s)
    while start < end and (s[start].isspace() or unicodedata.category(s[start]).startswith("P")):
        start += 1
    while end > start and (s[end - 1].isspace() or unicodedata.category(s[end - 1]).startswith("P")):
        end -= 1
    return s[start:end]


def normalize_text(s: str) -> str:
    """Canonical comparison form: NFC, lowercase, collapsed whitespace,
    edge punctuation stripped.

    Iterates to a fixpoint because lowercasing can denormalize NFC for a few
    exotic code points; a bounded loop keeps the function idempotent for
    arbitrary input.
    """
    for _ in range(8):
        out = unicodedata.normalize("NFC", s).lower()
        out = " ".join(out.split())
        out = _strip_edges(out)
        if out == s:
            break
        s = out
    return s


def question_fingerprint(q: Question | DraftQuestion) -> str:
    """Content-addressed identity for dedupe and idempotent insertion.

    SHA-256 over the normalized stem followed by the sorted normalized child
    texts (choice texts for MCQs, part prompts for SAQs), joined with a unit
    separator. Ids, timestamps, confidence, state and explanation do not
    participate, so cosmetic or metadata differences never split identity.
    """
    pieces = [normalize_text(q.stem)]
    if q.choices:
        texts = [normalize_text(c.text) for c in q.choices]
    else:
        texts = [normalize_text(p.prompt) for p in q.parts]
    pieces.extend(sorted(texts))
    return hashlib.sha256("\x1f".join(pieces).encode("utf-8")).hexdigest()


def validate_question(q: Question | DraftQuestion) -> ValidationReport:
    """Check every content invariant; violations come back as stable codes.

    Referential checks (course, paper, concept ids resolving) happen at
    insertion time inside the store, not here.
    """
    violations: list[str] = []
    if q.kind not in KINDS:
        violations.append("bad-kind")
    if not q.stem or not normalize_text(q.stem):
        violations.append("empty-stem")

    concepts = getattr(q, "concept_ids", None)
    if concepts is None:
        concepts = getattr(q, "concept_names", None)
    if not concepts:
        violations.append("no-concepts")

    if q.kind == MCQ:
        n = len(q.choices)
        if n < MIN_CHOICES:
            violations.append("too-few-choices")
        if n > MAX_CHOICES:
            violations.append("too-many-choices")
        correct = sum(1 for c in q.choices if c.is_correct)
        if correct == 0:
            violations.append("no-correct-choice")
        elif correct > 1:
            violations.append("multiple-correct-choices")
        normed = [normalize_text(c.text) for c in q.choices]
        if len(set(normed)) != len(normed):
            violations.append("duplicate-choices")
        indices = [c.index for c in q.choices if hasattr(c, "index")]
        if indices and indices != list(range(len(indices))):
            violations.append("non-contiguous-choices")
    elif q.kind == SAQ:
        if not q.parts:
            violations.append("saq-no-parts")
        if any(p.marks < 1 for p in q.parts):
            violations.append("bad-marks")
        indices = [p.index for p in q.parts if hasattr(p, "index")]
        if indices and indices != list(range(len(indices))):
            violations.append("non-contiguous-parts")

    return ValidationReport(violations)
