"""Question synthesis: prompt windows, providers, output parsing, dedupe.

The rule-based extractor is the centerpiece: a fixed grammar that recognizes
numbered question stems, lettered options, answer keys, short-answer parts
and mark annotations. It serves three roles at once: the offline synthesis
provider, the fallback when the remote model is down, and the oracle the
fixture corpus is labeled against. Its output is deterministic.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import httpx

from .errors import DomainError
from .models import (
    DraftChoice,
    DraftPart,
    DraftQuestion,
    GENERATOR_MODEL,
    GENERATOR_RULE_BASED,
    KINDS,
    MCQ,
    SAQ,
    question_fingerprint,
    validate_question,
)
from .ocr import OrderedText

MIN_WINDOW_CHARS = 2_000
RETRY_DELAYS = (1.0, 4.0, 16.0)
MAX_FRAGMENT_CHARS = 2_000

_KEY_HEADER_RE = re.compile(r"^(answers|answer\s+key)\s*:?\s*$", re.IGNORECASE)
_KEY_ENTRY_RE = re.compile(r"^(\d{1,3})\s*[.):\-]?\s*([A-Za-z])\s*\.?$")
_INLINE_ANSWER_RE = re.compile(r"^answer\s*[:.]\s*\(?([A-Za-z])\)?\s*\.?$", re.IGNORECASE)
_OPTION_RE = re.compile(r"^(\*)?\s*(?:\(([A-Za-z])\)|([A-Z])[.)])\s+(.*)$")
_PART_RE = re.compile(r"^([a-z])\)\s+(.*)$")
_STEM_PLAIN_RE = re.compile(r"^(\d{1,3})[.)]\s+(.*)$")
_STEM_Q_RE = re.compile(r"^(?:question|q)\s*(\d{1,3})\s*[.):]?\s*(.*)$", re.IGNORECASE)
_MARKS_RE = re.compile(r"\(\s*(\d+)\s*marks?\s*\)", re.IGNORECASE)


@dataclass
class PromptBundle:
    system_instructions: str
    user_content: str
    context_tags: dict = field(default_factory=dict)
    window_index: int = 0
    window_count: int = 1


@dataclass
class RejectedFragment:
    raw_fragment: str
    reason_code: str


@dataclass
class SynthesisOutput:
    drafts: list[DraftQuestion] = field(default_factory=list)
    rejected: list[RejectedFragment] = field(default_factory=list)
    provider_name: str = "rule-based"
    model_version: str = ""
    latency_ms: float = 0.0


@dataclass
class DroppedDraft:
    draft: DraftQuestion
    reason: str


@dataclass
class DedupeResult:
    accepted: list[DraftQuestion] = field(default_factory=list)
    dropped: list[DroppedDraft] = field(default_factory=list)


def window_text(ordered_text: OrderedText | str, max_window_chars: int,
                system_instructions: str = "", context_tags: Optional[dict] = None) -> list[PromptBundle]:
    """Split reading-order text into prompt windows on paragraph boundaries.

    Windows cover the text exactly once and in order: the separator between
    two windows travels with the earlier one, so concatenating every window's
    user content reproduces the input byte for byte. A single paragraph larger
    than the limit becomes its own oversized window.
    """
    if max_window_chars < MIN_WINDOW_CHARS:
        raise ValueError(f"max_window_chars must be >= {MIN_WINDOW_CHARS}")
    text = ordered_text.text if isinstance(ordered_text, OrderedText) else ordered_text
    if not text:
        return []
    blocks = text.split("\n\n")
    groups: list[list[str]] = []
    current: list[str] = []
    current_len = 0
    budget = max_window_chars - 2  # reserve room for the trailing separator
    for block in blocks:
        projected = current_len + (2 if current else 0) + len(block)
        if current and projected > budget:
            groups.append(current)
            current = [block]
            current_len = len(block)
        else:
            current.append(block)
            current_len = projected
    if current:
        groups.append(current)
    tags = context_tags or {}
    bundles = []
    for i, group in enumerate(groups):
        content = "\n\n".join(group)
        if i < len(groups) - 1:
            content += "\n\n"
        bundles.append(PromptBundle(
            system_instructions=system_instructions,
            user_content=content,
            context_tags=dict(tags),
            window_index=i,
            window_count=len(groups),
        ))
    return bundles


def _strip_marks(text: str) -> tuple[str, Optional[int]]:
    m = _MARKS_RE.search(text)
    if not m:
        return " ".join(text.split()), None
    cleaned = text[:m.start()] + " " + text[m.end():]
    return " ".join(cleaned.split()), int(m.group(1))


class _Block:
    def __init__(self, num: int, stem_first: str, start: int):
        self.num = num
        self.stem_lines = [stem_first] if stem_first else []
        self.options: list[dict] = []
        self.parts: list[dict] = []
        self.inline_answer: Optional[str] = None
        self.raw_lines: list[str] = []
        self.tail = "stem"
        self.start = start
        self.end = start

    def raw(self) -> str:
        return "\n".join(self.raw_lines)


def _scan(text: str) -> tuple[list[_Block], dict[int, str]]:
    blocks: list[_Block] = []
    key: dict[int, str] = {}
    current: Optional[_Block] = None
    in_key = False
    pos = 0
    for line in text.split("\n"):
        start = pos
        pos += len(line) + 1
        stripped = line.strip()
        if not stripped:
            # Paragraph boundary: a question block never spans paragraphs,
            # so later prose cannot glue onto its last option or part.
            current = None
            continue
        if in_key:
            m = _KEY_ENTRY_RE.match(stripped)
            if m:
                key[int(m.group(1))] = m.group(2).upper()
            continue
        if _KEY_HEADER_RE.match(stripped):
            current = None
            in_key = True
            continue

        stem_m = _STEM_PLAIN_RE.match(stripped) or _STEM_Q_RE.match(stripped)
        inline_m = _INLINE_ANSWER_RE.match(stripped)
        option_m = _OPTION_RE.match(stripped)
        part_m = _PART_RE.match(stripped)

        if inline_m and current is not None:
            current.inline_answer = inline_m.group(1).upper()
            current.raw_lines.append(stripped)
            current.end = start + len(line)
        elif option_m and current is not None:
            starred = bool(option_m.group(1))
            letter = (option_m.group(2) or option_m.group(3)).upper()
            body = option_m.group(4).strip()
            if body.endswith("*"):
                starred = True
                body = body[:-1].rstrip()
            current.options.append({"letter": letter, "text": body, "starred": starred})
            current.tail = "option"
            current.raw_lines.append(stripped)
            current.end = start + len(line)
        elif part_m and current is not None:
            current.parts.append({"letter": part_m.group(1), "text": part_m.group(2).strip()})
            current.tail = "part"
            current.raw_lines.append(stripped)
            current.end = start + len(line)
        elif stem_m:
            current = _Block(int(stem_m.group(1)), stem_m.group(2).strip(), start)
            current.raw_lines.append(stripped)
            current.end = start + len(line)
            blocks.append(current)
        elif current is not None:
            # Continuation of whatever was appended last.
            if current.tail == "option" and current.options:
                current.options[-1]["text"] += " " + stripped
            elif current.tail == "part" and current.parts:
                current.parts[-1]["text"] += " " + stripped
            else:
                current.stem_lines.append(stripped)
            current.raw_lines.append(stripped)
            current.end = start + len(line)
        # Prose outside any block is ignored.
    return blocks, key


def _classify(block: _Block, key: dict[int, str],
              span_of: Callable[[_Block], Optional[tuple]]) -> tuple[Optional[DraftQuestion], Optional[RejectedFragment]]:
    stem, stem_marks = _strip_marks(" ".join(block.stem_lines))
    if block.options:
        letters = [o["letter"] for o in block.options]
        if letters != [chr(ord("A") + i) for i in range(len(letters))]:
            return None, RejectedFragment(block.raw(), "non-contiguous-options")
        if len(block.options) < 2:
            return None, RejectedFragment(block.raw(), "no-options")
        starred = [i for i, o in enumerate(block.options) if o["starred"]]
        if starred:
            corrects = set(starred)
        else:
            letter = block.inline_answer or key.get(block.num)
            if letter is None:
                return None, RejectedFragment(block.raw(), "no-answer-key")
            idx = ord(letter) - ord("A")
            if not (0 <= idx < len(block.options)):
                return None, RejectedFragment(block.raw(), "no-answer-key")
            corrects = {idx}
        draft = DraftQuestion(
            kind=MCQ,
            stem=stem,
            choices=[
                DraftChoice(" ".join(o["text"].split()), i in corrects)
                for i, o in enumerate(block.options)
            ],
            confidence=1.0,
            generator=GENERATOR_RULE_BASED,
            source_span=span_of(block),
        )
        return draft, None

    if not stem and not block.parts:
        return None, None
    if block.parts:
        parts = []
        for p in block.parts:
            prompt, marks = _strip_marks(p["text"])
            parts.append(DraftPart(prompt=prompt, marks=marks or 1))
    else:
        parts = [DraftPart(prompt=stem, marks=stem_marks or 1)]
    draft = DraftQuestion(
        kind=SAQ,
        stem=stem,
        parts=parts,
        confidence=1.0,
        generator=GENERATOR_RULE_BASED,
        source_span=span_of(block),
    )
    return draft, None


def extract_questions_rule_based(ordered_text: OrderedText | str) -> SynthesisOutput:
    """Deterministic extraction over the fixed grammar.

    Stems are lines with a leading ordinal ("1.", "1)", "Q1", "Question 1");
    options are lettered lines consecutive from A; the correct choice comes
    from a starred option, an inline "Answer: C" line, or a trailing
    "Answers:" key block. Ordinal stems without options become short-answer
    questions, split into parts on lowercase "a)" markers, with marks taken
    from "(N marks)" annotations. Unparseable blocks land in `rejected`.
    """
    if isinstance(ordered_text, OrderedText):
        text = ordered_text.text
        locate = ordered_text.locate
    else:
        text = ordered_text
        locate = lambda pos: None  # noqa: E731

    def span_of(block: _Block) -> Optional[tuple]:
        first = locate(block.start)
        last = locate(max(block.end - 1, block.start))
        if first is None or last is None:
            return None
        return (first, last)

    blocks, key = _scan(text)
    out = SynthesisOutput(provider_name="rule-based", model_version="rule-grammar-1")
    for block in blocks:
        draft, rejected = _classify(block, key, span_of)
        if draft is not None:
            out.drafts.append(draft)
        elif rejected is not None:
            out.rejected.append(rejected)
    return out


# -- provider-facing serialization --------------------------------------------


def draft_to_item(draft: DraftQuestion) -> dict:
    item: dict = {
        "kind": draft.kind,
        "stem": draft.stem,
        "explanation": draft.explanation,
        "concepts": list(draft.concept_names),
        "confidence": draft.confidence,
    }
    if draft.kind == MCQ:
        item["choices"] = [{"text": c.text, "correct": c.is_correct} for c in draft.choices]
    else:
        item["parts"] = [
            {"prompt": p.prompt, "expected_answer": p.expected_answer, "marks": p.marks}
            for p in draft.parts
        ]
    return item


def parse_model_output(raw: str) -> SynthesisOutput:
    """Parse a provider's textual output into drafts; total over any input.

    Accepts a JSON array (optionally wrapped in a fenced code block or an
    object with a questions/items key). Every item is validated on its own:
    bad items are rejected with a reason code, good items become drafts, and
    nothing the provider says can raise.
    """
    out = SynthesisOutput(provider_name="model")
    data = _loads_lenient(raw)
    if data is None:
        out.rejected.append(RejectedFragment(raw[:MAX_FRAGMENT_CHARS], "malformed-item"))
        return out
    items = data
    if isinstance(data, dict):
        for rej in data.get("rejected", []) if isinstance(data.get("rejected"), list) else []:
            if isinstance(rej, dict):
                out.rejected.append(RejectedFragment(
                    str(rej.get("raw_fragment", ""))[:MAX_FRAGMENT_CHARS],
                    str(rej.get("reason_code", "malformed-item")),
                ))
        items = data.get("questions", data.get("items"))
        if items is None:
            items = [data] if "kind" in data else None
    if not isinstance(items, list):
        out.rejected.append(RejectedFragment(raw[:MAX_FRAGMENT_CHARS], "malformed-item"))
        return out

    for item in items:
        draft, reason = _parse_item(item)
        if draft is not None:
            out.drafts.append(draft)
        else:
            fragment = json.dumps(item, ensure_ascii=False, default=str)[:MAX_FRAGMENT_CHARS]
            out.rejected.append(RejectedFragment(fragment, reason or "malformed-item"))
    return out


def _loads_lenient(raw: str):
    if not isinstance(raw, str) or not raw.strip():
        return None
    candidates = [raw]
    fence = re.search(r"```(?:json)?\s*\n(.*?)```", raw, re.DOTALL)
    if fence:
        candidates.append(fence.group(1))
    for opener, closer in (("[", "]"), ("{", "}")):
        start, end = raw.find(opener), raw.rfind(closer)
        if 0 <= start < end:
            candidates.append(raw[start:end + 1])
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            continue
    return None


def _parse_item(item) -> tuple[Optional[DraftQuestion], Optional[str]]:
    if not isinstance(item, dict):
        return None, "malformed-item"
    kind = str(item.get("kind", "")).lower()
    if kind not in KINDS:
        return None, "bad-kind"
    stem = item.get("stem")
    if not isinstance(stem, str) or not stem.strip():
        return None, "missing-stem"
    explanation = item.get("explanation")
    if explanation is not None and not isinstance(explanation, str):
        explanation = str(explanation)
    concepts = [str(c) for c in item.get("concepts", []) if str(c).strip()] \
        if isinstance(item.get("concepts"), list) else []
    confidence = item.get("confidence", 0.5)
    if not isinstance(confidence, (int, float)):
        confidence = 0.5
    confidence = min(1.0, max(0.0, float(confidence)))

    try:
        if kind == MCQ:
            raw_choices = item.get("choices")
            if not isinstance(raw_choices, list) or not raw_choices:
                return None, "malformed-item"
            choices = []
            for c in raw_choices:
                if not isinstance(c, dict) or not isinstance(c.get("text"), str):
                    return None, "malformed-item"
                choices.append(DraftChoice(c["text"], bool(c.get("correct", c.get("is_correct", False)))))
            if sum(1 for c in choices if c.is_correct) != 1:
                return None, "missing-correct"
            draft = DraftQuestion(kind=MCQ, stem=stem.strip(), choices=choices,
                                  explanation=explanation, concept_names=concepts,
                                  confidence=confidence, generator=GENERATOR_MODEL)
        else:
            raw_parts = item.get("parts")
            if not isinstance(raw_parts, list) or not raw_parts:
                return None, "malformed-item"
            parts = []
            for p in raw_parts:
                if not isinstance(p, dict) or not isinstance(p.get("prompt"), str):
                    return None, "malformed-item"
                parts.append(DraftPart(
                    prompt=p["prompt"],
                    expected_answer=str(p.get("expected_answer", "") or ""),
                    marks=int(p.get("marks", 1)),
                ))
            draft = DraftQuestion(kind=SAQ, stem=stem.strip(), parts=parts,
                                  explanation=explanation, concept_names=concepts,
                                  confidence=confidence, generator=GENERATOR_MODEL)
    except (TypeError, ValueError):
        return None, "malformed-item"
    return draft, None


# -- providers -----------------------------------------------------------------


class SynthesisProvider(Protocol):
    name: str
    generator_kind: str
    model_version: str

    def generate(self, bundle: PromptBundle) -> str: ...


class LocalRuleBasedProvider:
    """The rule-based extractor behind the provider interface: emits the same
    structured item JSON a remote model is prompted to produce."""

    name = "local"
    generator_kind = GENERATOR_RULE_BASED
    model_version = "rule-grammar-1"

    def generate(self, bundle: PromptBundle) -> str:
        out = extract_questions_rule_based(bundle.user_content)
        payload = {
            "questions": [draft_to_item(d) for d in out.drafts],
            "rejected": [
                {"raw_fragment": r.raw_fragment, "reason_code": r.reason_code}
                for r in out.rejected
            ],
        }
        return json.dumps(payload, ensure_ascii=False)


class RemoteChatProvider:
    """Chat-completion HTTPS client; model version travels with every output."""

    name = "remote"
    generator_kind = GENERATOR_MODEL

    def __init__(self, endpoint: str, api_key: str, model: str = "o3-mini",
                 client: Optional[httpx.Client] = None,
                 sleeper: Callable[[float], None] = time.sleep,
                 timeout: float = 120.0, max_response_bytes: int = 2 * 1024 * 1024):
        if not endpoint:
            raise DomainError("provider-unavailable", "no synthesis endpoint configured")
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.model_version = model
        self.max_response_bytes = max_response_bytes
        self._client = client or httpx.Client(timeout=timeout)
        self._sleeper = sleeper

    def generate(self, bundle: PromptBundle) -> str:
        system = bundle.system_instructions
        if bundle.context_tags:
            tags = "; ".join(f"{k}={v}" for k, v in sorted(bundle.context_tags.items()) if v)
            if tags:
                system = f"{system}\nContext: {tags}"
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": bundle.user_content},
            ],
        }
        last_error = "unreachable"
        for attempt in range(len(RETRY_DELAYS) + 1):
            if attempt:
                self._sleeper(RETRY_DELAYS[attempt - 1])
            try:
                resp = self._client.post(
                    self.endpoint, json=body,
                    headers={"Authorization": f"Bearer {self.api_key}"},
                )
            except httpx.TimeoutException as exc:
                raise DomainError("provider-timeout", str(exc)) from exc
            except httpx.HTTPError as exc:
                last_error = str(exc)
                continue
            if resp.status_code in (429, 500, 502, 503, 504):
                last_error = f"status {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise DomainError("provider-bad-response", f"status {resp.status_code}")
            if len(resp.content) > self.max_response_bytes:
                raise DomainError("provider-bad-response", "response exceeds size cap")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                raise DomainError("provider-bad-response", f"unexpected response shape: {exc}") from exc
        raise DomainError("provider-unavailable", f"synthesis endpoint unavailable: {last_error}")


@dataclass
class GenerationResult:
    raw: str
    latency_ms: float
    provider_name: str
    model_version: str


def generate_with_model(bundle: PromptBundle, provider: SynthesisProvider,
                        persist: Optional[Callable[[str], None]] = None,
                        max_response_bytes: int = 2 * 1024 * 1024) -> GenerationResult:
    """Invoke a provider and persist its raw output before anyone parses it."""
    started = time.perf_counter()
    raw = provider.generate(bundle)
    latency_ms = (time.perf_counter() - started) * 1000.0
    if len(raw.encode("utf-8", errors="replace")) > max_response_bytes:
        raise DomainError("provider-bad-response", "provider output exceeds size cap")
    if persist is not None:
        persist(raw)
    return GenerationResult(
        raw=raw,
        latency_ms=latency_ms,
        provider_name=provider.name,
        model_version=provider.model_version,
    )


def validate_and_dedupe(drafts: list[DraftQuestion],
                        existing_fingerprints: set[str]) -> DedupeResult:
    """Gate before insertion: drop invalid drafts, drafts already in the
    store, and later in-batch duplicates. Accepted order preserves input order."""
    result = DedupeResult()
    seen: set[str] = set()
    for draft in drafts:
        report = validate_question(draft)
        if not report.ok:
            result.dropped.append(DroppedDraft(draft, "invalid"))
            continue
        fp = question_fingerprint(draft)
        if fp in existing_fingerprints:
            result.dropped.append(DroppedDraft(draft, "duplicate-existing"))
            continue
        if fp in seen:
            result.dropped.append(DroppedDraft(draft, "duplicate-batch"))
            continue
        seen.add(fp)
        result.accepted.append(draft)
    return result
