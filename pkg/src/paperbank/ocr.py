"""Document-analysis stage: raw document bytes to a normalized layout.

Two providers ship behind one interface: a fixture provider that resolves
documents by content hash against a directory of layout files (pure function
of the input bytes, so end-to-end runs are cloud-free and deterministic), and
a thin HTTPS client for a remote analysis service.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import httpx

from .errors import DomainError

FIXED_PRODUCED_AT = "1970-01-01T00:00:00.000000+00:00"
RETRY_DELAYS = (1.0, 4.0, 16.0)


@dataclass
class Word:
    text: str
    confidence: float = 1.0


@dataclass
class Line:
    words: list[Word] = field(default_factory=list)

    @property
    def text(self) -> str:
        return " ".join(w.text for w in self.words)


@dataclass
class Paragraph:
    lines: list[Line] = field(default_factory=list)

    @property
    def text(self) -> str:
        return "\n".join(line.text for line in self.lines)


@dataclass
class Page:
    number: int
    paragraphs: list[Paragraph] = field(default_factory=list)


@dataclass
class Table:
    page: int
    rows: list[list[str]] = field(default_factory=list)


@dataclass
class LayoutResult:
    pages: list[Page] = field(default_factory=list)
    tables: list[Table] = field(default_factory=list)
    source_document_id: Optional[str] = None
    provider_name: str = "fixture"
    produced_at: str = FIXED_PRODUCED_AT

    def to_dict(self) -> dict:
        return {
            "provider": self.provider_name,
            "produced_at": self.produced_at,
            "source_document_id": self.source_document_id,
            "pages": [
                {
                    "number": page.number,
                    "paragraphs": [
                        {"lines": [{"words": [{"text": w.text, "confidence": w.confidence}
                                              for w in line.words]}
                                   for line in para.lines]}
                        for para in page.paragraphs
                    ],
                }
                for page in self.pages
            ],
            "tables": [{"page": t.page, "rows": t.rows} for t in self.tables],
        }


@dataclass
class AnalysisResult:
    """What a provider hands back: the normalized layout plus the verbatim
    payload it was derived from (persisted for auditing when present)."""

    layout: LayoutResult
    raw: Optional[str] = None


@dataclass
class OrderedText:
    """Reading-order text plus per-paragraph character ranges, so downstream
    consumers can point back at the source paragraph."""

    text: str
    offsets: dict[tuple[int, int], tuple[int, int]] = field(default_factory=dict)

    def locate(self, pos: int) -> Optional[tuple[int, int]]:
        for key, (start, end) in self.offsets.items():
            if start <= pos < max(end, start + 1):
                return key
        return None


def _bad(reason: str) -> DomainError:
    return DomainError("provider-bad-response", reason)


def _parse_word(raw: Any) -> Word:
    if isinstance(raw, str):
        return Word(raw, 1.0)
    if isinstance(raw, dict) and isinstance(raw.get("text"), str):
        confidence = raw.get("confidence", 1.0)
        if not isinstance(confidence, (int, float)) or not (0.0 <= confidence <= 1.0):
            raise _bad(f"word confidence {confidence!r} outside [0, 1]")
        return Word(raw["text"], float(confidence))
    raise _bad(f"unrecognized word shape: {raw!r}")


def _parse_line(raw: Any) -> Line:
    if isinstance(raw, str):
        return Line([Word(t) for t in raw.split()])
    if isinstance(raw, dict):
        if "words" in raw:
            return Line([_parse_word(w) for w in raw["words"]])
        if isinstance(raw.get("text"), str):
            return Line([Word(t) for t in raw["text"].split()])
    raise _bad(f"unrecognized line shape: {raw!r}")


def _parse_paragraph(raw: Any) -> Paragraph:
    if isinstance(raw, str):
        return Paragraph([Line([Word(t) for t in ln.split()]) for ln in raw.split("\n")])
    if isinstance(raw, dict):
        if "lines" in raw:
            return Paragraph([_parse_line(ln) for ln in raw["lines"]])
        text = raw.get("text", raw.get("content"))
        if isinstance(text, str):
            return Paragraph([Line([Word(t) for t in ln.split()]) for ln in text.split("\n")])
    raise _bad(f"unrecognized paragraph shape: {raw!r}")


def normalize_layout(payload: Any, provider_name: str = "fixture",
                     source_document_id: Optional[str] = None) -> LayoutResult:
    """Map a provider payload onto LayoutResult, enforcing its invariants:
    contiguous 1-based page numbers, confidences in [0, 1], order preserved."""
    if not isinstance(payload, dict) or not isinstance(payload.get("pages"), list):
        raise _bad("payload is missing a pages list")
    pages: list[Page] = []
    for i, raw_page in enumerate(payload["pages"]):
        if not isinstance(raw_page, dict):
            raise _bad("page entries must be objects")
        number = raw_page.get("number", raw_page.get("page_number"))
        if number != i + 1:
            raise _bad(f"page numbers must be contiguous from 1, got {number!r} at position {i}")
        paragraphs = [_parse_paragraph(p) for p in raw_page.get("paragraphs", [])]
        pages.append(Page(number=number, paragraphs=paragraphs))
    tables: list[Table] = []
    for raw_table in payload.get("tables", []):
        if not isinstance(raw_table, dict):
            raise _bad("table entries must be objects")
        rows = raw_table.get("rows", raw_table.get("cells"))
        if not isinstance(rows, list):
            raise _bad("table entries need a rows grid")
        page_no = raw_table.get("page", 1)
        if not any(p.number == page_no for p in pages):
            raise _bad(f"table references missing page {page_no}")
        tables.append(Table(page=page_no, rows=[[str(c) for c in row] for row in rows]))
    return LayoutResult(
        pages=pages,
        tables=tables,
        source_document_id=payload.get("source_document_id", source_document_id),
        provider_name=payload.get("provider", provider_name),
        produced_at=payload.get("produced_at", FIXED_PRODUCED_AT),
    )


def layout_to_text(layout: LayoutResult) -> OrderedText:
    """Concatenate paragraphs in reading order, blank line between blocks.

    Tables render after their page's paragraphs, one row per line with a
    " | " cell separator. Offsets cover paragraph blocks only; slicing an
    offset range out of the text reproduces that paragraph exactly.
    """
    blocks: list[str] = []
    offsets: dict[tuple[int, int], tuple[int, int]] = {}
    cursor = 0

    def push(block: str) -> int:
        nonlocal cursor
        if blocks:
            cursor += 2
        start = cursor
        blocks.append(block)
        cursor += len(block)
        return start

    for page in layout.pages:
        for idx, para in enumerate(page.paragraphs):
            text = para.text
            start = push(text)
            offsets[(page.number, idx)] = (start, start + len(text))
        for table in layout.tables:
            if table.page == page.number:
                push("\n".join(" | ".join(row) for row in table.rows))
    return OrderedText(text="\n\n".join(blocks), offsets=offsets)


def _text_to_layout(data: bytes) -> LayoutResult:
    """Plain-text passthrough: form feeds split pages, blank lines split paragraphs."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DomainError("unsupported-format", "text document is not valid UTF-8") from exc
    pages = []
    for i, page_text in enumerate(text.split("\f")):
        paragraphs = []
        for block in page_text.split("\n\n"):
            block = block.strip("\n")
            if block.strip():
                paragraphs.append(_parse_paragraph(block))
        pages.append(Page(number=i + 1, paragraphs=paragraphs))
    return LayoutResult(pages=pages, provider_name="fixture")


class FixtureOcrProvider:
    """Deterministic provider: content hash of the document selects a layout
    file (<sha256>.layout.json) from the fixtures directory. Plain text is
    analyzed directly."""

    name = "fixture"
    accepted_types = frozenset({"application/pdf", "text/plain"})

    def __init__(self, fixtures_dir: str):
        self.fixtures_dir = Path(fixtures_dir)

    def analyze(self, data: bytes, content_type: str) -> AnalysisResult:
        if not data:
            raise DomainError("unsupported-format", "empty document")
        if content_type not in self.accepted_types:
            raise DomainError("unsupported-format", f"unsupported content type {content_type}")
        if content_type == "text/plain":
            return AnalysisResult(layout=_text_to_layout(data))
        digest = hashlib.sha256(data).hexdigest()
        path = self.fixtures_dir / f"{digest}.layout.json"
        if not path.is_file():
            raise DomainError("fixture-missing", f"no layout fixture for sha256 {digest}")
        raw = path.read_text(encoding="utf-8")
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise _bad(f"layout fixture {path.name} is not valid JSON") from exc
        return AnalysisResult(layout=normalize_layout(payload, provider_name=self.name), raw=raw)


class RemoteOcrProvider:
    """HTTPS client for a hosted document-analysis endpoint.

    Transient failures retry with exponential backoff; in-flight requests are
    bounded to respect provider rate limits.
    """

    name = "remote"
    accepted_types = frozenset({"application/pdf", "image/png", "image/jpeg", "text/plain"})

    def __init__(self, endpoint: str, api_key: str, client: Optional[httpx.Client] = None,
                 sleeper: Callable[[float], None] = time.sleep, max_inflight: int = 4,
                 timeout: float = 60.0):
        if not endpoint:
            raise DomainError("provider-unavailable", "no OCR endpoint configured")
        self.endpoint = endpoint
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)
        self._sleeper = sleeper
        self._inflight = threading.Semaphore(max_inflight)

    def analyze(self, data: bytes, content_type: str) -> AnalysisResult:
        if not data:
            raise DomainError("unsupported-format", "empty document")
        if content_type not in self.accepted_types:
            raise DomainError("unsupported-format", f"unsupported content type {content_type}")
        last_error = "unreachable"
        with self._inflight:
            for attempt in range(len(RETRY_DELAYS) + 1):
                if attempt:
                    self._sleeper(RETRY_DELAYS[attempt - 1])
                try:
                    resp = self._client.post(
                        self.endpoint,
                        content=data,
                        headers={
                            "Content-Type": content_type,
                            "Ocp-Apim-Subscription-Key": self.api_key,
                        },
                    )
                except httpx.HTTPError as exc:
                    last_error = str(exc)
                    continue
                if resp.status_code in (429, 500, 502, 503, 504):
                    last_error = f"status {resp.status_code}"
                    continue
                if resp.status_code != 200:
                    raise _bad(f"provider returned status {resp.status_code}")
                try:
                    payload = resp.json()
                except json.JSONDecodeError as exc:
                    raise _bad("provider response is not JSON") from exc
                layout = normalize_layout(payload, provider_name=self.name)
                return AnalysisResult(layout=layout, raw=resp.text)
        raise DomainError("provider-unavailable", f"analysis endpoint unavailable: {last_error}")
