"""Small shared helpers: ids, hashing, timestamps, canonical JSON."""

from __future__ import annotations

import hashlib
import json
import uuid
from datetime import datetime, timezone
from typing import Any, Callable

Clock = Callable[[], datetime]


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def rfc3339(dt: datetime) -> str:
    """RFC 3339 UTC with fixed microsecond precision (lexicographically sortable)."""
    return dt.astimezone(timezone.utc).isoformat(timespec="microseconds")


def parse_rfc3339(s: str) -> datetime:
    return datetime.fromisoformat(s)


def day_of(ts: str) -> str:
    """UTC calendar day (YYYY-MM-DD) of an RFC 3339 timestamp string."""
    return ts[:10]


def new_id(prefix: str) -> str:
    return f"{prefix}_{uuid.uuid4().hex[:12]}"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj: Any) -> str:
    """Deterministic serialization: sorted keys, 2-space indent, LF, trailing newline."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"
