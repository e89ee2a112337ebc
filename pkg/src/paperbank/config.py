"""Runtime configuration.

Precedence: explicit overrides (CLI flags) > environment variables > config
file > built-in defaults. The config file uses the same keys as the
environment variables, lowercased.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

KIB = 1024
MIB = 1024 * 1024

DEFAULT_SYSTEM_PROMPT = (
    "You extract exam-style questions from course material. Return a JSON array "
    "of items. Each item has: kind ('mcq' or 'saq'), stem, explanation, concepts "
    "(list of topic names), confidence (0..1), and either choices (objects with "
    "text and correct, exactly one correct) or parts (objects with prompt, "
    "expected_answer, marks). Output JSON only."
)

_ENV_KEYS = {
    "database_url": "DATABASE_URL",
    "fixtures_dir": "OCR_FIXTURES_DIR",
    "ocr_endpoint": "OCR_ENDPOINT",
    "ocr_api_key": "OCR_API_KEY",
    "llm_endpoint": "LLM_ENDPOINT",
    "llm_api_key": "LLM_API_KEY",
    "llm_model": "LLM_MODEL",
    "synth_provider": "SYNTH_PROVIDER",
    "bind_addr": "BIND_ADDR",
    "auth_tokens_file": "AUTH_TOKENS_FILE",
    "prompt_path": "PROMPT_PATH",
    "chunk_size": "CHUNK_SIZE",
    "max_upload_bytes": "MAX_UPLOAD_BYTES",
    "window_chars": "WINDOW_CHARS",
    "review_first": "REVIEW_FIRST",
    "locale_note": "LOCALE_NOTE",
}

_INT_FIELDS = {"chunk_size", "max_upload_bytes", "window_chars"}
_BOOL_FIELDS = {"review_first"}


@dataclass
class AppConfig:
    database_url: str = "paperbank.db"
    fixtures_dir: str = "fixtures/layouts"
    ocr_endpoint: str = ""
    ocr_api_key: str = ""
    llm_endpoint: str = ""
    llm_api_key: str = ""
    llm_model: str = "o3-mini"
    synth_provider: str = "local"
    bind_addr: str = "127.0.0.1:8080"
    auth_tokens_file: str = ""
    prompt_path: str = "prompts/system.txt"
    locale_note: str = ""

    # Upload channel. Chunk size is clamped to [64 KiB, 1 MiB]: small enough
    # to survive flaky links, large enough to bound framing overhead.
    chunk_size: int = 256 * KIB
    min_chunk_size: int = 64 * KIB
    max_chunk_size: int = 1 * MIB
    max_upload_bytes: int = 50 * MIB
    session_idle_seconds: int = 24 * 3600

    # Synthesis.
    window_chars: int = 24_000
    synth_concurrency: int = 2
    provider_timeout_seconds: float = 120.0
    max_provider_response_bytes: int = 2 * MIB

    # Orchestration.
    job_concurrency: int = 2
    review_first: bool = False

    def effective_chunk_size(self) -> int:
        return max(self.min_chunk_size, min(self.max_chunk_size, self.chunk_size))

    def system_prompt(self) -> str:
        """Prompt asset, re-read on every job start so edits take effect live."""
        path = Path(self.prompt_path)
        if path.is_file():
            return path.read_text(encoding="utf-8").strip()
        return DEFAULT_SYSTEM_PROMPT


def _coerce(name: str, value: Any) -> Any:
    if name in _INT_FIELDS and isinstance(value, str):
        return int(value)
    if name in _BOOL_FIELDS and isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value


def load_config(config_file: str | None = None, **overrides: Any) -> AppConfig:
    values: dict[str, Any] = {}
    if config_file:
        raw = json.loads(Path(config_file).read_text(encoding="utf-8"))
        for key, val in raw.items():
            values[key.lower()] = _coerce(key.lower(), val)
    for name, env in _ENV_KEYS.items():
        if env in os.environ:
            values[name] = _coerce(name, os.environ[env])
    for name, val in overrides.items():
        if val is not None:
            values[name] = _coerce(name, val)
    known = {f.name for f in fields(AppConfig)}
    values = {k: v for k, v in values.items() if k in known}
    return AppConfig(**values)
