from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from paperbank.cli import seed_store
from paperbank.config import AppConfig
from paperbank.ocr import FixtureOcrProvider
from paperbank.pipeline import JobRunner
from paperbank.store import Store
from paperbank.synthesis import LocalRuleBasedProvider

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


class FakeClock:
    """Deterministic clock; advance it explicitly with tick()."""

    def __init__(self, start: str = "2025-06-01T08:00:00+00:00"):
        self.now = datetime.fromisoformat(start)

    def __call__(self) -> datetime:
        return self.now

    def tick(self, seconds: float = 1.0) -> datetime:
        self.now = self.now + timedelta(seconds=seconds)
        return self.now


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def manifest() -> dict:
    return json.loads((FIXTURES / "manifest.json").read_text(encoding="utf-8"))


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def config() -> AppConfig:
    return AppConfig(database_url=":memory:", fixtures_dir=str(FIXTURES / "layouts"))


@pytest.fixture
def store(clock) -> Store:
    s = Store(":memory:", clock=clock)
    seed_store(s, json.loads((FIXTURES / "seed.json").read_text(encoding="utf-8")))
    yield s
    s.close()


@pytest.fixture
def ocr_provider() -> FixtureOcrProvider:
    return FixtureOcrProvider(str(FIXTURES / "layouts"))


@pytest.fixture
def runner(store, config, ocr_provider, clock) -> JobRunner:
    return JobRunner(store, config, ocr_provider, LocalRuleBasedProvider(), clock=clock)


def read_fixture_doc(name: str) -> bytes:
    return (FIXTURES / "documents" / f"{name}.pdf").read_bytes()


def utc(s: str) -> datetime:
    return datetime.fromisoformat(s).replace(tzinfo=timezone.utc)
