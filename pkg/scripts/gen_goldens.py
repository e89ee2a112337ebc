#!/usr/bin/env python3
"""Produce golden interchange files from the hand-labeled manifest.

Re-implements the normalization, fingerprint and canonical-serialization
recipes inline, without importing the package, so the goldens are an
independent construction the export path is tested against byte for byte.

Outputs fixtures/golden/<name>.bank.json; committed, rerun only when labels
change.
"""

from __future__ import annotations

import hashlib
import json
import sys
import unicodedata
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
MANIFEST = ROOT / "fixtures" / "manifest.json"
GOLDEN = ROOT / "fixtures" / "golden"


def normalize(s: str) -> str:
    s = unicodedata.normalize("NFC", s).lower()
    s = " ".join(s.split())
    start, end = 0, len(s)
    while start < end and (s[start].isspace() or unicodedata.category(s[start]).startswith("P")):
        start += 1
    while end > start and (s[end - 1].isspace() or unicodedata.category(s[end - 1]).startswith("P")):
        end -= 1
    return s[start:end]


def fingerprint(question: dict) -> str:
    if question["kind"] == "mcq":
        texts = [normalize(c["text"]) for c in question["choices"]]
    else:
        texts = [normalize(p["prompt"]) for p in question["parts"]]
    payload = "\x1f".join([normalize(question["stem"])] + sorted(texts))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def bank_for(entry: dict) -> str:
    questions = []
    for q in entry["expected"]["questions"]:
        item = {
            "kind": q["kind"],
            "stem": q["stem"],
            "explanation": None,
            "concepts": [entry["course"]],
            "fingerprint": fingerprint(q),
        }
        if q["kind"] == "mcq":
            item["choices"] = [
                {"index": i, "text": c["text"], "is_correct": c["correct"]}
                for i, c in enumerate(q["choices"])
            ]
        else:
            item["parts"] = [
                {"index": i, "prompt": p["prompt"], "expected_answer": "", "marks": p["marks"]}
                for i, p in enumerate(q["parts"])
            ]
        questions.append(item)
    questions.sort(key=lambda it: it["fingerprint"])
    doc = {
        "bank_version": 1,
        "paper": {"title": entry["title"], "year": entry["year"]},
        "questions": questions,
    }
    return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def main() -> int:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    manifest = json.loads(MANIFEST.read_text(encoding="utf-8"))
    for name, entry in manifest["papers"].items():
        out = GOLDEN / f"{name}.bank.json"
        out.write_text(bank_for(entry), encoding="utf-8")
        print(f"{name}: {len(entry['expected']['questions'])} questions -> {out.name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
