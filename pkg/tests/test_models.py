from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from paperbank.models import (
    DraftChoice,
    DraftPart,
    DraftQuestion,
    normalize_text,
    question_fingerprint,
    validate_question,
)

# Reference hash for fixture question F1 (paper_A question 1), computed once
# with the standalone recipe in scripts/gen_goldens.py and pinned here.
F1_FINGERPRINT = "9638d2b0072c5cd6828d682da3eb5fafffb4d681bd1ffab563f61fab280cf0be"


def mcq(stem="Which antibiotic inhibits bacterial cell wall synthesis?",
        choices=None, concepts=("Antimicrobials",), confidence=1.0) -> DraftQuestion:
    if choices is None:
        choices = [
            DraftChoice("Gentamicin"),
            DraftChoice("Amoxicillin", is_correct=True),
            DraftChoice("Doxycycline"),
            DraftChoice("Ciprofloxacin"),
        ]
    return DraftQuestion(kind="mcq", stem=stem, choices=choices,
                         concept_names=list(concepts), confidence=confidence)


def saq(stem="Define shock.", parts=None, concepts=("Emergencies",)) -> DraftQuestion:
    if parts is None:
        parts = [DraftPart(prompt="Define shock.", marks=5)]
    return DraftQuestion(kind="saq", stem=stem, parts=parts, concept_names=list(concepts))


class TestNormalizeText:
    def test_collapses_whitespace_and_case(self):
        assert normalize_text("What  is   X?") == "what is x"

    def test_empty(self):
        assert normalize_text("") == ""

    def test_strips_edge_punctuation(self):
        assert normalize_text("  Amoxicillin.  ") == "amoxicillin"

    def test_interior_punctuation_survives(self):
        assert normalize_text("Amoxicillin-clavulanate (oral)") == "amoxicillin-clavulanate (oral"

    @given(st.text())
    def test_idempotent(self, s):
        once = normalize_text(s)
        assert normalize_text(once) == once


class TestFingerprint:
    def test_pinned_reference_value(self):
        assert question_fingerprint(mcq()) == F1_FINGERPRINT

    def test_whitespace_and_case_invariance(self):
        a = mcq(stem="Which antibiotic inhibits bacterial cell wall synthesis?")
        b = mcq(stem="  WHICH antibiotic   inhibits bacterial cell wall synthesis? ")
        assert question_fingerprint(a) == question_fingerprint(b)

    def test_choice_order_irrelevant(self):
        a = mcq()
        b = mcq(choices=list(reversed(mcq().choices)))
        assert question_fingerprint(a) == question_fingerprint(b)

    def test_metadata_excluded(self):
        a = mcq(confidence=1.0)
        b = replace(mcq(confidence=0.25), explanation="because", generator="model")
        assert question_fingerprint(a) == question_fingerprint(b)

    def test_stem_change_changes_hash(self):
        assert question_fingerprint(mcq()) != question_fingerprint(mcq(stem="Other stem"))

    @given(
        stem=st.text(min_size=1, max_size=40),
        texts=st.lists(st.text(min_size=1, max_size=20), min_size=2, max_size=5),
        confidence=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        explanation=st.one_of(st.none(), st.text(max_size=20)),
    )
    def test_pure_function_of_content(self, stem, texts, confidence, explanation):
        base = DraftQuestion(kind="mcq", stem=stem,
                             choices=[DraftChoice(t, i == 0) for i, t in enumerate(texts)],
                             concept_names=["c"])
        mutated = replace(base, confidence=confidence, explanation=explanation,
                          generator="manual", source_span=((1, 0), (1, 1)))
        assert question_fingerprint(base) == question_fingerprint(mutated)


class TestValidateQuestion:
    def test_valid_mcq(self):
        assert validate_question(mcq()).ok

    def test_no_correct_choice(self):
        q = mcq(choices=[DraftChoice("A"), DraftChoice("B"), DraftChoice("C"), DraftChoice("D")])
        assert "no-correct-choice" in validate_question(q).violations

    def test_multiple_correct(self):
        q = mcq(choices=[DraftChoice("A", True), DraftChoice("B", True)])
        assert "multiple-correct-choices" in validate_question(q).violations

    def test_saq_without_parts(self):
        q = saq(parts=[])
        assert "saq-no-parts" in validate_question(q).violations

    def test_valid_saq(self):
        assert validate_question(saq()).ok

    def test_too_few_choices(self):
        q = mcq(choices=[DraftChoice("only", True)])
        assert "too-few-choices" in validate_question(q).violations

    def test_too_many_choices(self):
        choices = [DraftChoice(f"opt {i}", i == 0) for i in range(11)]
        assert "too-many-choices" in validate_question(mcq(choices=choices)).violations

    def test_duplicate_choices_after_normalization(self):
        q = mcq(choices=[DraftChoice("Aspirin ", True), DraftChoice("  ASPIRIN."),
                         DraftChoice("Other")])
        assert "duplicate-choices" in validate_question(q).violations

    def test_empty_stem(self):
        assert "empty-stem" in validate_question(mcq(stem="   ")).violations

    def test_missing_concepts(self):
        assert "no-concepts" in validate_question(mcq(concepts=())).violations

    def test_bad_marks(self):
        q = saq(parts=[DraftPart(prompt="p", marks=0)])
        assert "bad-marks" in validate_question(q).violations

    def test_bad_kind(self):
        q = DraftQuestion(kind="essay", stem="x", concept_names=["c"])
        assert "bad-kind" in validate_question(q).violations

    def test_reports_every_violation(self):
        q = DraftQuestion(kind="mcq", stem="", choices=[], concept_names=[])
        violations = set(validate_question(q).violations)
        assert {"empty-stem", "no-concepts", "too-few-choices", "no-correct-choice"} <= violations
