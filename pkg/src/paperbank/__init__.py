"""paperbank: turn uploaded exam papers into validated question banks."""

__version__ = "0.1.0"

from .errors import DomainError
from .models import (
    DraftChoice,
    DraftPart,
    DraftQuestion,
    ValidationReport,
    normalize_text,
    question_fingerprint,
    validate_question,
)

__all__ = [
    "DomainError",
    "DraftChoice",
    "DraftPart",
    "DraftQuestion",
    "ValidationReport",
    "normalize_text",
    "question_fingerprint",
    "validate_question",
    "__version__",
]
