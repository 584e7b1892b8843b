"""MQM annotation types and severity-weighted segment scoring."""

from __future__ import annotations

import difflib
import logging
from dataclasses import dataclass, field
from typing import Iterable, Literal, Optional, Union

logger = logging.getLogger(__name__)

SEVERITIES = ("minor", "major", "critical")
SIDES = ("source", "target")

Severity = Literal["minor", "major", "critical"]
Side = Literal["source", "target"]

CANONICAL_CATEGORIES = (
    "accuracy/addition",
    "accuracy/mistranslation",
    "accuracy/omission",
    "accuracy/untranslated",
    "fluency/grammar",
    "fluency/spelling",
    "fluency/punctuation",
    "fluency/register",
    "fluency/inconsistency",
    "terminology",
    "style",
    "locale",
    "non-translation",
    "other",
)


def normalize_severity(value: str) -> Optional[str]:
    """Return the canonical severity for ``value`` or None if unknown."""
    if not isinstance(value, str):
        return None
    sev = value.strip().lower()
    return sev if sev in SEVERITIES else None


@dataclass(frozen=True)
class ErrorSpan:
    side: Side
    start_char: int
    end_char: int
    severity: Severity
    category: str

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"span side must be one of {SIDES}, got {self.side!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if not (0 <= self.start_char < self.end_char):
            raise ValueError(f"invalid span bounds [{self.start_char}, {self.end_char})")

    def fits(self, text: str) -> bool:
        return self.end_char <= len(text)


@dataclass(frozen=True)
class PredictedError:
    severity: Severity
    category: str
    span_text: str = ""

    def __post_init__(self):
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")


@dataclass(frozen=True)
class TranslationExample:
    id: str
    source_lang: str
    target_lang: str
    source_text: str
    target_text: str
    human_score: Optional[float] = None
    spans: tuple[ErrorSpan, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.source_text or not self.target_text:
            raise ValueError(f"example {self.id!r}: source and target must be non-empty")
        object.__setattr__(self, "spans", tuple(self.spans))
        for span in self.spans:
            text = self.text_for(span.side)
            if not span.fits(text):
                raise ValueError(
                    f"example {self.id!r}: span [{span.start_char}, {span.end_char}) "
                    f"exceeds {span.side} length {len(text)}"
                )

    @property
    def lang_pair(self) -> tuple[str, str]:
        return (self.source_lang, self.target_lang)

    def text_for(self, side: str) -> str:
        return self.source_text if side == "source" else self.target_text

    def span_text(self, span: ErrorSpan) -> str:
        return self.text_for(span.side)[span.start_char : span.end_char]


@dataclass(frozen=True)
class SeverityWeights:
    minor: float = 1.0
    major: float = 5.0
    critical: float = 25.0
    cap: float = 25.0

    def __post_init__(self):
        if min(self.minor, self.major, self.critical) < 0:
            raise ValueError("severity weights must be non-negative")
        if not (self.minor <= self.major <= self.critical):
            raise ValueError("severity weights must satisfy minor <= major <= critical")
        if self.cap <= 0 or self.cap < self.critical:
            raise ValueError("cap must be positive and at least the critical weight")

    def weight(self, severity: str) -> float:
        return getattr(self, severity)


DEFAULT_WEIGHTS = SeverityWeights()


def score_from_errors(
    errors: Iterable[Union[PredictedError, ErrorSpan]],
    weights: SeverityWeights = DEFAULT_WEIGHTS,
) -> float:
    """Segment score: the negated, capped sum of severity weights.

    >>> score_from_errors([PredictedError("minor", "style"), PredictedError("major", "other")])
    -6.0
    """
    total = sum(weights.weight(err.severity) for err in errors)
    return 0.0 - min(weights.cap, float(total))


@dataclass(frozen=True)
class CategoryCheck:
    category: str
    canonical: bool
    suggestion: Optional[str] = None


def _normalize_category(category: str) -> str:
    return " ".join(category.strip().lower().split())


def validate_category(category: str) -> CategoryCheck:
    """Check a category label against the canonical list.

    Unknown labels are accepted (LLMs drift) but flagged with the closest
    canonical label, if any.
    """
    norm = _normalize_category(category)
    if norm in CANONICAL_CATEGORIES:
        return CategoryCheck(norm, True)
    # bare leaf names such as "mistranslation" are canonical too
    for cat in CANONICAL_CATEGORIES:
        if cat.split("/")[-1] == norm:
            return CategoryCheck(cat, True)
    leaves = {cat.split("/")[-1]: cat for cat in CANONICAL_CATEGORIES}
    close = difflib.get_close_matches(norm, list(CANONICAL_CATEGORIES) + list(leaves), n=1)
    suggestion = leaves.get(close[0], close[0]) if close else None
    logger.debug("non-canonical MQM category %r (nearest: %s)", category, suggestion)
    return CategoryCheck(category, False, suggestion)
