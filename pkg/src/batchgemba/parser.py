"""Parse batched JSON evaluations into exactly one outcome per expected example.

Malformation is data: every call returns ``batch_size`` outcomes, and each
unparseable example carries a machine-readable reason.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Optional

from .gateway import UsageRecord
from .mqm import DEFAULT_WEIGHTS, PredictedError, SeverityWeights, normalize_severity, score_from_errors
from .prompt import OutputSchema

logger = logging.getLogger(__name__)

NO_TOP_LEVEL_JSON = "no_top_level_json"
MISSING_INDEX = "missing_index"
DUPLICATE_INDEX = "duplicate_index"
BAD_ERROR_OBJECT = "bad_error_object"
WRONG_SEVERITY = "wrong_severity"
REASONS = (NO_TOP_LEVEL_JSON, MISSING_INDEX, DUPLICATE_INDEX, BAD_ERROR_OBJECT, WRONG_SEVERITY)

_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ExampleOutcome:
    index: int
    status: str
    errors: Optional[tuple[PredictedError, ...]] = None
    reason: Optional[str] = None

    def __post_init__(self):
        if self.status == "parsed":
            if self.errors is None or self.reason is not None:
                raise ValueError("parsed outcomes carry errors and no reason")
        elif self.status == "malformed":
            if self.errors is not None or self.reason is None:
                raise ValueError("malformed outcomes carry a reason and no errors")
        else:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def parsed(self) -> bool:
        return self.status == "parsed"


@dataclass(frozen=True)
class BatchOutcome:
    batch_id: str
    outcomes: tuple[ExampleOutcome, ...]
    usage: UsageRecord = field(default_factory=UsageRecord)
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    @property
    def malformed_count(self) -> int:
        return sum(not o.parsed for o in self.outcomes)


def _balanced_object_end(text: str, start: int) -> Optional[int]:
    depth = 0
    in_string = escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def strip_wrappers(text: str) -> str:
    """Drop markdown fences and prose around the outermost balanced ``{...}``.

    Returns the input stripped of surrounding whitespace when no balanced
    object exists. Idempotent.
    """
    body = text.strip()
    if body.startswith("{") and _balanced_object_end(body, 0) == len(body):
        return body
    fence = _FENCE_RE.search(body)
    if fence and "{" in fence.group(1):
        body = fence.group(1)
    start = body.find("{")
    while start != -1:
        end = _balanced_object_end(body, start)
        if end is not None:
            return body[start:end]
        start = body.find("{", start + 1)
    return text.strip()


def _parse_errors(raw) -> tuple[Optional[tuple[PredictedError, ...]], Optional[str]]:
    if not isinstance(raw, list):
        return None, BAD_ERROR_OBJECT
    errors = []
    for item in raw:
        if not isinstance(item, dict):
            return None, BAD_ERROR_OBJECT
        severity, category = item.get("severity"), item.get("category")
        span = item.get("span", "")
        if not isinstance(severity, str) or not isinstance(category, str):
            return None, BAD_ERROR_OBJECT
        if span is None:
            span = ""
        if not isinstance(span, str):
            return None, BAD_ERROR_OBJECT
        sev = normalize_severity(severity)
        if sev is None:
            return None, WRONG_SEVERITY
        errors.append(PredictedError(sev, category.strip(), span))
    return tuple(errors), None


def parse_batch_response(
    text: str,
    schema: OutputSchema,
    batch_id: str = "",
    usage: Optional[UsageRecord] = None,
) -> BatchOutcome:
    """Attribute a model's batched answer to the expected example indices."""
    usage = usage or UsageRecord()
    n = schema.batch_size
    diagnostics: list[str] = []

    def all_malformed(reason: str) -> BatchOutcome:
        return BatchOutcome(
            batch_id,
            tuple(ExampleOutcome(i, "malformed", reason=reason) for i in schema.expected_indices),
            usage,
            tuple(diagnostics),
        )

    try:
        data = json.loads(strip_wrappers(text if isinstance(text, str) else ""))
    except (json.JSONDecodeError, RecursionError):
        return all_malformed(NO_TOP_LEVEL_JSON)
    evaluations = data.get("evaluations") if isinstance(data, dict) else None
    if not isinstance(evaluations, list):
        return all_malformed(NO_TOP_LEVEL_JSON)

    found: dict[int, list] = {}
    for pos, item in enumerate(evaluations):
        index = item.get("index") if isinstance(item, dict) else None
        # bool is an int subclass; reject it along with floats and strings
        if not isinstance(index, int) or isinstance(index, bool):
            diagnostics.append(f"evaluation #{pos} has no usable integer index")
            continue
        if not 0 <= index < n:
            diagnostics.append(f"evaluation #{pos} has out-of-range index {index}")
            continue
        found.setdefault(index, []).append(item)

    outcomes = []
    for i in schema.expected_indices:
        items = found.get(i, [])
        if not items:
            outcomes.append(ExampleOutcome(i, "malformed", reason=MISSING_INDEX))
        elif len(items) > 1:
            outcomes.append(ExampleOutcome(i, "malformed", reason=DUPLICATE_INDEX))
        else:
            errors, reason = _parse_errors(items[0].get("errors"))
            if reason:
                outcomes.append(ExampleOutcome(i, "malformed", reason=reason))
            else:
                outcomes.append(ExampleOutcome(i, "parsed", errors=errors))
    for diag in diagnostics:
        logger.debug("batch %s: %s", batch_id, diag)
    return BatchOutcome(batch_id, tuple(outcomes), usage, tuple(diagnostics))


def outcomes_to_scores(
    outcome: BatchOutcome, weights: SeverityWeights = DEFAULT_WEIGHTS
) -> list[tuple[int, Optional[float]]]:
    return [
        (o.index, score_from_errors(o.errors, weights) if o.parsed else None) for o in outcome.outcomes
    ]


def span_diagnostics(outcome: BatchOutcome, targets: list[str]) -> list[str]:
    """Soft check: quoted spans that do not occur in the corresponding translation."""
    notes = []
    for o in outcome.outcomes:
        if not o.parsed or o.index >= len(targets):
            continue
        for err in o.errors:
            if err.span_text and err.span_text not in targets[o.index]:
                notes.append(f"index {o.index}: span {err.span_text!r} not found in translation")
    return notes
