"""Import WMT-MQM style tab-separated annotation exports.

Expected columns (header row required)::

    system  doc  doc_id  seg_id  rater  source  target  category  severity

One row per annotated error. The erroneous stretch is wrapped in ``<v>...</v>``
inside either the source or the target column. Rows with severity
``no-error``/``neutral`` only register the segment. Segment scores average the
severity-weighted penalty over raters; spans are taken from the first rater
(alphabetically) so they stay non-conflicting.
"""

from __future__ import annotations

import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional, Union

from .mqm import (
    DEFAULT_WEIGHTS,
    ErrorSpan,
    PredictedError,
    SeverityWeights,
    TranslationExample,
    normalize_severity,
    score_from_errors,
)

logger = logging.getLogger(__name__)

COLUMNS = ("system", "doc", "doc_id", "seg_id", "rater", "source", "target", "category", "severity")
_OPEN, _CLOSE = "<v>", "</v>"


def strip_markers(text: str) -> tuple[str, Optional[tuple[int, int]]]:
    """Remove ``<v>``/``</v>`` and return the clean text plus the marked interval."""
    start = text.find(_OPEN)
    end = text.find(_CLOSE, start + len(_OPEN)) if start >= 0 else -1
    clean = text.replace(_OPEN, "").replace(_CLOSE, "")
    if start < 0 or end < 0:
        return clean, None
    return clean, (start, end - len(_OPEN))


def import_wmt_tsv(
    path: Union[str, Path],
    src_lang: str,
    tgt_lang: str,
    weights: SeverityWeights = DEFAULT_WEIGHTS,
) -> tuple[list[TranslationExample], list[str]]:
    csv.field_size_limit(min(sys.maxsize, 2**31 - 1))
    segments: dict[tuple, dict] = {}
    diagnostics: list[str] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            key = (row["system"], row["doc"], row["seg_id"])
            src, src_iv = strip_markers(row["source"] or "")
            tgt, tgt_iv = strip_markers(row["target"] or "")
            seg = segments.setdefault(key, {"source": src, "target": tgt, "raters": defaultdict(list)})
            errors = seg["raters"][row["rater"]]
            severity = normalize_severity(row["severity"] or "")
            if severity is None:
                if (row["severity"] or "").strip().lower() not in ("no-error", "neutral", ""):
                    diagnostics.append(f"line {lineno}: unknown severity {row['severity']!r} ignored")
                continue
            category = (row["category"] or "other").strip().lower()
            side, iv = ("target", tgt_iv) if tgt_iv else ("source", src_iv)
            errors.append((side, iv, severity, category))

    examples = []
    for (system, doc, seg_id), seg in segments.items():
        if not seg["source"] or not seg["target"]:
            diagnostics.append(f"{system}/{doc}/{seg_id}: empty text, skipped")
            continue
        raters = sorted(seg["raters"])
        scores = [
            score_from_errors([PredictedError(sev, cat) for _, _, sev, cat in seg["raters"][r]], weights)
            for r in raters
        ]
        spans = []
        for side, iv, sev, cat in seg["raters"][raters[0]] if raters else []:
            if iv and iv[0] < iv[1]:
                spans.append(ErrorSpan(side, iv[0], iv[1], sev, cat))
        examples.append(
            TranslationExample(
                id=f"{system}|{doc}|{seg_id}",
                source_lang=src_lang,
                target_lang=tgt_lang,
                source_text=seg["source"],
                target_text=seg["target"],
                human_score=sum(scores) / len(scores) if scores else 0.0,
                spans=tuple(spans),
            )
        )
    return examples, diagnostics

