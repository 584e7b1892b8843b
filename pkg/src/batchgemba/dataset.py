"""Dataset loading, seeded single-language-pair batching and holdout splits.

All randomness goes through :class:`random.Random` (MT19937) seeded with the
caller's integer seed, so identical inputs and seeds give identical batches.
"""

from __future__ import annotations

import json
import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .mqm import ErrorSpan, TranslationExample

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("id", "src_lang", "tgt_lang", "source", "target", "human_score", "spans")
SPAN_FIELDS = ("side", "start", "end", "severity", "category")
MAX_BATCH_SIZE = 64


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    examples: tuple[TranslationExample, ...]
    name: str = "dataset"
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise DatasetError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def lang_pairs(self) -> list[tuple[str, str]]:
        return sorted({ex.lang_pair for ex in self.examples})

    def by_lang_pair(self) -> dict[tuple[str, str], list[TranslationExample]]:
        groups: dict[tuple[str, str], list[TranslationExample]] = defaultdict(list)
        for ex in self.examples:
            groups[ex.lang_pair].append(ex)
        return {lp: groups[lp] for lp in sorted(groups)}


@dataclass(frozen=True)
class EvalBatch:
    batch_id: str
    lang_pair: tuple[str, str]
    examples: tuple[TranslationExample, ...]

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.examples:
            raise DatasetError(f"batch {self.batch_id!r} is empty")
        for ex in self.examples:
            if ex.lang_pair != tuple(self.lang_pair):
                raise DatasetError(
                    f"batch {self.batch_id!r} mixes language pairs: {ex.lang_pair} vs {self.lang_pair}"
                )

    def __len__(self) -> int:
        return len(self.examples)


# -- serialization -----------------------------------------------------------


def example_from_record(record: dict) -> TranslationExample:
    missing = [k for k in RECORD_FIELDS if k not in record and k not in ("human_score", "spans")]
    if missing:
        raise DatasetError(f"missing fields: {', '.join(missing)}")
    spans = []
    for raw in record.get("spans") or []:
        if not isinstance(raw, dict):
            raise DatasetError("span entries must be objects")
        try:
            spans.append(
                ErrorSpan(
                    side=raw["side"],
                    start_char=int(raw["start"]),
                    end_char=int(raw["end"]),
                    severity=str(raw["severity"]).strip().lower(),
                    category=str(raw.get("category", "other")),
                )
            )
        except KeyError as exc:
            raise DatasetError(f"span missing field {exc}") from None
    score = record.get("human_score")
    return TranslationExample(
        id=str(record["id"]),
        source_lang=str(record["src_lang"]),
        target_lang=str(record["tgt_lang"]),
        source_text=record["source"],
        target_text=record["target"],
        human_score=None if score is None else float(score),
        spans=tuple(spans),
    )


def example_to_record(ex: TranslationExample) -> dict:
    return {
        "id": ex.id,
        "src_lang": ex.source_lang,
        "tgt_lang": ex.target_lang,
        "source": ex.source_text,
        "target": ex.target_text,
        "human_score": ex.human_score,
        "spans": [
            {
                "side": s.side,
                "start": s.start_char,
                "end": s.end_char,
                "severity": s.severity,
                "category": s.category,
            }
            for s in ex.spans
        ],
    }


def load_dataset(path: Union[str, Path], name: Optional[str] = None) -> Dataset:
    """Read a line-delimited dataset file.

    Malformed lines, out-of-bounds spans and duplicate ids are skipped; each
    skip is recorded in ``Dataset.diagnostics``. An unreadable file raises.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc

    examples: list[TranslationExample] = []
    diagnostics: list[str] = []
    seen: set[str] = set()
    warned_unknown: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        record = None
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise DatasetError("record is not an object")
            for key in record.keys() - set(RECORD_FIELDS) - warned_unknown:
                warned_unknown.add(key)
                logger.warning("%s: ignoring unknown field %r", path.name, key)
            ex = example_from_record(record)
        except (json.JSONDecodeError, DatasetError, ValueError, TypeError) as exc:
            rid = record.get("id") if isinstance(record, dict) else None
            diagnostics.append(f"line {lineno}" + (f" (id {rid})" if rid is not None else "") + f": {exc}")
            continue
        if ex.id in seen:
            diagnostics.append(f"line {lineno} (id {ex.id}): duplicate id, record rejected")
            continue
        seen.add(ex.id)
        examples.append(ex)

    for diag in diagnostics:
        logger.warning("%s: %s", path.name, diag)
    return Dataset(tuple(examples), name=name or path.stem, diagnostics=tuple(diagnostics))


def write_dataset(dataset: Iterable[TranslationExample], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps(example_to_record(ex), ensure_ascii=False) + "\n")


# -- batching ----------------------------------------------------------------


def _check_range(size_range: Sequence[int]) -> tuple[int, int]:
    lo, hi = int(size_range[0]), int(size_range[1])
    if lo > hi:
        raise DatasetError(f"empty batch size range [{lo}, {hi}]")
    if lo < 1 or hi > MAX_BATCH_SIZE:
        raise DatasetError(f"batch size range must lie within [1, {MAX_BATCH_SIZE}]")
    return lo, hi


def make_batches(
    dataset: Dataset,
    size_range: Sequence[int] = (2, 8),
    seed: int = 0,
    fixed_size: Optional[int] = None,
) -> list[EvalBatch]:
    """Partition each language pair's shuffled examples into batches.

    With ``fixed_size`` every batch has that size except possibly the last one
    of each language pair. Otherwise sizes are drawn uniformly from
    ``size_range``. Examples are never reused.
    """
    if len(dataset) == 0:
        raise DatasetError("cannot batch an empty dataset")
    if fixed_size is not None:
        lo = hi = int(fixed_size)
        _check_range((lo, hi))
    else:
        lo, hi = _check_range(size_range)

    rng = random.Random(seed)
    batches: list[EvalBatch] = []
    for lp, examples in dataset.by_lang_pair().items():
        pool = list(examples)
        rng.shuffle(pool)
        pos = k = 0
        while pos < len(pool):
            size = lo if lo == hi else rng.randint(lo, hi)
            chunk = pool[pos : pos + size]
            batches.append(EvalBatch(f"{lp[0]}-{lp[1]}-{k:05d}", lp, tuple(chunk)))
            pos += size
            k += 1
    return batches


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def holdout_indices(n: int, fraction: float, seed: int) -> set[int]:
    if not 0 < fraction < 1:
        raise DatasetError(f"holdout fraction must be in (0, 1), got {fraction}")
    if n < 2:
        raise DatasetError("need at least 2 items to split")
    k = round_half_away(fraction * n)
    return set(random.Random(seed).sample(range(n), k))


def split_holdout(dataset: Dataset, fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Simple random (unstratified) holdout split of ``round(fraction * N)`` examples."""
    held = holdout_indices(len(dataset), fraction, seed)
    train = [ex for i, ex in enumerate(dataset.examples) if i not in held]
    holdout = [ex for i, ex in enumerate(dataset.examples) if i in held]
    return (
        Dataset(tuple(train), name=f"{dataset.name}.train"),
        Dataset(tuple(holdout), name=f"{dataset.name}.holdout"),
    )
