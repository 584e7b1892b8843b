"""Meta-evaluation: Pearson correlation, token usage, error rate and report tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

logger = logging.getLogger(__name__)


class UndefinedCorrelation(ValueError):
    """Pearson r is undefined (fewer than two points or zero variance)."""


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise UndefinedCorrelation("need at least two points")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelation("zero variance")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class ExampleResult:
    id: str
    human_score: Optional[float]
    llm_score: Optional[float]
    malformed: bool

    def __post_init__(self):
        if (self.llm_score is not None) == self.malformed:
            raise ValueError(f"example {self.id}: llm_score must be present exactly when not malformed")


@dataclass(frozen=True)
class RunRecord:
    model_id: str
    compressed: bool
    batch_size: int
    lang_pair: tuple[str, str]
    examples: tuple[ExampleResult, ...]
    prompt_tokens: int = 0
    completion_tokens: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @property
    def malformed_count(self) -> int:
        return sum(e.malformed for e in self.examples)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "compressed": self.compressed,
            "batch_size": self.batch_size,
            "lang_pair": list(self.lang_pair),
            "examples": [asdict(e) for e in self.examples],
            "usage": {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        usage = d.get("usage") or {}
        return cls(
            model_id=d["model_id"],
            compressed=bool(d["compressed"]),
            batch_size=int(d["batch_size"]),
            lang_pair=tuple(d["lang_pair"]),
            examples=tuple(ExampleResult(**e) for e in d["examples"]),
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            meta=d.get("meta") or {},
        )


def write_run_records(records: Iterable[RunRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_run_records(path: Union[str, Path]) -> list[RunRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: not a run record ({exc!r})") from None
    return records


def error_rate(records: Union[RunRecord, Iterable[RunRecord]]) -> float:
    records = [records] if isinstance(records, RunRecord) else list(records)
    total = sum(len(r.examples) for r in records)
    if total == 0:
        raise ValueError("no examples")
    return sum(r.malformed_count for r in records) / total


@dataclass(frozen=True)
class ReportRow:
    model_id: str
    compressed: bool
    batch_size: int
    pearson_r: Optional[float]
    n_scored: int
    n_malformed: int
    total_tokens: float
    error_rate: float

    @property
    def n_examples(self) -> int:
        return self.n_scored + self.n_malformed


def _group_pearson(records: Sequence[RunRecord], mode: str) -> Optional[float]:
    def pairs(recs):
        scored = [e for r in recs for e in r.examples if not e.malformed and e.human_score is not None]
        return [e.llm_score for e in scored], [e.human_score for e in scored]

    try:
        if mode == "pooled":
            return pearson(*pairs(records))
        if mode == "per-pair":
            by_lp = defaultdict(list)
            for r in records:
                by_lp[r.lang_pair].append(r)
            values = []
            for lp in sorted(by_lp):
                try:
                    values.append(pearson(*pairs(by_lp[lp])))
                except UndefinedCorrelation:
                    logger.warning("pearson undefined for %s; left out of the average", "-".join(lp))
            if not values:
                return None
            return math.fsum(values) / len(values)
    except UndefinedCorrelation:
        return None
    raise ValueError(f"unknown pearson mode {mode!r}")


def aggregate(records: Iterable[RunRecord], pearson_mode: str = "pooled") -> list[ReportRow]:
    """One row per (model, compressed, batch_size).

    Pearson is computed over the row's scored examples (pooled over language
    pairs by default, or averaged per pair). Token totals and error rates are
    computed per language pair, then averaged across pairs.
    """
    groups: dict[tuple, list[RunRecord]] = defaultdict(list)
    for rec in records:
        groups[(rec.model_id, rec.compressed, rec.batch_size)].append(rec)

    rows = []
    for key in sorted(groups):
        recs = groups[key]
        by_lp: dict[tuple, list[RunRecord]] = defaultdict(list)
        for r in recs:
            by_lp[r.lang_pair].append(r)
        lps = sorted(by_lp)
        tokens = math.fsum(sum(r.total_tokens for r in by_lp[lp]) for lp in lps) / len(lps)
        rates = [error_rate(by_lp[lp]) for lp in lps if any(r.examples for r in by_lp[lp])]
        n_mal = sum(r.malformed_count for r in recs)
        n_all = sum(len(r.examples) for r in recs)
        r_value = _group_pearson(recs, pearson_mode)
        if r_value is None:
            logger.warning("pearson unavailable for %s", key)
        rows.append(
            ReportRow(
                model_id=key[0],
                compressed=key[1],
                batch_size=key[2],
                pearson_r=r_value,
                n_scored=n_all - n_mal,
                n_malformed=n_mal,
                total_tokens=tokens,
                error_rate=math.fsum(rates) / len(rates) if rates else 0.0,
            )
        )
    return rows


@dataclass(frozen=True)
class Degradation:
    model_id: str
    compressed: bool
    batch_size: int
    ratio: float


def relative_degradation(rows: Sequence[ReportRow], baseline_batch_size: int = 1) -> list[Degradation]:
    """Each row's Pearson r divided by its group's r at the baseline batch size."""
    groups: dict[tuple, list[ReportRow]] = defaultdict(list)
    for row in rows:
        groups[(row.model_id, row.compressed)].append(row)
    out = []
    for key in sorted(groups):
        base = [r for r in groups[key] if r.batch_size == baseline_batch_size]
        if not base or not base[0].pearson_r:
            logger.warning("no usable baseline (batch size %d) for %s; skipped", baseline_batch_size, key)
            continue
        base_r = base[0].pearson_r
        for row in sorted(groups[key], key=lambda r: r.batch_size):
            if row.pearson_r is None:
                continue
            ratio = 1.0 if row.batch_size == baseline_batch_size else row.pearson_r / base_r
            out.append(Degradation(row.model_id, row.compressed, row.batch_size, ratio))
    return out


# -- rendering ------------------------------------------------------------------

TABLES = {
    "pearson": ("Pearson r", lambda r: "n/a" if r.pearson_r is None else f"{r.pearson_r:.3f}"),
    "tokens": ("Total tokens", lambda r: _fmt_tokens(r.total_tokens)),
    "error_rate": ("Error rate", lambda r: f"{100 * r.error_rate:.1f}%"),
}


def _fmt_tokens(n: float) -> str:
    if n >= 1e6:
        return f"{n / 1e6:.1f}M"
    if n >= 1e3:
        return f"{n / 1e3:.1f}K"
    return f"{n:.0f}"


def metric_table(rows: Sequence[ReportRow], metric: str) -> tuple[list[str], list[list[str]]]:
    """Report grid: rows model x compression, columns batch sizes."""
    _, fmt = TABLES[metric]
    sizes = sorted({r.batch_size for r in rows})
    cells: dict[tuple, dict[int, str]] = defaultdict(dict)
    for r in rows:
        cells[(r.model_id, r.compressed)][r.batch_size] = fmt(r)
    header = ["Model", "Comp."] + [str(s) for s in sizes]
    body = [
        [model, "+" if comp else "-"] + [cells[(model, comp)].get(s, "") for s in sizes]
        for model, comp in sorted(cells)
    ]
    return header, body


def format_text(header: Sequence[str], body: Sequence[Sequence[str]], title: str = "") -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    rule = "  ".join("-" * w for w in widths)

    def line(cells):
        return "  ".join(
            str(c).ljust(w) if i < 2 else str(c).rjust(w) for i, (c, w) in enumerate(zip(cells, widths))
        ).rstrip()

    lines = ([title] if title else []) + [rule, line(header), rule] + [line(b) for b in body] + [rule]
    return "\n".join(lines)


def format_csv(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    return buf.getvalue()


def rows_to_jsonl(rows: Sequence[ReportRow]) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in rows)


def degradation_csv(series: Sequence[Degradation]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "compressed", "batch_size", "relative_quality"])
    for d in series:
        writer.writerow([d.model_id, "+" if d.compressed else "-", d.batch_size, f"{d.ratio:.6f}"])
    return buf.getvalue()
