"""End-to-end workflows shared by the CLI: evaluation grid, token audit, preference pairs."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

from .compression import (
    Compressor,
    derive_seeds,
    filter_valid,
    generate_candidates,
    judge_candidates,
    pair_record,
    select_pair,
)
from .dataset import Dataset, EvalBatch, make_batches
from .gateway import CompletionRequest, GatewayError, LLMClient
from .metaeval import ExampleResult, RunRecord
from .mqm import DEFAULT_WEIGHTS, SeverityWeights
from .parser import outcomes_to_scores, parse_batch_response
from .prompt import PromptTemplate, default_template, render_batch_prompt
from .tokenizer import DEFAULT_TOKENIZER

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZES = (1, 2, 4, 8, 16)


def compress_batches(batches: Sequence[EvalBatch], compressor: Compressor, seed: int) -> list[EvalBatch]:
    """Apply ``compressor`` to every batch; off-format results fall back to the original batch."""
    out = []
    for batch, s in zip(batches, derive_seeds(seed, len(batches))):
        candidate = compressor.compress(batch, s)
        if candidate.format_valid and candidate.batch is not None:
            out.append(candidate.batch)
        else:
            logger.warning("batch %s: compressor output off-format; evaluating uncompressed", batch.batch_id)
            out.append(batch)
    return out


@dataclass
class EvaluationResult:
    batch_size: int
    compressed: bool
    records: list[RunRecord]
    failed_batches: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def evaluate_batch_size(
    dataset: Dataset,
    client: LLMClient,
    model_id: str,
    batch_size: int,
    template: Optional[PromptTemplate] = None,
    compressor: Optional[Compressor] = None,
    seed: int = 0,
    max_in_flight: int = 4,
    weights: SeverityWeights = DEFAULT_WEIGHTS,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
    meta: Optional[dict] = None,
) -> EvaluationResult:
    """Batch, optionally compress, prompt, parse and score one grid point."""
    template = template or default_template()
    batches = make_batches(dataset, seed=seed, fixed_size=batch_size)
    compressed = compressor is not None
    prompted = compress_batches(batches, compressor, seed) if compressed else batches

    requests = []
    for batch in prompted:
        bundle = render_batch_prompt(batch, template, compressed=compressed)
        requests.append(
            CompletionRequest(
                model_id=model_id,
                messages=bundle.messages,
                temperature=temperature,
                max_output_tokens=max_output_tokens,
                schema=bundle.schema,
                request_tag=f"eval:bs{batch_size}:{'c' if compressed else 'p'}:{batch.batch_id}",
                batch=batch,
            )
        )
    results = client.run_many(requests, max_in_flight)

    per_lp: dict[tuple, list[ExampleResult]] = defaultdict(list)
    usage: dict[tuple, list[int]] = defaultdict(lambda: [0, 0])
    failed, diagnostics = [], []
    for batch, request, result in zip(batches, requests, results):
        if isinstance(result, GatewayError):
            failed.append(batch.batch_id)
            diagnostics.append(f"{batch.batch_id}: {result}")
            continue
        outcome = parse_batch_response(result.text, request.schema, batch.batch_id, result.usage)
        diagnostics.extend(f"{batch.batch_id}: {d}" for d in outcome.diagnostics)
        usage[batch.lang_pair][0] += result.usage.prompt_tokens
        usage[batch.lang_pair][1] += result.usage.completion_tokens
        for (_, score), ex in zip(outcomes_to_scores(outcome, weights), batch.examples):
            per_lp[batch.lang_pair].append(ExampleResult(ex.id, ex.human_score, score, score is None))

    records = [
        RunRecord(
            model_id=model_id,
            compressed=compressed,
            batch_size=batch_size,
            lang_pair=lp,
            examples=tuple(per_lp[lp]),
            prompt_tokens=usage[lp][0],
            completion_tokens=usage[lp][1],
            meta=dict(meta or {}, failed_batches=failed),
        )
        for lp in sorted(per_lp)
    ]
    return EvaluationResult(batch_size, compressed, records, failed, diagnostics)


@dataclass(frozen=True)
class AuditRow:
    batch_size: int
    prompts: int
    examples: int
    total_tokens: int
    segment_tokens: int
    ratio_vs_bs1: Optional[float] = None
    segment_tokens_uncompressed: Optional[int] = None

    @property
    def per_example(self) -> float:
        return self.total_tokens / self.examples

    @property
    def segment_reduction(self) -> Optional[float]:
        if self.segment_tokens_uncompressed is None:
            return None
        return 1 - self.segment_tokens / self.segment_tokens_uncompressed


def _segment_tokens(batches: Sequence[EvalBatch]) -> int:
    count = DEFAULT_TOKENIZER.count
    return sum(count(ex.source_text) + count(ex.target_text) for b in batches for ex in b.examples)


def token_audit(
    dataset: Dataset,
    batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES,
    template: Optional[PromptTemplate] = None,
    compressor: Optional[Compressor] = None,
    seed: int = 0,
) -> list[AuditRow]:
    """Prompt-token totals per batch size using the default tokenizer only."""
    template = template or default_template()
    rows = []
    for bs in batch_sizes:
        batches = make_batches(dataset, seed=seed, fixed_size=bs)
        prompted = compress_batches(batches, compressor, seed) if compressor else batches
        total = sum(render_batch_prompt(b, template).token_count for b in prompted)
        rows.append(
            AuditRow(
                batch_size=bs,
                prompts=len(prompted),
                examples=sum(len(b) for b in prompted),
                total_tokens=total,
                segment_tokens=_segment_tokens(prompted),
                segment_tokens_uncompressed=_segment_tokens(batches) if compressor else None,
            )
        )
    base = next((r for r in rows if r.batch_size == 1), None)
    if base is None:
        return rows
    return [replace(r, ratio_vs_bs1=base.total_tokens / r.total_tokens) for r in rows]


@dataclass
class PairStats:
    batches: int = 0
    pairs: int = 0
    skipped: int = 0
    invalid_candidates: int = 0


def generate_pairs(
    dataset: Dataset,
    compressor: Compressor,
    judge: LLMClient,
    judge_model: str,
    k: int = 8,
    count: int = 10,
    seed: int = 0,
    size_range: Sequence[int] = (2, 8),
    weights: SeverityWeights = DEFAULT_WEIGHTS,
    template: Optional[PromptTemplate] = None,
    max_in_flight: int = 4,
    stats: Optional[PairStats] = None,
) -> Iterator[dict]:
    """Yield preference-pair records for up to ``count`` batches."""
    template = template or default_template()
    stats = stats if stats is not None else PairStats()
    batches: list[EvalBatch] = []
    # repeated partitions with fresh seeds when count exceeds one pass over the data
    for rnd, round_seed in enumerate(derive_seeds(seed, max(1, count))):
        if len(batches) >= count:
            break
        batches.extend(
            replace(b, batch_id=f"r{rnd}-{b.batch_id}") for b in make_batches(dataset, size_range, seed=round_seed)
        )
    batch_seeds = derive_seeds(seed + 1, len(batches[:count]))
    for batch, batch_seed in zip(batches[:count], batch_seeds):
        stats.batches += 1
        candidates = generate_candidates(batch, compressor, k, batch_seed)
        valid = filter_valid(candidates)
        stats.invalid_candidates += len(candidates) - len(valid)
        scored = judge_candidates(valid, batch, judge, judge_model, weights, template, max_in_flight)
        if len(scored) < 2:
            logger.warning("batch %s: %d usable candidates; skipped", batch.batch_id, len(scored))
            stats.skipped += 1
            continue
        pair = select_pair(scored)
        stats.pairs += 1
        yield pair_record(pair, batch, template)
