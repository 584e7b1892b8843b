"""Batching-aware compression data pipelines.

Stage 1 builds supervised (original batch -> compressed batch) records by
random token removal that never touches annotated error spans. Stage 2
samples several compressions per batch, keeps the well-formed ones, has a
judge LLM score each against human MQM scores and emits best/worst pairs for
preference training.
"""

from __future__ import annotations

import bisect
import json
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Protocol, Sequence

from .dataset import Dataset, DatasetError, EvalBatch, round_half_away
from .gateway import CompletionRequest, GatewayError, LLMClient
from .mqm import DEFAULT_WEIGHTS, ErrorSpan, SeverityWeights, TranslationExample
from .parser import outcomes_to_scores, parse_batch_response
from .prompt import PromptTemplate, default_template, render_batch_prompt, schema_for
from .tokenizer import DEFAULT_TOKENIZER, Token, Tokenizer, would_merge

logger = logging.getLogger(__name__)

COMPRESS_INSTRUCTION = (
    "Compress the following batch of translation examples. Remove words that are not needed "
    "to judge translation quality, keep every translation error intact, and keep the batch format "
    "with one entry per example."
)


class CompressionError(ValueError):
    pass


@dataclass(frozen=True)
class CompressionConfig:
    ratio_min: float = 0.01
    ratio_max: float = 0.70
    batch_size_min: int = 2
    batch_size_max: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.ratio_min <= self.ratio_max < 1:
            raise CompressionError("need 0 <= ratio_min <= ratio_max < 1")
        if not 1 <= self.batch_size_min <= self.batch_size_max:
            raise CompressionError("need 1 <= batch_size_min <= batch_size_max")


@dataclass(frozen=True)
class CompressionCandidate:
    """One compressed rendering of a batch.

    ``compressed_examples`` has one (source, target) pair per batch example
    whenever ``format_valid`` is true. ``batch`` is the compressed batch with
    error spans moved to their new offsets.
    """

    batch_id: str
    compressed_examples: tuple[tuple[str, str], ...]
    token_count: int
    achieved_ratio: float
    format_valid: bool
    generator_seed: int
    batch: Optional[EvalBatch] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class SegmentCompression:
    text: str
    removed: int
    removable: int
    total: int
    spans: tuple[ErrorSpan, ...]


def _protected(tokens: Sequence[Token], spans: Sequence[ErrorSpan]) -> list[bool]:
    return [any(t.start < s.end_char and s.start_char < t.end for s in spans) for t in tokens]


def compress_segment(
    text: str,
    spans: Sequence[ErrorSpan],
    ratio: float,
    rng: random.Random,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> SegmentCompression:
    """Remove ``round(ratio * removable)`` unprotected tokens from one segment.

    A token is protected when its character interval intersects any span.
    Kept tokens stay in order; gaps between originally adjacent kept tokens are
    copied verbatim, other gaps collapse to one space (or nothing when the
    original had no whitespace there and no tokens would fuse).
    """
    tokens = tokenizer.tokenize(text)
    protected = _protected(tokens, spans)
    removable = [i for i, p in enumerate(protected) if not p]
    n_remove = round_half_away(ratio * len(removable))
    # a segment must never become empty
    n_remove = min(n_remove, len(removable), max(0, len(tokens) - 1))
    drop = set(rng.sample(removable, n_remove)) if n_remove else set()
    kept = [i for i in range(len(tokens)) if i not in drop]

    if not drop:
        return SegmentCompression(text, 0, len(removable), len(tokens), tuple(spans))

    pieces: list[str] = []
    # (old_start, new_start, length) for every verbatim-copied stretch
    copied: list[tuple[int, int, int]] = []
    pos = 0
    prev = None
    for i in kept:
        tok = tokens[i]
        if prev is not None:
            p = tokens[prev]
            gap = text[p.end : tok.start]
            if i == prev + 1:
                if gap:
                    copied.append((p.end, pos, len(gap)))
                pieces.append(gap)
                pos += len(gap)
            else:
                sep = " " if (any(c.isspace() for c in gap) or would_merge(p, tok)) else ""
                pieces.append(sep)
                pos += len(sep)
        copied.append((tok.start, pos, tok.end - tok.start))
        pieces.append(tok.text)
        pos += tok.end - tok.start
        prev = i
    new_text = "".join(pieces)
    return SegmentCompression(
        new_text, len(drop), len(removable), len(tokens), tuple(_remap_spans(spans, copied))
    )


def _remap_spans(spans: Sequence[ErrorSpan], copied: list[tuple[int, int, int]]) -> list[ErrorSpan]:
    starts = [c[0] for c in copied]
    out = []
    for span in spans:
        new_start = new_end = None
        k = max(0, bisect.bisect_right(starts, span.start_char) - 1)
        for old, new, length in copied[k:]:
            if old >= span.end_char:
                break
            lo, hi = max(old, span.start_char), min(old + length, span.end_char)
            if lo >= hi:
                continue
            if new_start is None:
                new_start = new + (lo - old)
            new_end = new + (hi - old)
        if new_start is not None:
            out.append(replace(span, start_char=new_start, end_char=new_end))
    return out


def _compressed_example(ex: TranslationExample, src: SegmentCompression, tgt: SegmentCompression) -> TranslationExample:
    return replace(ex, source_text=src.text, target_text=tgt.text, spans=src.spans + tgt.spans)


def _side_spans(ex: TranslationExample, side: str) -> list[ErrorSpan]:
    return [s for s in ex.spans if s.side == side]


def random_compress(
    batch: EvalBatch,
    ratio: float,
    seed: int,
    ratio_max: float = 0.70,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    template: Optional[PromptTemplate] = None,
) -> CompressionCandidate:
    """Span-preserving random token removal on both sides of every example."""
    if not 0 <= ratio <= ratio_max:
        raise CompressionError(f"ratio must lie in [0, {ratio_max}], got {ratio}")
    rng = random.Random(seed)
    new_examples = []
    removed = total = 0
    for ex in batch.examples:
        src = compress_segment(ex.source_text, _side_spans(ex, "source"), ratio, rng, tokenizer)
        tgt = compress_segment(ex.target_text, _side_spans(ex, "target"), ratio, rng, tokenizer)
        removed += src.removed + tgt.removed
        total += src.total + tgt.total
        new_examples.append(_compressed_example(ex, src, tgt))
    compressed = EvalBatch(batch.batch_id, batch.lang_pair, tuple(new_examples))
    template = template or default_template()
    return CompressionCandidate(
        batch_id=batch.batch_id,
        compressed_examples=tuple((e.source_text, e.target_text) for e in new_examples),
        token_count=tokenizer.count(template.render_examples(compressed.examples)),
        achieved_ratio=removed / total if total else 0.0,
        format_valid=True,
        generator_seed=seed,
        batch=compressed,
    )


def relocate_spans(original: TranslationExample, source: str, target: str) -> tuple[ErrorSpan, ...]:
    """Find each span's text in the compressed sides; spans that vanished are dropped."""
    out = []
    cursor = {"source": 0, "target": 0}
    for span in sorted(original.spans, key=lambda s: (s.side, s.start_char)):
        needle = original.span_text(span).strip()
        hay = source if span.side == "source" else target
        if not needle:
            continue
        at = hay.find(needle, cursor[span.side])
        if at < 0:
            at = hay.find(needle)
        if at < 0:
            continue
        cursor[span.side] = at + len(needle)
        out.append(replace(span, start_char=at, end_char=at + len(needle)))
    return tuple(out)


def compressed_batch(candidate: CompressionCandidate, original: EvalBatch) -> EvalBatch:
    """The candidate as an evaluable batch carrying the original human scores."""
    if candidate.batch is not None:
        return candidate.batch
    if not candidate.format_valid:
        raise CompressionError(f"candidate {candidate.generator_seed} of {candidate.batch_id} is not well-formed")
    examples = []
    for ex, (src, tgt) in zip(original.examples, candidate.compressed_examples):
        examples.append(replace(ex, source_text=src, target_text=tgt, spans=relocate_spans(ex, src, tgt)))
    return EvalBatch(original.batch_id, original.lang_pair, tuple(examples))


# -- compressors --------------------------------------------------------------


class Compressor(Protocol):
    name: str

    def compress(self, batch: EvalBatch, seed: int) -> CompressionCandidate: ...


class RandomCompressor:
    """Fixed ratio, or a ratio drawn uniformly per seed from [ratio_min, ratio_max]."""

    def __init__(self, ratio: Optional[float] = None, ratio_min: float = 0.01, ratio_max: float = 0.70,
                 template: Optional[PromptTemplate] = None):
        self.ratio = ratio
        self.ratio_min = ratio_min
        self.ratio_max = ratio_max
        self.template = template
        self.name = f"random:{ratio}" if ratio is not None else "random"

    def compress(self, batch: EvalBatch, seed: int) -> CompressionCandidate:
        ratio = self.ratio
        if ratio is None:
            ratio = random.Random(seed).uniform(self.ratio_min, self.ratio_max)
        return random_compress(batch, ratio, seed, ratio_max=max(self.ratio_max, ratio), template=self.template)


def compressor_prompt(batch: EvalBatch, template: Optional[PromptTemplate] = None) -> str:
    template = template or default_template()
    return COMPRESS_INSTRUCTION + "\n\n" + template.render_examples(batch.examples)


def parse_compressed(text: str, batch: EvalBatch, template: Optional[PromptTemplate] = None) -> Optional[list[tuple[str, str]]]:
    """Recover per-example (source, target) pairs from a compressor reply, or None if off-format."""
    template = template or default_template()
    matches = list(template.frame_pattern().finditer(text))
    if len(matches) != len(batch):
        return None
    pairs = []
    for i, (m, ex) in enumerate(zip(matches, batch.examples)):
        if int(m.group("index")) != i:
            return None
        if (m.group("src_lang"), m.group("tgt_lang")) != ex.lang_pair:
            return None
        src, tgt = m.group("source").strip(), m.group("target").strip()
        if not src or not tgt:
            return None
        pairs.append((src, tgt))
    return pairs


class RemoteCompressor:
    """A trained compressor served behind the chat-completion gateway."""

    def __init__(self, client: LLMClient, model_id: str, template: Optional[PromptTemplate] = None,
                 temperature: float = 1.0, tokenizer: Tokenizer = DEFAULT_TOKENIZER):
        self.client = client
        self.model_id = model_id
        self.template = template or default_template()
        self.temperature = temperature
        self.tokenizer = tokenizer
        self.name = f"remote:{model_id}"

    def compress(self, batch: EvalBatch, seed: int) -> CompressionCandidate:
        request = CompletionRequest(
            model_id=self.model_id,
            messages=(("user", compressor_prompt(batch, self.template)),),
            temperature=self.temperature,
            request_tag=f"compress:{batch.batch_id}:{seed}",
            seed=seed,
        )
        text = self.client.complete(request).text
        pairs = parse_compressed(text, batch, self.template)
        original = sum(self.tokenizer.count(e.source_text) + self.tokenizer.count(e.target_text) for e in batch.examples)
        if pairs is None:
            return CompressionCandidate(batch.batch_id, (), self.tokenizer.count(text), 0.0, False, seed)
        kept = sum(self.tokenizer.count(s) + self.tokenizer.count(t) for s, t in pairs)
        ratio = min(max(0.0, 1 - kept / original), 0.999999) if original else 0.0
        candidate = CompressionCandidate(
            batch.batch_id, tuple(pairs),
            self.tokenizer.count(self.template.render_examples(
                [replace(ex, source_text=s, target_text=t, spans=()) for ex, (s, t) in zip(batch.examples, pairs)]
            )),
            ratio, True, seed,
        )
        return replace(candidate, batch=compressed_batch(candidate, batch))


def make_compressor(spec: Optional[str], client: Optional[LLMClient] = None,
                    template: Optional[PromptTemplate] = None) -> Compressor:
    """``random``, ``random:<ratio>`` or ``remote:<model_id>`` (needs ``client``)."""
    spec = spec or "random"
    if spec == "random":
        return RandomCompressor(template=template)
    if spec.startswith("random:"):
        return RandomCompressor(ratio=float(spec.split(":", 1)[1]), template=template)
    if spec.startswith("remote:"):
        if client is None:
            raise CompressionError("remote compressor needs a provider")
        return RemoteCompressor(client, spec.split(":", 1)[1], template=template)
    raise CompressionError(f"unknown compressor spec {spec!r}")


# -- stage 2 --------------------------------------------------------------------


def validate_candidate(candidate: CompressionCandidate, batch: EvalBatch) -> CompressionCandidate:
    ok = (
        candidate.format_valid
        and len(candidate.compressed_examples) == len(batch)
        and all(s and t for s, t in candidate.compressed_examples)
        and 0 <= candidate.achieved_ratio < 1
    )
    return candidate if ok == candidate.format_valid else replace(candidate, format_valid=ok)


def derive_seeds(seed: int, k: int) -> list[int]:
    rng = random.Random(seed)
    seeds: list[int] = []
    while len(seeds) < k:
        s = rng.getrandbits(63)
        if s not in seeds:
            seeds.append(s)
    return seeds


def generate_candidates(batch: EvalBatch, compressor: Compressor, k: int = 8, seed: int = 0) -> list[CompressionCandidate]:
    if k < 2:
        raise CompressionError(f"need at least 2 candidates per batch, got {k}")
    out = []
    for s in derive_seeds(seed, k):
        try:
            candidate = compressor.compress(batch, s)
        except (GatewayError, ValueError) as exc:
            logger.warning("batch %s: compressor failed on seed %d: %s", batch.batch_id, s, exc)
            continue
        out.append(validate_candidate(candidate, batch))
    return out


def filter_valid(candidates: Sequence[CompressionCandidate]) -> list[CompressionCandidate]:
    return [c for c in candidates if c.format_valid]


def judge_request(candidate: CompressionCandidate, batch: EvalBatch, model_id: str,
                  template: Optional[PromptTemplate] = None) -> CompletionRequest:
    judged = compressed_batch(candidate, batch)
    bundle = render_batch_prompt(judged, template, compressed=True)
    return CompletionRequest(
        model_id=model_id,
        messages=bundle.messages,
        schema=bundle.schema,
        request_tag=f"judge:{batch.batch_id}:{candidate.generator_seed}",
        batch=judged,
    )


def quality_from_response(text: str, batch: EvalBatch, weights: SeverityWeights = DEFAULT_WEIGHTS) -> float:
    """Negative mean absolute deviation from human scores; malformed examples count as ``weights.cap``."""
    outcome = parse_batch_response(text, schema_for(len(batch)), batch.batch_id)
    deviations = []
    for (_, score), ex in zip(outcomes_to_scores(outcome, weights), batch.examples):
        deviations.append(weights.cap if score is None else abs(score - ex.human_score))
    return 0.0 - sum(deviations) / len(deviations)


def _require_human_scores(batch: EvalBatch):
    missing = [ex.id for ex in batch.examples if ex.human_score is None]
    if missing:
        raise CompressionError(f"batch {batch.batch_id}: examples without human score: {missing}")


def judge_candidate(candidate: CompressionCandidate, batch: EvalBatch, judge: LLMClient, model_id: str = "judge",
                    weights: SeverityWeights = DEFAULT_WEIGHTS, template: Optional[PromptTemplate] = None) -> float:
    _require_human_scores(batch)
    response = judge.complete(judge_request(candidate, batch, model_id, template))
    return quality_from_response(response.text, batch, weights)


def judge_candidates(candidates: Sequence[CompressionCandidate], batch: EvalBatch, judge: LLMClient,
                     model_id: str = "judge", weights: SeverityWeights = DEFAULT_WEIGHTS,
                     template: Optional[PromptTemplate] = None,
                     max_in_flight: int = 4) -> list[tuple[CompressionCandidate, float]]:
    """Judge many candidates concurrently; candidates whose request fails are dropped."""
    _require_human_scores(batch)
    requests = [judge_request(c, batch, model_id, template) for c in candidates]
    scored = []
    for candidate, result in zip(candidates, judge.run_many(requests, max_in_flight)):
        if isinstance(result, GatewayError):
            logger.warning("batch %s: judging seed %d failed: %s", batch.batch_id, candidate.generator_seed, result)
            continue
        scored.append((candidate, quality_from_response(result.text, batch, weights)))
    return scored


@dataclass(frozen=True)
class PreferencePair:
    batch_id: str
    chosen: CompressionCandidate
    rejected: CompressionCandidate
    quality_chosen: float
    quality_rejected: float

    def __post_init__(self):
        if self.quality_chosen < self.quality_rejected:
            raise ValueError("chosen candidate must not score below the rejected one")
        if self.quality_chosen == self.quality_rejected and self.chosen.token_count > self.rejected.token_count:
            raise ValueError("on equal quality the chosen candidate must not be longer")


def _rank_key(item: tuple[CompressionCandidate, float]):
    cand, quality = item
    return (quality, -cand.token_count, -cand.generator_seed)


def select_pair(scored: Sequence[tuple[CompressionCandidate, float]]) -> PreferencePair:
    """Best vs. worst candidate.

    Higher quality wins; among equal quality the shorter candidate wins, then
    the lower generator seed. The rejected side is the mirror image.
    """
    if len(scored) < 2:
        raise CompressionError("need at least two scored candidates")
    best = max(scored, key=_rank_key)
    worst = min(scored, key=_rank_key)
    if best[0].generator_seed == worst[0].generator_seed:
        raise CompressionError("candidates are indistinguishable")
    return PreferencePair(best[0].batch_id, best[0], worst[0], best[1], worst[1])


def pair_record(pair: PreferencePair, batch: EvalBatch, template: Optional[PromptTemplate] = None) -> dict:
    template = template or default_template()

    def render(c: CompressionCandidate) -> str:
        return template.render_examples(compressed_batch(c, batch).examples)

    return {
        "prompt": compressor_prompt(batch, template),
        "chosen": render(pair.chosen),
        "rejected": render(pair.rejected),
        "meta": {
            "batch_id": batch.batch_id,
            "lang_pair": list(batch.lang_pair),
            "batch_size": len(batch),
            "quality_chosen": pair.quality_chosen,
            "quality_rejected": pair.quality_rejected,
            "tokens_chosen": pair.chosen.token_count,
            "tokens_rejected": pair.rejected.token_count,
            "seed_chosen": pair.chosen.generator_seed,
            "seed_rejected": pair.rejected.generator_seed,
        },
    }


# -- stage 1 --------------------------------------------------------------------


@dataclass(frozen=True)
class Stage1Record:
    original: str
    compressed: str
    meta: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "messages": [
                    {"role": "user", "content": self.original},
                    {"role": "assistant", "content": self.compressed},
                ],
                "meta": self.meta,
            },
            ensure_ascii=False,
        )


def generate_stage1(dataset: Dataset, count: int, config: CompressionConfig = CompressionConfig(),
                    template: Optional[PromptTemplate] = None) -> Iterator[Stage1Record]:
    """Yield ``count`` random-compression records.

    Batches are drawn with replacement across records (never within one
    record) from a single language pair; sizes and ratios are uniform.
    """
    if count < 1:
        raise CompressionError("count must be >= 1")
    if len(dataset) == 0:
        raise DatasetError("cannot generate from an empty dataset")
    template = template or default_template()
    pools = dataset.by_lang_pair()
    largest = max(len(p) for p in pools.values())
    if largest < config.batch_size_min:
        raise DatasetError(f"no language pair has {config.batch_size_min} examples")
    rng = random.Random(config.seed)
    for i in range(count):
        size = rng.randint(config.batch_size_min, config.batch_size_max)
        if size > largest:
            logger.warning("record %d: batch size %d exceeds largest language pair; using %d", i, size, largest)
            size = largest
        eligible = [lp for lp, pool in pools.items() if len(pool) >= size]
        lp = rng.choices(eligible, weights=[len(pools[p]) for p in eligible])[0]
        examples = rng.sample(pools[lp], size)
        ratio = rng.uniform(config.ratio_min, config.ratio_max)
        seed = rng.getrandbits(63)
        batch = EvalBatch(f"s1-{i:06d}", lp, tuple(examples))
        candidate = random_compress(batch, ratio, seed, ratio_max=config.ratio_max, template=template)
        yield Stage1Record(
            original=compressor_prompt(batch, template),
            compressed=template.render_examples(candidate.batch.examples),
            meta={
                "batch_id": batch.batch_id,
                "ratio": ratio,
                "achieved_ratio": candidate.achieved_ratio,
                "batch_size": size,
                "lang_pair": list(lp),
                "seed": seed,
                "ids": [ex.id for ex in examples],
            },
        )
