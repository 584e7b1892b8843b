"""Command-line entry point.

Settings resolve as: command-line flag > ``--config`` file (JSON or YAML,
keys named after the flags' long form with underscores) > built-in default.
The effective settings are echoed into every run record's ``meta``.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from . import __version__
from .compression import CompressionConfig, CompressionError, generate_stage1, make_compressor
from .dataset import Dataset, DatasetError, holdout_indices, load_dataset, write_dataset
from .gateway import ConfigurationError, GatewayError, LLMClient, make_backend
from .metaeval import (
    TABLES,
    aggregate,
    degradation_csv,
    format_csv,
    format_text,
    metric_table,
    read_run_records,
    relative_degradation,
    rows_to_jsonl,
    write_run_records,
)
from .mqm import SeverityWeights
from .pipeline import DEFAULT_BATCH_SIZES, PairStats, evaluate_batch_size, generate_pairs, token_audit
from .prompt import PromptError, load_template
from .wmt import import_wmt_tsv

logger = logging.getLogger("batchgemba")

EXIT_CONFIG = 2
EXIT_TRANSPORT = 3

DEFAULTS: dict[str, Any] = {
    "model": "gpt-4o-mini",
    "provider": None,
    "provider_url": None,
    "batch_sizes": list(DEFAULT_BATCH_SIZES),
    "batch_size": None,
    "compress": False,
    "compressor": None,
    "candidates": 8,
    "count": None,
    "seed": 0,
    "max_in_flight": 4,
    "max_attempts": 3,
    "template": None,
    "out": None,
    "baseline_batch_size": 1,
    "format": "text",
    "weights": "1,5,25,25",
    "temperature": 0.0,
    "max_output_tokens": 4096,
    "pearson_mode": "pooled",
    "ratio_min": 0.01,
    "ratio_max": 0.70,
    "batch_size_min": 2,
    "batch_size_max": 8,
    "holdout_fraction": 0.1,
    "lang_pair": None,
}


class CLIError(Exception):
    pass


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        values = [int(v) for v in text]
    else:
        values = [int(v) for v in str(text).replace(" ", "").split(",") if v]
    if not values or any(v < 1 for v in values) or len(set(values)) != len(values):
        raise CLIError(f"batch sizes must be distinct positive integers, got {text!r}")
    return values


def _weights(text) -> SeverityWeights:
    if isinstance(text, dict):
        return SeverityWeights(**{k: float(v) for k, v in text.items()})
    parts = [float(v) for v in str(text).split(",")]
    if len(parts) != 4:
        raise CLIError("--weights takes minor,major,critical,cap")
    return SeverityWeights(*parts)


class Settings:
    def __init__(self, args: argparse.Namespace):
        self._args = vars(args)
        self._file: dict = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
            if not isinstance(loaded, dict):
                raise CLIError(f"config file {args.config} must hold a mapping")
            self._file = {k.replace("-", "_"): v for k, v in loaded.items()}

    def __getattr__(self, name: str):
        value = self._args.get(name)
        if value is None:
            value = self._file.get(name)
        if value is None:
            value = DEFAULTS.get(name)
        return value

    def effective(self, keys: Sequence[str]) -> dict:
        return {k: getattr(self, k) for k in keys}


def _require(settings: Settings, name: str) -> Any:
    value = getattr(settings, name)
    if value in (None, ""):
        raise CLIError(f"--{name.replace('_', '-')} is required")
    return value


def _load(settings: Settings) -> Dataset:
    dataset = load_dataset(_require(settings, "dataset"))
    if dataset.diagnostics:
        print(f"{len(dataset.diagnostics)} dataset line(s) rejected", file=sys.stderr)
    if len(dataset) == 0:
        raise DatasetError("dataset is empty")
    return dataset


def _client(settings: Settings) -> LLMClient:
    backend = make_backend(settings.provider, settings.provider_url)
    return LLMClient(backend, max_attempts=int(settings.max_attempts))


def _batch_sizes(settings: Settings) -> list[int]:
    if settings.batch_size is not None:
        return _int_list([settings.batch_size])
    return _int_list(settings.batch_sizes)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)


# -- subcommands ----------------------------------------------------------------


def cmd_evaluate(settings: Settings) -> int:
    dataset = _load(settings)
    template = load_template(settings.template)
    client = _client(settings)
    weights = _weights(settings.weights)
    compressed = bool(settings.compress)
    compressor = make_compressor(settings.compressor or "random:0.14", client, template) if compressed else None
    out = Path(settings.out or "out")
    model = settings.model
    effective = settings.effective(
        ["dataset", "model", "provider", "provider_url", "batch_sizes", "batch_size", "compress", "compressor",
         "seed", "max_in_flight", "template", "weights", "temperature", "max_output_tokens"]
    )
    effective["batch_sizes"] = _batch_sizes(settings)

    all_records, failures = [], 0
    for bs in _batch_sizes(settings):
        result = evaluate_batch_size(
            dataset, client, model, bs, template, compressor,
            seed=int(settings.seed), max_in_flight=int(settings.max_in_flight), weights=weights,
            temperature=float(settings.temperature), max_output_tokens=int(settings.max_output_tokens),
            meta={"config": effective},
        )
        path = out / "runs" / _slug(model) / ("compressed" if compressed else "plain") / f"bs{bs}.jsonl"
        write_run_records(result.records, path)
        all_records.extend(result.records)
        failures += len(result.failed_batches)
        for diag in result.diagnostics:
            logger.info(diag)

    rows = aggregate(all_records, settings.pearson_mode)
    header = ["batch_size", "pearson_r", "examples", "malformed", "error_rate", "total_tokens"]
    body = [
        [r.batch_size, "n/a" if r.pearson_r is None else f"{r.pearson_r:.4f}", r.n_examples, r.n_malformed,
         f"{r.error_rate:.4f}", f"{r.total_tokens:.0f}"]
        for r in rows
    ]
    print(format_text(header, body, title=f"{model} ({'compressed' if compressed else 'plain'})"))
    _write_report(rows, out / "report", int(settings.baseline_batch_size), "text")
    if failures:
        print(f"{failures} batch(es) failed after retries; partial results written to {out}", file=sys.stderr)
        return EXIT_TRANSPORT
    return 0


def cmd_gen_stage1(settings: Settings) -> int:
    dataset = _load(settings)
    template = load_template(settings.template)
    count = int(_require(settings, "count"))
    config = CompressionConfig(
        ratio_min=float(settings.ratio_min), ratio_max=float(settings.ratio_max),
        batch_size_min=int(settings.batch_size_min), batch_size_max=int(settings.batch_size_max),
        seed=int(settings.seed),
    )
    fraction = float(settings.holdout_fraction)
    held = holdout_indices(count, fraction, int(settings.seed)) if fraction > 0 and count >= 2 else set()
    out = Path(settings.out or "stage1.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for i, record in enumerate(generate_stage1(dataset, count, config, template)):
            record.meta["split"] = "holdout" if i in held else "train"
            fh.write(record.to_json() + "\n")
    print(f"wrote {count} stage-1 records ({count - len(held)} train, {len(held)} holdout) to {out}")
    return 0


def cmd_gen_pairs(settings: Settings) -> int:
    dataset = _load(settings)
    template = load_template(settings.template)
    client = _client(settings)
    compressor = make_compressor(settings.compressor, client, template)
    stats = PairStats()
    out = Path(settings.out or "pairs.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    count = int(settings.count or 10)
    with open(out, "w", encoding="utf-8") as fh:
        for record in generate_pairs(
            dataset, compressor, client, settings.model, k=int(settings.candidates), count=count,
            seed=int(settings.seed), weights=_weights(settings.weights), template=template,
            max_in_flight=int(settings.max_in_flight), stats=stats,
        ):
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    print(
        f"batches: {stats.batches}  pairs: {stats.pairs}  skipped: {stats.skipped}  "
        f"invalid candidates: {stats.invalid_candidates}  -> {out}"
    )
    return 0


def cmd_token_audit(settings: Settings) -> int:
    dataset = _load(settings)
    template = load_template(settings.template)
    compressor = make_compressor(settings.compressor or "random:0.14", None, template) if settings.compress else None
    rows = token_audit(dataset, _batch_sizes(settings), template, compressor, seed=int(settings.seed))
    header = ["batch_size", "prompts", "total_tokens", "per_example", "ratio_vs_bs1", "segment_tokens"]
    if compressor:
        header.append("segment_reduction")
    body = []
    for r in rows:
        line = [r.batch_size, r.prompts, r.total_tokens, f"{r.per_example:.1f}",
                "" if r.ratio_vs_bs1 is None else f"{r.ratio_vs_bs1:.3f}", r.segment_tokens]
        if compressor:
            line.append(f"{r.segment_reduction:.4f}")
        body.append(line)
    fmt = settings.format
    if fmt == "csv":
        text = format_csv(header, body)
    elif fmt == "jsonl":
        text = "".join(json.dumps(dict(zip(header, b))) + "\n" for b in body)
    else:
        text = format_text(header, body, title="token audit (default tokenizer)") + "\n"
    sys.stdout.write(text)
    if settings.out:
        Path(settings.out).write_text(text, encoding="utf-8")
    return 0


def _write_report(rows, out: Optional[Path], baseline: int, fmt: str) -> str:
    series = relative_degradation(rows, baseline)
    chunks = []
    files = {}
    for name, (title, _) in TABLES.items():
        header, body = metric_table(rows, name)
        files[f"{name}.csv"] = format_csv(header, body)
        files[f"{name}.txt"] = format_text(header, body, title=title) + "\n"
        chunks.append(files[f"{name}.csv"] if fmt == "csv" else files[f"{name}.txt"])
    files["degradation.csv"] = degradation_csv(series)
    files["rows.jsonl"] = rows_to_jsonl(rows)
    if fmt == "jsonl":
        chunks = [files["rows.jsonl"]]
    chunks.append(files["degradation.csv"] if fmt != "jsonl" else "")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for name, content in files.items():
            (out / name).write_text(content, encoding="utf-8")
    return "\n".join(c for c in chunks if c)


def cmd_report(settings: Settings) -> int:
    paths: list[Path] = []
    for p in settings.runs or []:
        p = Path(p)
        paths.extend(sorted(p.rglob("bs*.jsonl")) if p.is_dir() else [p])
    if not paths:
        raise CLIError("report needs at least one run file")
    records = [rec for p in paths for rec in read_run_records(p)]
    rows = aggregate(records, settings.pearson_mode)
    text = _write_report(rows, Path(settings.out) if settings.out else None,
                         int(settings.baseline_batch_size), settings.format)
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return 0


def cmd_import_wmt(settings: Settings) -> int:
    lang_pair = _require(settings, "lang_pair")
    try:
        src, tgt = lang_pair.split("-")
    except ValueError:
        raise CLIError("--lang-pair takes the form src-tgt, e.g. en-de") from None
    examples, diagnostics = import_wmt_tsv(_require(settings, "dataset"), src, tgt, _weights(settings.weights))
    for diag in diagnostics:
        logger.warning(diag)
    out = Path(settings.out or "dataset.jsonl")
    write_dataset(examples, out)
    print(f"imported {len(examples)} segments ({len(diagnostics)} diagnostics) to {out}")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchgemba", description="Batched GEMBA-MQM evaluation tooling.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, dataset=True):
        p.add_argument("--config", help="JSON/YAML file with default settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file or directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if dataset:
            p.add_argument("--dataset", help="line-delimited dataset file")

    def provider(p):
        p.add_argument("--model", help="model id sent to the provider")
        p.add_argument("--provider", help="mock:<script>, openai or openai-guided (schema-constrained)")
        p.add_argument("--provider-url", help="base URL of an OpenAI-compatible API")
        p.add_argument("--max-in-flight", type=int)
        p.add_argument("--max-attempts", type=int)
        p.add_argument("--weights", help="minor,major,critical,cap (default 1,5,25,25)")

    p = sub.add_parser("evaluate", help="run the batch-size grid against a provider")
    common(p)
    provider(p)
    p.add_argument("--batch-sizes", help="comma-separated, default 1,2,4,8,16")
    p.add_argument("--batch-size", type=int, help="evaluate a single batch size")
    p.add_argument("--compress", action="store_true", default=None)
    p.add_argument("--compressor", help="random, random:<ratio> or remote:<model> (default random:0.14)")
    p.add_argument("--template")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-output-tokens", type=int)
    p.add_argument("--pearson-mode", choices=["pooled", "per-pair"])
    p.add_argument("--baseline-batch-size", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-stage1", help="random span-preserving compression records")
    common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--template")
    p.add_argument("--ratio-min", type=float)
    p.add_argument("--ratio-max", type=float)
    p.add_argument("--batch-size-min", type=int)
    p.add_argument("--batch-size-max", type=int)
    p.add_argument("--holdout-fraction", type=float)
    p.set_defaults(func=cmd_gen_stage1)

    p = sub.add_parser("gen-pairs", help="judge-scored compression preference pairs")
    common(p)
    provider(p)
    p.add_argument("--compressor", help="random, random:<ratio> or remote:<model>")
    p.add_argument("--candidates", type=int, help="candidates per batch (default 8)")
    p.add_argument("--count", type=int, help="number of batches (default 10)")
    p.add_argument("--template")
    p.set_defaults(func=cmd_gen_pairs)

    p = sub.add_parser("token-audit", help="network-free prompt token accounting")
    common(p)
    p.add_argument("--batch-sizes")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--compress", action="store_true", default=None)
    p.add_argument("--compressor")
    p.add_argument("--template")
    p.add_argument("--format", choices=["text", "csv", "jsonl"])
    p.set_defaults(func=cmd_token_audit)

    p = sub.add_parser("report", help="tables and degradation series from run files")
    common(p, dataset=False)
    p.add_argument("runs", nargs="*", help="run files or directories")
    p.add_argument("--baseline-batch-size", type=int)
    p.add_argument("--format", choices=["text", "csv", "jsonl"])
    p.add_argument("--pearson-mode", choices=["pooled", "per-pair"])
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("import-wmt", help="convert a WMT-MQM TSV export to the dataset format")
    common(p)
    p.add_argument("--lang-pair", help="e.g. en-de")
    p.add_argument("--weights")
    p.set_defaults(func=cmd_import_wmt)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(Settings(args))
    except (CLIError, DatasetError, CompressionError, PromptError, ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GatewayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
