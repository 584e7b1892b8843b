"""BatchGEMBA-MQM prompt rendering, token accounting and output schema."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .dataset import EvalBatch, example_from_record
from .mqm import TranslationExample
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

FRAME_FIELDS = ("index", "src_lang", "tgt_lang", "source", "target")
FRAME_SEPARATOR = "\n\n"


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class OutputSchema:
    """Expected model output: ``{"evaluations": [{"index": i, "errors": [...]}, ...]}``."""

    expected_indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(self.expected_indices)
        object.__setattr__(self, "expected_indices", idx)
        if not idx or idx != tuple(range(len(idx))):
            raise PromptError("expected_indices must be contiguous from 0")

    @property
    def batch_size(self) -> int:
        return len(self.expected_indices)

    def to_json_schema(self) -> dict:
        error = {
            "type": "object",
            "properties": {
                "severity": {"type": "string", "enum": ["minor", "major", "critical"]},
                "category": {"type": "string"},
                "span": {"type": "string"},
            },
            "required": ["severity", "category", "span"],
            "additionalProperties": False,
        }
        evaluation = {
            "type": "object",
            "properties": {
                "index": {"type": "integer", "enum": list(self.expected_indices)},
                "errors": {"type": "array", "items": error},
            },
            "required": ["index", "errors"],
            "additionalProperties": False,
        }
        n = self.batch_size
        return {
            "type": "object",
            "properties": {
                "evaluations": {"type": "array", "items": evaluation, "minItems": n, "maxItems": n}
            },
            "required": ["evaluations"],
            "additionalProperties": False,
        }


def schema_for(batch_size: int) -> OutputSchema:
    if batch_size < 1:
        raise PromptError(f"batch_size must be >= 1, got {batch_size}")
    return OutputSchema(tuple(range(batch_size)))


@dataclass(frozen=True)
class PromptTemplate:
    instruction_text: str
    fewshot_examples: tuple[tuple[TranslationExample, dict], ...]
    per_example_frame: str
    output_instructions: str

    def __post_init__(self):
        object.__setattr__(self, "fewshot_examples", tuple(self.fewshot_examples))
        if len(self.fewshot_examples) != 3:
            raise PromptError(f"template needs exactly 3 few-shot examples, got {len(self.fewshot_examples)}")
        names = {f[1] for f in string.Formatter().parse(self.per_example_frame) if f[1]}
        missing = set(FRAME_FIELDS) - names
        if missing:
            raise PromptError(f"frame is missing placeholders: {sorted(missing)}")

    def frame(self, index: int, example: TranslationExample) -> str:
        return self.per_example_frame.format(
            index=index,
            src_lang=example.source_lang,
            tgt_lang=example.target_lang,
            source=example.source_text,
            target=example.target_text,
        )

    def render_examples(self, examples: Sequence[TranslationExample]) -> str:
        return FRAME_SEPARATOR.join(self.frame(i, ex) for i, ex in enumerate(examples))

    def demonstration_answer(self) -> str:
        evaluations = [
            {"index": i, "errors": list(evaluation.get("errors", []))}
            for i, (_, evaluation) in enumerate(self.fewshot_examples)
        ]
        return json.dumps({"evaluations": evaluations}, ensure_ascii=False)

    def frame_pattern(self) -> re.Pattern:
        """Regex recovering the five fields from a rendered frame."""
        parts = []
        seen = set()
        for literal, name, _, _ in string.Formatter().parse(self.per_example_frame):
            parts.append(re.escape(literal))
            if name is None:
                continue
            if name in seen:
                parts.append(f"(?P={name})")
                continue
            seen.add(name)
            if name == "index":
                parts.append(r"(?P<index>\d+)")
            elif name in ("source", "target"):
                parts.append(f"(?P<{name}>.*?)")
            else:
                parts.append(f"(?P<{name}>[^\\s()]+?)")
        return re.compile("".join(parts), re.DOTALL)


def load_template(path: Union[str, Path, None] = None) -> PromptTemplate:
    """Load a template file; ``None`` loads the shipped default."""
    if path is None:
        raw = resources.files("batchgemba").joinpath("data/default_template.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    data = json.loads(raw)
    try:
        fewshot = tuple(
            (example_from_record(entry["example"]), entry["evaluation"]) for entry in data["fewshot"]
        )
        return PromptTemplate(
            instruction_text=data["instruction"],
            fewshot_examples=fewshot,
            per_example_frame=data["frame"],
            output_instructions=data["output_instructions"],
        )
    except KeyError as exc:
        raise PromptError(f"template missing key {exc}") from None


@dataclass(frozen=True)
class PromptBundle:
    messages: tuple[tuple[str, str], ...]
    token_count: int
    batch_size: int
    compressed: bool
    schema: OutputSchema

    def as_chat(self) -> list[dict]:
        return [{"role": role, "content": content} for role, content in self.messages]


def joined_contents(messages: Sequence[tuple[str, str]]) -> str:
    return "\n".join(content for _, content in messages)


def render_batch_prompt(
    batch: Union[EvalBatch, Sequence[TranslationExample]],
    template: Optional[PromptTemplate] = None,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    compressed: bool = False,
) -> PromptBundle:
    """Render one prompt for a whole batch.

    Order: instruction (system), demonstration mini-batch (user), its JSON
    evaluations (assistant), then the target batch followed by the output
    instructions (user).
    """
    examples = batch.examples if isinstance(batch, EvalBatch) else tuple(batch)
    if not examples:
        raise PromptError("cannot render an empty batch")
    template = template or default_template()
    demo_examples = [ex for ex, _ in template.fewshot_examples]
    messages = (
        ("system", template.instruction_text),
        ("user", template.render_examples(demo_examples)),
        ("assistant", template.demonstration_answer()),
        ("user", template.render_examples(examples) + FRAME_SEPARATOR + template.output_instructions),
    )
    return PromptBundle(
        messages=messages,
        token_count=tokenizer.count(joined_contents(messages)),
        batch_size=len(examples),
        compressed=compressed,
        schema=schema_for(len(examples)),
    )


_DEFAULT: Optional[PromptTemplate] = None


def default_template() -> PromptTemplate:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_template()
    return _DEFAULT
