"""Batched GEMBA-MQM evaluation: prompts, parsing, compression data and meta-evaluation."""

__version__ = "0.1.0"

from .dataset import Dataset, EvalBatch, load_dataset, make_batches, split_holdout
from .mqm import (
    DEFAULT_WEIGHTS,
    ErrorSpan,
    PredictedError,
    SeverityWeights,
    TranslationExample,
    score_from_errors,
    validate_category,
)
from .prompt import PromptBundle, PromptTemplate, load_template, render_batch_prompt, schema_for
from .tokenizer import DEFAULT_TOKENIZER, count_tokens
