"""Deterministic rule-based tokenizer used for token audits and span-aware compression.

Tokens are runs of word characters, single CJK/kana/hangul characters, or
single punctuation/symbol characters. Whitespace is never a token.
"""

from __future__ import annotations

import re
from functools import lru_cache
from dataclasses import dataclass
from typing import Protocol

_CJK = (
    "぀-ヿ"  # hiragana, katakana
    "㐀-䶿"
    "一-鿿"
    "가-힯"  # hangul syllables
    "豈-﫿"
    "\U00020000-\U0002fa1f"
)
_TOKEN_RE = re.compile(rf"[{_CJK}]|[^\W{_CJK}]+|[^\w\s]")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int

    @property
    def is_word(self) -> bool:
        return bool(_WORD_RE.fullmatch(self.text))


_WORD_RE = re.compile(rf"[^\W{_CJK}]+")


class Tokenizer(Protocol):
    name: str

    def tokenize(self, text: str) -> list[Token]: ...

    def count(self, text: str) -> int: ...


class RuleTokenizer:
    """Unicode word/punctuation segmentation."""

    name = "rule-v1"

    def tokenize(self, text: str) -> list[Token]:
        return list(_tokenize_cached(text))

    def count(self, text: str) -> int:
        return sum(1 for _ in _TOKEN_RE.finditer(text))


@lru_cache(maxsize=4096)
def _tokenize_cached(text: str) -> tuple[Token, ...]:
    # segments are tokenized over and over when many compressions share a dataset
    return tuple(Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text))


DEFAULT_TOKENIZER = RuleTokenizer()


def count_tokens(text: str, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> int:
    return tokenizer.count(text)


def would_merge(left: Token, right: Token) -> bool:
    """True if writing ``right`` directly after ``left`` fuses them into one token."""
    return left.is_word and right.is_word
