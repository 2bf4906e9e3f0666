"""Deterministic toy tokenization and attribute-position matching.

Captions are lowercased, stripped of punctuation and split on whitespace;
every word is one token (no subwords).  Token ids are stable hashes so
identical text always produces identical ids across runs and processes.
"""

from __future__ import annotations

import enum
import hashlib
import string
from dataclasses import dataclass

PAD_ID = 0
START_ID = 1
END_ID = 2
# id 3 reserved; hashed word ids occupy [4, 65536)
VOCAB_SIZE = 65536
_WORD_ID_BASE = 4

START_TOKEN = "[START]"
END_TOKEN = "[END]"
PAD_TOKEN = "[PAD]"

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class Kind(enum.Enum):
    START = "start"
    TEXT = "text"
    END = "end"
    PAD = "pad"


class Flavor(enum.Enum):
    """Text-encoder attention style the downstream masks are built for."""

    BIDIRECTIONAL = "bidirectional"
    CAUSAL = "causal"


class CaptionTooLongError(ValueError):
    """Caption has more words than total_len - 2 can hold."""


def normalize_words(text: str) -> list[str]:
    """Lowercase, strip punctuation and split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def word_id(word: str) -> int:
    """Stable hash of a word into [4, 65536); collisions are acceptable."""
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    value = int.from_bytes(digest[:8], "big")
    return _WORD_ID_BASE + value % (VOCAB_SIZE - _WORD_ID_BASE)


@dataclass(frozen=True)
class TokenSequence:
    """A tokenized caption: START, L text tokens, END, then padding."""

    tokens: tuple[str, ...]
    ids: tuple[int, ...]
    kinds: tuple[Kind, ...]
    text_len: int
    total_len: int

    def __post_init__(self):
        if self.total_len != len(self.tokens):
            raise ValueError("total_len disagrees with token count")
        if self.total_len < self.text_len + 2:
            raise ValueError("total_len must be at least text_len + 2")

    @property
    def end_index(self) -> int:
        return self.text_len + 1

    def text_positions(self) -> tuple[int, ...]:
        return tuple(range(1, self.text_len + 1))

    def pad_positions(self) -> tuple[int, ...]:
        return tuple(range(self.text_len + 2, self.total_len))


def tokenize(text: str, total_len: int) -> TokenSequence:
    """Tokenize ``text`` into a padded sequence of exactly ``total_len``.

    Raises:
        CaptionTooLongError: if the caption needs more than total_len - 2
            positions.
    """
    words = normalize_words(text)
    if len(words) > total_len - 2:
        raise CaptionTooLongError(
            f"caption has {len(words)} words; max {total_len - 2} "
            f"for total_len={total_len}"
        )
    n_pad = total_len - len(words) - 2
    tokens = [START_TOKEN, *words, END_TOKEN, *([PAD_TOKEN] * n_pad)]
    ids = [START_ID, *(word_id(w) for w in words), END_ID, *([PAD_ID] * n_pad)]
    kinds = [
        Kind.START,
        *([Kind.TEXT] * len(words)),
        Kind.END,
        *([Kind.PAD] * n_pad),
    ]
    return TokenSequence(
        tokens=tuple(tokens),
        ids=tuple(ids),
        kinds=tuple(kinds),
        text_len=len(words),
        total_len=total_len,
    )


@dataclass(frozen=True)
class AttributePositions:
    """Sorted index set of attribute tokens inside a TokenSequence."""

    positions: tuple[int, ...]
    source_words: tuple[str, ...]

    def __post_init__(self):
        if list(self.positions) != sorted(set(self.positions)):
            raise ValueError("positions must be sorted and duplicate-free")
        if any(p < 0 for p in self.positions):
            raise ValueError("positions must be non-negative")

    def as_set(self) -> frozenset[int]:
        return frozenset(self.positions)


def match_positions(
    cap: TokenSequence,
    attrs: list[str],
    flavor: Flavor,
    include_pads: bool = True,
) -> AttributePositions:
    """Locate attribute words in a tokenized caption, token by token.

    All occurrences of every attribute token are matched.  On top of the
    word matches the flavor-specific extras are added: the bidirectional
    flavor keeps every PAD position (disable with ``include_pads=False``),
    the causal flavor keeps START and END.
    """
    attr_tokens = set()
    for attr in attrs:
        attr_tokens.update(normalize_words(attr))

    positions = {
        i
        for i in cap.text_positions()
        if cap.tokens[i] in attr_tokens
    }
    if flavor is Flavor.BIDIRECTIONAL and include_pads:
        positions.update(cap.pad_positions())
    if flavor is Flavor.CAUSAL:
        positions.add(0)
        positions.add(cap.end_index)
    return AttributePositions(
        positions=tuple(sorted(positions)),
        source_words=tuple(attrs),
    )
