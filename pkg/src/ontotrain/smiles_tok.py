"""SMILES tokenization and the integer vocabulary shared by every model stage."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, CLS, MASK, UNK = "[PAD]", "[CLS]", "[MASK]", "[UNK]"
SPECIALS = (PAD, CLS, MASK, UNK)
PAD_ID, CLS_ID, MASK_ID, UNK_ID = range(4)

DEFAULT_MAX_SIZE = 1400
DEFAULT_MAX_LEN = 256

# Alternatives are tried in order at each offset, so earlier ones win.
_GRAMMAR = re.compile(
    r"""
    \[[^\[\]]+\]          # bracket atom, kept whole
  | %[0-9]{2}             # two-digit ring closure
  | Cl | Br               # two-letter organic-subset elements
  | [BCNOPSFIbcnosp]      # one-letter atoms
  | [0-9]                 # ring closure digit
  | [-=\#$:/\\().+@*]     # bonds, branches, charges, stereo, wildcard
    """,
    re.VERBOSE,
)


class TokenizeError(ValueError):
    """Raised when part of a SMILES string matches no grammar production."""

    def __init__(self, smiles: str, offset: int, line: int | None = None):
        self.smiles = smiles
        self.offset = offset
        self.line = line
        where = f"line {line}, " if line is not None else ""
        super().__init__(f"{where}offset {offset}: cannot tokenize {smiles!r} at {smiles[offset:offset + 8]!r}")


class SequenceTooLong(ValueError):
    def __init__(self, length: int, max_len: int):
        self.length = length
        self.max_len = max_len
        super().__init__(f"sequence of {length} tokens does not fit max_len={max_len} (CLS takes one slot)")


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    source: str

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize(smiles: str) -> TokenSequence:
    """Split a SMILES string into grammar tokens.

    The split is lossless: ``"".join(tokenize(s).tokens) == s``.

    >>> tokenize("C(Cl)Br").tokens
    ('C', '(', 'Cl', ')', 'Br')
    """
    if not smiles:
        raise TokenizeError(smiles, 0)
    if not smiles.isascii():
        bad = next(i for i, ch in enumerate(smiles) if not ch.isascii())
        raise TokenizeError(smiles, bad)
    tokens = []
    pos = 0
    while pos < len(smiles):
        m = _GRAMMAR.match(smiles, pos)
        if m is None:
            raise TokenizeError(smiles, pos)
        tokens.append(m.group())
        pos = m.end()
    return TokenSequence(tuple(tokens), smiles)


class Vocabulary:
    """Bijective token-text/id map. Ids 0-3 are always the special tokens."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate token in vocabulary")
        self._tokens = tuple(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, text: str) -> bool:
        return text in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id_of(self, text: str) -> int:
        # A bracket atom spelled like a special token must not alias it.
        if text in SPECIALS:
            return UNK_ID
        return self._ids.get(text, UNK_ID)

    def text_of(self, idx: int) -> str:
        return self._tokens[idx]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in self._tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocabulary(corpus: Iterable[str], max_size: int = DEFAULT_MAX_SIZE) -> Vocabulary:
    """Specials first, then tokens by descending frequency (ties lexicographic), truncated to ``max_size``."""
    if max_size < len(SPECIALS) + 1:
        raise ValueError(f"max_size must be at least {len(SPECIALS) + 1}, got {max_size}")
    counts: Counter[str] = Counter()
    for lineno, smiles in enumerate(corpus, start=1):
        try:
            counts.update(tokenize(smiles).tokens)
        except TokenizeError as err:
            raise TokenizeError(err.smiles, err.offset, line=lineno) from None
    for special in SPECIALS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [t for t, _ in ranked[: max_size - len(SPECIALS)]]
    return Vocabulary(list(SPECIALS) + keep)


def encode(seq: TokenSequence, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> tuple[list[int], list[int]]:
    """Return ``([CLS] + ids + padding, mask)`` of length ``max_len``; unknown tokens become UNK."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    if len(seq.tokens) > max_len - 1:
        raise SequenceTooLong(len(seq.tokens), max_len)
    ids = [CLS_ID] + [vocab.id_of(t) for t in seq.tokens]
    n = len(ids)
    return ids + [PAD_ID] * (max_len - n), [1] * n + [0] * (max_len - n)


def decode(ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    """Token texts for ``ids`` with PAD and CLS dropped."""
    return [vocab.text_of(i) for i in ids if i not in (PAD_ID, CLS_ID)]
