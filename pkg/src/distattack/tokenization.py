"""Tokenizers and re-tokenization stability checks.

Sampled token sequences are decoded to raw text before reaching a deployed
system, which re-encodes them; a sequence is stable when that round trip
reproduces it exactly. Evaluation always uses the re-encoded sequence.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .core import InvalidInputError, TokenSequence, Vocabulary


class Tokenizer(Protocol):
    vocab: Vocabulary

    def encode(self, text: str) -> TokenSequence: ...

    def decode(self, seq: TokenSequence) -> str: ...


class IdentityTokenizer:
    """Text is the space-joined token ids; encode/decode are exact inverses."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def encode(self, text: str) -> TokenSequence:
        try:
            ids = tuple(int(part) for part in text.split())
        except ValueError as e:
            raise InvalidInputError(f"cannot parse id text: {e}") from e
        return TokenSequence(ids=ids, vocab_size=self.vocab.size)

    def decode(self, seq: TokenSequence) -> str:
        return " ".join(str(i) for i in seq.ids)


class WhitespaceTokenizer:
    """Word-level tokenizer: tokens are whole words separated by spaces."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._ids = vocab.token_to_id()

    def encode(self, text: str) -> TokenSequence:
        words = text.split()
        if not words:
            raise InvalidInputError("cannot encode empty text")
        unknown = [w for w in words if w not in self._ids]
        if unknown:
            raise InvalidInputError(f"words not in vocabulary: {unknown[:5]}")
        return TokenSequence(ids=tuple(self._ids[w] for w in words), vocab_size=self.vocab.size)

    def decode(self, seq: TokenSequence) -> str:
        return " ".join(self.vocab.tokens[i] for i in seq.ids)


class GreedyMergeTokenizer:
    """Subword-style tokenizer: decode concatenates, encode greedily takes the
    longest matching vocabulary prefix.

    Reproduces the classic instability: ["jui", "cy"] decodes to "juicy",
    which re-encodes as ["juic", "y"].
    """

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._by_len = sorted(vocab.tokens, key=len, reverse=True)
        self._ids = vocab.token_to_id()

    def encode(self, text: str) -> TokenSequence:
        ids: list[int] = []
        pos = 0
        while pos < len(text):
            for tok in self._by_len:
                if text.startswith(tok, pos):
                    ids.append(self._ids[tok])
                    pos += len(tok)
                    break
            else:
                raise InvalidInputError(f"cannot tokenize text at offset {pos}: {text[pos:pos+8]!r}")
        if not ids:
            raise InvalidInputError("cannot encode empty text")
        return TokenSequence(ids=tuple(ids), vocab_size=self.vocab.size)

    def decode(self, seq: TokenSequence) -> str:
        return "".join(self.vocab.tokens[i] for i in seq.ids)


@dataclass(frozen=True)
class RetokenizationResult:
    stable: bool
    retokenized: TokenSequence
    error: str | None = None


def check_retokenization(z: TokenSequence, tokenizer: Tokenizer) -> RetokenizationResult:
    """Decode then re-encode; stable iff the round trip reproduces z exactly.

    On decode/encode failure the sequence is reported unstable and returned
    unchanged with a diagnostic.
    """
    try:
        re_encoded = tokenizer.encode(tokenizer.decode(z))
    except InvalidInputError as e:
        return RetokenizationResult(stable=False, retokenized=z, error=str(e))
    return RetokenizationResult(stable=re_encoded.ids == z.ids, retokenized=re_encoded)
