"""Tokenization, vocabulary, and trainable word vectors with an OOV fallback.

Unknown words are mapped to the most similar in-vocabulary word by character
trigram overlap (Dice), so that typos such as missing or swapped letters
still land near the intended word vector. Below a similarity floor the
lookup falls back to the UNK row.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .tensor import Tensor, take_rows

__all__ = [
    "PAD",
    "SOS",
    "EOS",
    "UNK",
    "RESERVED_TOKENS",
    "tokenize",
    "Vocabulary",
    "build_vocabulary",
    "EmbeddingTable",
    "trigram_dice",
    "resolve_token",
    "embed_token",
    "embed_sentence",
]

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<sos>", "<eos>", "<unk>")

_DETACHED = set(".,?!'\"")

# OOV matches below this trigram-Dice similarity fall back to UNK.
OOV_SIMILARITY_FLOOR = 0.3


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, detaching .,?!'\" as own tokens."""
    out: list[str] = []
    word: list[str] = []
    for ch in text.lower():
        if ch.isspace():
            if word:
                out.append("".join(word))
                word = []
        elif ch in _DETACHED:
            if word:
                out.append("".join(word))
                word = []
            out.append(ch)
        else:
            word.append(ch)
    if word:
        out.append("".join(word))
    return out


class Vocabulary:
    """Token/id bijection with fixed reserved ids PAD=0, SOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens=()):
        self._tokens: list[str] = list(RESERVED_TOKENS)
        self._ids: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        for token in tokens:
            self.add(token)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def add(self, token: str) -> int:
        """Insert a token if new; returns its id either way."""
        existing = self._ids.get(token)
        if existing is not None:
            return existing
        idx = len(self._tokens)
        self._tokens.append(token)
        self._ids[token] = idx
        return idx

    def id(self, token: str):
        return self._ids.get(token)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def tokens(self) -> list[str]:
        """All tokens including the reserved ones, in id order."""
        return list(self._tokens)

    def save(self, path) -> None:
        """One non-reserved token per line; line number = id - 4."""
        from .formats import atomic_write_text

        atomic_write_text(path, "".join(t + "\n" for t in self._tokens[len(RESERVED_TOKENS):]))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        vocab = cls()
        for line in lines:
            if not line:
                raise ValidationError(f"empty vocabulary line in {path}")
            vocab.add(line)
        return vocab


def build_vocabulary(token_lists) -> Vocabulary:
    """Vocabulary over all tokens seen, in sorted order for reproducibility."""
    seen = set()
    for toks in token_lists:
        seen.update(toks)
    return Vocabulary(sorted(seen - set(RESERVED_TOKENS)))


def _trigrams(token: str) -> frozenset:
    padded = "<" + token + ">"
    return frozenset(padded[i:i + 3] for i in range(len(padded) - 2))


def trigram_dice(a: str, b: str) -> float:
    """Dice coefficient over boundary-padded character trigram sets."""
    ta, tb = _trigrams(a), _trigrams(b)
    if not ta or not tb:
        return 0.0
    return 2.0 * len(ta & tb) / (len(ta) + len(tb))


def resolve_token(vocab: Vocabulary, token: str) -> int:
    """Token id by exact match, trigram-Dice fallback, or UNK.

    The fallback scans non-reserved entries and keeps the best score with
    ties broken by lower id; matches below the floor resolve to UNK.
    """
    exact = vocab.id(token)
    if exact is not None:
        return exact
    query = _trigrams(token)
    if not query:
        return UNK
    best_id = UNK
    best_score = 0.0
    for idx in range(len(RESERVED_TOKENS), len(vocab)):
        cand = _trigrams(vocab.token(idx))
        if not cand:
            continue
        score = 2.0 * len(query & cand) / (len(query) + len(cand))
        if score > best_score:
            best_score = score
            best_id = idx
    if best_score < OOV_SIMILARITY_FLOOR:
        return UNK
    return best_id


class EmbeddingTable:
    """Trainable word vectors, one row per vocabulary entry."""

    def __init__(self, matrix: Tensor, width: int):
        if matrix.ndim != 2 or matrix.cols != width:
            raise ValidationError(
                f"embedding matrix shape {matrix.shape} inconsistent with width {width}"
            )
        self.matrix = matrix
        self.width = width

    @classmethod
    def create(cls, vocab_size: int, width: int, rng: np.random.Generator) -> "EmbeddingTable":
        # uniform [-0.1, 0.1] init
        data = rng.uniform(-0.1, 0.1, size=(vocab_size, width))
        return cls(Tensor(data, check=False), width)

    def row(self, idx: int) -> Tensor:
        return take_rows(self.matrix, [idx])


def embed_token(vocab: Vocabulary, table: EmbeddingTable, token: str) -> Tensor:
    """1*d_w vector for `token`; never fails thanks to the OOV fallback."""
    if len(vocab) != table.matrix.rows:
        raise ValidationError(
            f"embedding rows ({table.matrix.rows}) do not match vocabulary size ({len(vocab)})"
        )
    return table.row(resolve_token(vocab, token))


def embed_sentence(vocab: Vocabulary, table: EmbeddingTable, tokens) -> Tensor:
    """n*d_w matrix of token vectors, in input order; rejects empty input."""
    if not tokens:
        raise ValidationError("cannot embed an empty token list")
    if len(vocab) != table.matrix.rows:
        raise ValidationError(
            f"embedding rows ({table.matrix.rows}) do not match vocabulary size ({len(vocab)})"
        )
    ids = [resolve_token(vocab, t) for t in tokens]
    return take_rows(table.matrix, ids)
