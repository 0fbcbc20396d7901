"""Tokenisation, embedding tables and fixed-length window assembly."""
from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError

log = logging.getLogger(__name__)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel leading/trailing punctuation.

    >>> tokenize("Agree!!!")
    ['agree', '!', '!', '!']
    """
    tokens = []
    for chunk in text.lower().split():
        lead = []
        while chunk and _is_punct(chunk[0]):
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and _is_punct(chunk[-1]):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


@dataclass
class EmbeddingTable:
    """Frozen word vectors.  Row 0 of ``matrix`` is the all-zero OOV/padding row."""

    dim: int
    vocab: dict[str, int] = field(default_factory=dict)
    matrix: np.ndarray | None = None
    duplicates: int = 0

    def __post_init__(self):
        if self.matrix is None:
            self.matrix = np.zeros((1, self.dim))

    @classmethod
    def from_dict(cls, entries: dict[str, list[float]], dim: int) -> "EmbeddingTable":
        vocab = {tok: i + 1 for i, tok in enumerate(entries)}
        matrix = np.zeros((len(entries) + 1, dim))
        for tok, i in vocab.items():
            vec = np.asarray(entries[tok], dtype=np.float64)
            if vec.shape != (dim,):
                raise ConfigError(f"embedding for {tok!r} has length {vec.size}, expected {dim}")
            matrix[i] = vec
        return cls(dim, vocab, matrix)

    @property
    def entries(self) -> dict[str, np.ndarray]:
        return {tok: self.matrix[i] for tok, i in self.vocab.items()}

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def lookup(self, token: str) -> np.ndarray:
        return self.matrix[self.vocab.get(token, 0)]


def load_embeddings(path, dim: int = 300) -> EmbeddingTable:
    """Read a GloVe-style text file: ``token v1 ... v_dim`` per line."""
    if dim < 1:
        raise ConfigError(f"embedding dim must be positive, got {dim}")
    rows: dict[str, list[float]] = {}
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.rstrip(" ").split(" ")
            if len(parts) != dim + 1:
                raise ParseError(f"expected token and {dim} values, found {len(parts) - 1} values",
                                 path, lineno)
            try:
                values = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric component ({exc})", path, lineno) from None
            if parts[0] in rows:
                duplicates += 1
                del rows[parts[0]]  # last occurrence wins, and takes the later row slot
            rows[parts[0]] = values
    if duplicates:
        log.warning("%s: %d duplicate tokens, last occurrence kept", path, duplicates)
    table = EmbeddingTable.from_dict(rows, dim)
    table.duplicates = duplicates
    return table


@dataclass
class TokenWindow:
    matrix: np.ndarray  # [maxlen, dim], zero rows first
    real_length: int


def window_ids(tokens: list[str], table: EmbeddingTable, maxlen: int) -> tuple[np.ndarray, int]:
    """Row indices into ``table.matrix`` for a pre-padded window of the sentence tail."""
    if maxlen < 1:
        raise ConfigError(f"maxlen must be at least 1, got {maxlen}")
    kept = tokens[-maxlen:]
    ids = np.zeros(maxlen, dtype=np.int64)
    if kept:
        ids[maxlen - len(kept):] = [table.vocab.get(t, 0) for t in kept]
    return ids, len(kept)


def embed_and_pad(tokens: list[str], table: EmbeddingTable, maxlen: int) -> TokenWindow:
    ids, n = window_ids(tokens, table, maxlen)
    return TokenWindow(table.matrix[ids], n)
