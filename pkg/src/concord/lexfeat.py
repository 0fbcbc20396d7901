"""Affect/sentiment lexicons and per-sentence lexical feature vectors.

Every lexicon is read from one TSV layout::

    #channels<TAB>valence<TAB>arousal
    good<TAB>3<TAB>0.4
    ...

Each channel of an ordinary lexicon contributes four aggregates over the
tokens it matches: count, sum, mean and max (zero when nothing matches).  A
lexicon registered under the reserved name ``negation`` contributes only its
match count, i.e. the number of negation words in the sentence.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError

log = logging.getLogger(__name__)

NEGATION = "negation"
AGGREGATORS = ("count", "sum", "mean", "max")


@dataclass
class Lexicon:
    name: str
    channel_names: list[str]
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    duplicates: int = 0

    @property
    def is_negation(self) -> bool:
        return self.name == NEGATION

    def layout(self) -> list[tuple[str, str, str]]:
        if self.is_negation:
            return [(self.name, self.channel_names[0], "count")]
        return [(self.name, ch, agg) for ch in self.channel_names for agg in AGGREGATORS]


def load_lexicon(path, name: str | None = None) -> Lexicon:
    path = Path(path)
    name = name or path.stem
    channels: list[str] | None = None
    entries: dict[str, np.ndarray] = {}
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if channels is None:
                head = line.split("\t")
                if head[0] != "#channels" or len(head) < 2 or not all(head[1:]):
                    raise ParseError("first line must be '#channels<TAB>name...'", path, lineno)
                channels = head[1:]
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != len(channels) + 1:
                raise ParseError(f"{len(cols) - 1} values for {len(channels)} declared channels",
                                 path, lineno)
            token = cols[0].strip().lower()
            if not token:
                raise ParseError("empty token", path, lineno)
            try:
                vec = np.array([float(v) for v in cols[1:]])
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", path, lineno) from None
            if token in entries:
                duplicates += 1
            entries[token] = vec
    if channels is None:
        raise ParseError("missing '#channels' header", path, 1)
    if name == NEGATION and len(channels) != 1:
        raise ParseError("the negation lexicon must have exactly one channel", path, 1)
    if duplicates:
        log.warning("%s: %d duplicate tokens, last occurrence kept", path, duplicates)
    return Lexicon(name, channels, entries, duplicates)


def feature_layout(lexicons: list[Lexicon]) -> list[tuple[str, str, str]]:
    layout = []
    for lex in lexicons:
        layout.extend(lex.layout())
    return layout


@dataclass
class LexFeatureVector:
    values: np.ndarray
    layout: list[tuple[str, str, str]]


def _aggregate(lex: Lexicon, tokens: list[str]) -> list[float]:
    hits = [lex.entries[t] for t in tokens if t in lex.entries]
    if lex.is_negation:
        return [float(len(hits))]
    width = len(lex.channel_names)
    if not hits:
        return [0.0] * (4 * width)
    m = np.vstack(hits)
    out = []
    for c in range(width):
        col = m[:, c]
        total = math.fsum(col)  # exact, so token order cannot matter
        out.extend([float(len(hits)), total, total / len(hits), float(col.max())])
    return out


def featurize(tokens: list[str], lexicons: list[Lexicon]) -> LexFeatureVector:
    values = []
    for lex in lexicons:
        values.extend(_aggregate(lex, tokens))
    return LexFeatureVector(np.array(values, dtype=np.float64), feature_layout(lexicons))
