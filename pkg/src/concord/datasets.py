"""Quote/response pairs: construction from raw corpora, file I/O, statistics, splits."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

from . import LABELS
from .errors import ConfigError, ParseError, StructuralError
from .numcore import Rng

log = logging.getLogger(__name__)

AGREE, DISAGREE, NONE = LABELS


@dataclass(frozen=True)
class RawPost:
    debate_id: str
    post_id: str
    parent_id: str | None
    author: str
    side: str | None
    text: str


@dataclass(frozen=True)
class QRPair:
    quote_text: str
    response_text: str
    label: str
    source_id: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass
class IACAnnotation:
    pair_id: str
    scores: list[float]


# ---------------------------------------------------------------------------
# ABCD side-label derivation
# ---------------------------------------------------------------------------

@dataclass
class DerivationReport:
    missing_side: list[str] = field(default_factory=list)


def derive_abcd_labels(posts: Iterable[RawPost],
                       report: DerivationReport | None = None) -> list[QRPair]:
    """One pair per reply, labelled from authors and debate sides.

    Rules, first match wins: quote is the debate's root post -> none; same
    author as the quote -> none; equal sides -> agree; different sides ->
    disagree.  A reply (or quote) without a side is labelled none and listed in
    ``report.missing_side``.
    """
    report = report if report is not None else DerivationReport()
    by_debate: dict[str, dict[str, RawPost]] = {}
    for p in posts:
        debate = by_debate.setdefault(p.debate_id, {})
        if p.post_id in debate:
            raise StructuralError(f"duplicate post id {p.debate_id}/{p.post_id}")
        debate[p.post_id] = p

    dangling = [f"{p.debate_id}/{p.post_id}->{p.parent_id}"
                for debate in by_debate.values() for p in debate.values()
                if p.parent_id is not None and p.parent_id not in debate]
    if dangling:
        raise StructuralError("parent_id references a missing post: " + ", ".join(sorted(dangling)))

    pairs = []
    for debate_id in sorted(by_debate):
        debate = by_debate[debate_id]
        for post_id in sorted(debate):
            post = debate[post_id]
            if post.parent_id is None:
                continue
            quote = debate[post.parent_id]
            if quote.parent_id is None:
                label = NONE
            elif quote.author == post.author:
                label = NONE
            elif not quote.side or not post.side:
                report.missing_side.append(f"{debate_id}/{post_id}")
                label = NONE
            elif quote.side == post.side:
                label = AGREE
            else:
                label = DISAGREE
            pairs.append(QRPair(quote.text, post.text, label, f"{debate_id}/{post_id}"))
    if report.missing_side:
        log.warning("%d replies without a side label were labelled none", len(report.missing_side))
    return pairs


# ---------------------------------------------------------------------------
# IAC score merging
# ---------------------------------------------------------------------------

def score_label(score: float) -> str:
    """[-5,-1) disagree, [-1,1] none, (1,5] agree; the +-1 boundaries go to none."""
    if score < -1.0:
        return DISAGREE
    if score > 1.0:
        return AGREE
    return NONE


def merge_iac(ann: IACAnnotation) -> str:
    if not ann.scores:
        raise ValueError(f"IAC annotation {ann.pair_id!r} has no scores")
    for s in ann.scores:
        if not -5.0 <= s <= 5.0:
            raise ValueError(f"IAC annotation {ann.pair_id!r}: score {s} outside [-5, 5]")
    polar = [s for s in ann.scores if score_label(s) != NONE]
    if not polar:
        return NONE
    return score_label(math.fsum(polar) / len(polar))


# ---------------------------------------------------------------------------
# JSONL I/O
# ---------------------------------------------------------------------------

def _jsonl_records(path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("each line must be a JSON object", path, lineno)
            yield lineno, obj


def _require(obj: dict, keys, path, lineno):
    missing = [k for k in keys if k not in obj]
    if missing:
        raise ParseError(f"missing key(s) {', '.join(missing)}", path, lineno)


def load_pairs_jsonl(path, require_label: bool = True) -> list[QRPair]:
    """Read ``{"id", "quote", "response", "label"}`` lines.

    Labels are case-sensitive.  With ``require_label=False`` a missing label
    becomes ``none`` (used for IAC pairs whose labels come from annotations).
    """
    pairs = []
    for lineno, obj in _jsonl_records(path):
        _require(obj, ("id", "quote", "response") + (("label",) if require_label else ()),
                 path, lineno)
        label = obj.get("label", NONE)
        if label not in LABELS:
            raise ParseError(f"unknown label {label!r} (expected agree|disagree|none)", path, lineno)
        if not isinstance(obj["quote"], str) or not isinstance(obj["response"], str):
            raise ParseError("quote and response must be strings", path, lineno)
        pairs.append(QRPair(obj["quote"], obj["response"], label, str(obj["id"])))
    return pairs


def write_pairs_jsonl(pairs: Iterable[QRPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"id": p.source_id, "quote": p.quote_text,
                   "response": p.response_text, "label": p.label}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_posts_jsonl(path) -> list[RawPost]:
    posts = []
    for lineno, obj in _jsonl_records(path):
        _require(obj, ("debate_id", "post_id", "author", "text"), path, lineno)
        parent = obj.get("parent_id")
        side = obj.get("side")
        posts.append(RawPost(str(obj["debate_id"]), str(obj["post_id"]),
                             None if parent is None else str(parent),
                             str(obj["author"]), None if side is None else str(side),
                             str(obj["text"])))
    return posts


def load_iac_jsonl(path) -> list[IACAnnotation]:
    """Read ``{"pair_id", "scores": [...]}`` lines."""
    anns = []
    for lineno, obj in _jsonl_records(path):
        _require(obj, ("pair_id", "scores"), path, lineno)
        scores = obj["scores"]
        if not isinstance(scores, list) or not scores:
            raise ParseError("scores must be a nonempty list", path, lineno)
        try:
            scores = [float(s) for s in scores]
        except (TypeError, ValueError):
            raise ParseError("scores must be numbers", path, lineno) from None
        if any(not -5.0 <= s <= 5.0 for s in scores):
            raise ParseError("score outside [-5, 5]", path, lineno)
        anns.append(IACAnnotation(str(obj["pair_id"]), scores))
    return anns


def apply_iac(pairs: list[QRPair], annotations: list[IACAnnotation]) -> list[QRPair]:
    """Label the annotated pairs by merged score; unannotated pairs are dropped."""
    merged: dict[str, list[float]] = {}
    for ann in annotations:
        merged.setdefault(ann.pair_id, []).extend(ann.scores)
    out = []
    for p in pairs:
        if p.source_id in merged:
            label = merge_iac(IACAnnotation(p.source_id, merged[p.source_id]))
            out.append(QRPair(p.quote_text, p.response_text, label, p.source_id))
    return out


# ---------------------------------------------------------------------------
# Statistics and splits
# ---------------------------------------------------------------------------

HIST_BIN = 10


@dataclass
class StatsReport:
    counts: dict[str, int]
    quote_mean: float
    quote_median: float
    response_mean: float
    response_median: float
    histogram: list[tuple[int, int, int]]  # (bin_start, quote_count, response_count)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_start", "quote_count", "response_count"])
        w.writerows(self.histogram)
        return buf.getvalue()

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("histogram")
        d["total"] = sum(self.counts.values())
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def dataset_stats(pairs: list[QRPair], tokenizer: Callable[[str], list[str]]) -> StatsReport:
    counts = Counter(p.label for p in pairs)
    q_lens = [len(tokenizer(p.quote_text)) for p in pairs]
    r_lens = [len(tokenizer(p.response_text)) for p in pairs]

    def mean(xs):
        return statistics.fmean(xs) if xs else 0.0

    def median(xs):
        return float(statistics.median(xs)) if xs else 0.0

    hist = []
    if pairs:
        qb = Counter(n // HIST_BIN for n in q_lens)
        rb = Counter(n // HIST_BIN for n in r_lens)
        top = max(max(qb), max(rb))
        hist = [(b * HIST_BIN, qb[b], rb[b]) for b in range(top + 1)]
    return StatsReport({lab: counts.get(lab, 0) for lab in LABELS},
                       mean(q_lens), median(q_lens), mean(r_lens), median(r_lens), hist)


def split_dataset(pairs: list, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Deterministic shuffle then contiguous train/dev/test slices."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, "
                          f"got {tuple(fractions)}")
    items = list(pairs)
    rng = Rng(seed)
    for i in range(len(items) - 1, 0, -1):
        j = rng.randint(i + 1)
        items[i], items[j] = items[j], items[i]
    n = len(items)
    n_train = round(fractions[0] * n)
    n_dev = min(round(fractions[1] * n), n - n_train)
    return items[:n_train], items[n_train:n_train + n_dev], items[n_train + n_dev:]
