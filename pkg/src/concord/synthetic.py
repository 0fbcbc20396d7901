"""Small deterministic corpora for tests, demos and the ``fixtures`` command.

Real corpora and full-size embeddings are not redistributable, so every
fixture here is generated from a fixed seed and written in the same file
formats the loaders accept.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .datasets import IACAnnotation, QRPair, RawPost, write_pairs_jsonl
from .lexfeat import Lexicon
from .numcore import Rng
from .textprep import EmbeddingTable

AGREE_WORDS = ("agree", "exactly", "right", "yes", "indeed", "true", "correct", "absolutely")
DISAGREE_WORDS = ("wrong", "no", "false", "nonsense", "never", "disagree", "absurd", "mistaken")
TOPIC_WORDS = ("the", "school", "uniforms", "money", "people", "debate", "religion", "tax",
               "science", "policy", "city", "health", "today", "rules", "students", "market")

FIXTURE_DIM = 16


def _pick(rng: Rng, words, k: int) -> list[str]:
    return [words[rng.randint(len(words))] for _ in range(k)]


def separable_pairs(n_per_label: int = 10, seed: int = 0) -> list[QRPair]:
    """Pairs whose label is fixed by the cue words in the response.

    Agree responses carry agree cues, disagree responses carry disagree cues
    and none responses carry only topic words, so both the embedding and the
    lexicon views separate the classes.
    """
    rng = Rng(seed)
    pairs = []
    for i in range(n_per_label):
        for label in ("agree", "disagree", "none"):
            quote = _pick(rng, TOPIC_WORDS, 5 + rng.randint(4))
            body = _pick(rng, TOPIC_WORDS, 2 + rng.randint(3))
            if label == "agree":
                body = _pick(rng, AGREE_WORDS, 2) + body
            elif label == "disagree":
                body = _pick(rng, DISAGREE_WORDS, 2) + body
            pairs.append(QRPair(" ".join(quote), " ".join(body) + ".", label, f"s{i}-{label}"))
    return pairs


def fixture_embeddings(dim: int = FIXTURE_DIM, seed: int = 0) -> dict[str, np.ndarray]:
    """Clustered vectors: each cue family shares a centre, topic words are spread out."""
    rng = Rng(seed)

    def noise(scale):
        return (rng.uniform_array(dim) - 0.5) * scale

    centre_a, centre_d = noise(2.0), noise(2.0)
    vectors = {}
    for w in AGREE_WORDS:
        vectors[w] = centre_a + noise(0.4)
    for w in DISAGREE_WORDS:
        vectors[w] = centre_d + noise(0.4)
    for w in TOPIC_WORDS:
        vectors[w] = noise(1.0)
    vectors["."] = noise(0.2)
    return {w: np.round(v, 6) for w, v in vectors.items()}


def fixture_table(dim: int = FIXTURE_DIM, seed: int = 0) -> EmbeddingTable:
    return EmbeddingTable.from_dict(fixture_embeddings(dim, seed), dim)


def fixture_lexicon() -> Lexicon:
    """Two-channel affect lexicon (valence, arousal); 8 features after aggregation."""
    entries = {}
    for i, w in enumerate(AGREE_WORDS):
        entries[w] = np.array([0.6 + 0.05 * i, 0.3 + 0.02 * i])
    for i, w in enumerate(DISAGREE_WORDS):
        entries[w] = np.array([-0.6 - 0.05 * i, 0.7 - 0.02 * i])
    entries["money"] = np.array([0.1, 0.4])
    entries["health"] = np.array([0.2, 0.2])
    return Lexicon("affect", ["valence", "arousal"], entries)


def thread_posts() -> list[RawPost]:
    """Two debates (20 posts) that exercise every side-label rule.

    Labels of the 18 replies, by rule: quote is root (4), same author (3),
    missing side (3), equal sides (4), different sides (4).
    """
    P = RawPost
    return [
        P("d1", "p01", None, "ann", None, "should school uniforms be mandatory"),
        P("d1", "p02", "p01", "bob", "for", "uniforms save money for families"),
        P("d1", "p03", "p01", "cat", "against", "uniforms kill self expression"),
        P("d1", "p04", "p02", "dan", "for", "yes and they reduce bullying"),
        P("d1", "p05", "p02", "eve", "against", "no they cost more in the end"),
        P("d1", "p06", "p02", "bob", "for", "also they save time every morning"),
        P("d1", "p07", "p03", "fay", "against", "exactly , students need choice"),
        P("d1", "p08", "p03", "gus", "for", "wrong , choice is not the point"),
        P("d1", "p09", "p03", "hal", None, "i am not sure about this"),
        P("d1", "p10", "p05", "eve", "against", "and the fabric is cheap too"),
        P("d2", "q01", None, "ivy", None, "is a carbon tax good policy"),
        P("d2", "q02", "q01", "jon", "for", "a tax prices the harm correctly"),
        P("d2", "q03", "q01", "kim", "against", "it hurts poor households most"),
        P("d2", "q04", "q02", "lea", "for", "right , markets respond to prices"),
        P("d2", "q05", "q02", "max", "against", "nonsense , people still need to drive"),
        P("d2", "q06", "q03", "ned", "against", "indeed the burden is regressive"),
        P("d2", "q07", "q03", "oli", "for", "not if the revenue is returned"),
        P("d2", "q08", "q04", "lea", "for", "and it is simple to run"),
        P("d2", "q09", "q05", "pam", None, "what about public transit"),
        P("d2", "q10", "q09", "rex", "against", "transit is not everywhere"),
    ]


THREAD_EXPECTED = {
    "d1/p02": "none", "d1/p03": "none", "d1/p04": "agree", "d1/p05": "disagree",
    "d1/p06": "none", "d1/p07": "agree", "d1/p08": "disagree", "d1/p09": "none",
    "d1/p10": "none", "d2/q02": "none", "d2/q03": "none", "d2/q04": "agree",
    "d2/q05": "disagree", "d2/q06": "agree", "d2/q07": "disagree", "d2/q08": "none",
    "d2/q09": "none", "d2/q10": "none",
}


def iac_fixture() -> tuple[list[QRPair], list[IACAnnotation]]:
    """Unlabelled pairs plus annotator scores covering each merge case and the +-1 boundaries."""
    cases = {
        "i1": [0.0, 3.0],        # none ignored -> agree
        "i2": [-2.0, -4.0, 1.0],  # mean of polar scores -3 -> disagree
        "i3": [2.0, -4.0],       # mean -1 falls in the none band
        "i4": [0.5, -1.0, 1.0],  # all none, boundaries included
        "i5": [1.5],
        "i6": [-1.5],
    }
    pairs = [QRPair(f"quote {k}", f"response {k}", "none", k) for k in cases]
    return pairs, [IACAnnotation(k, v) for k, v in cases.items()]


IAC_EXPECTED = {"i1": "agree", "i2": "disagree", "i3": "none", "i4": "none",
                "i5": "agree", "i6": "disagree"}


def awtp_pairs(counts=(219, 471, 703), seed: int = 0) -> list[QRPair]:
    """AWTP-format pairs with the given (agree, disagree, none) counts, shuffled."""
    rng = Rng(seed)
    pairs = []
    for label, n in zip(("agree", "disagree", "none"), counts):
        for i in range(n):
            q = _pick(rng, TOPIC_WORDS, 3 + rng.randint(40))
            r = _pick(rng, TOPIC_WORDS, 1 + rng.randint(30))
            pairs.append(QRPair(" ".join(q), " ".join(r), label, f"w{label[0]}{i}"))
    for i in range(len(pairs) - 1, 0, -1):
        j = rng.randint(i + 1)
        pairs[i], pairs[j] = pairs[j], pairs[i]
    return pairs


def write_embeddings(vectors: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w, v in vectors.items():
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


def write_lexicon(lex: Lexicon, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#channels\t" + "\t".join(lex.channel_names) + "\n")
        for w, v in lex.entries.items():
            fh.write(w + "\t" + "\t".join(repr(float(x)) for x in v) + "\n")


def write_posts(posts: list[RawPost], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in posts:
            fh.write(json.dumps({"debate_id": p.debate_id, "post_id": p.post_id,
                                 "parent_id": p.parent_id, "author": p.author,
                                 "side": p.side, "text": p.text}) + "\n")


def write_iac(anns: list[IACAnnotation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in anns:
            fh.write(json.dumps({"pair_id": a.pair_id, "scores": a.scores}) + "\n")


def write_fixtures(out_dir, seed: int = 0) -> dict[str, Path]:
    """Write every fixture file into ``out_dir`` and return their paths by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "pairs": out / "pairs.jsonl",
        "dev_pairs": out / "dev_pairs.jsonl",
        "embeddings": out / "embeddings.txt",
        "lexicon": out / "affect.tsv",
        "threads": out / "threads.jsonl",
        "iac_pairs": out / "iac_pairs.jsonl",
        "iac": out / "iac_scores.jsonl",
        "awtp": out / "awtp_wikipedia_train.jsonl",
    }
    write_pairs_jsonl(separable_pairs(seed=seed), paths["pairs"])
    write_pairs_jsonl(separable_pairs(n_per_label=4, seed=seed + 1), paths["dev_pairs"])
    write_embeddings(fixture_embeddings(seed=seed), paths["embeddings"])
    write_lexicon(fixture_lexicon(), paths["lexicon"])
    write_posts(thread_posts(), paths["threads"])
    iac_pairs, anns = iac_fixture()
    write_pairs_jsonl(iac_pairs, paths["iac_pairs"])
    write_iac(anns, paths["iac"])
    write_pairs_jsonl(awtp_pairs(seed=seed), paths["awtp"])
    return paths
