"""Small generated corpora with known ground truth, plus the worked examples
used throughout the tests.
"""

from __future__ import annotations

import numpy as np

from .corpus import CorpusRecord, ExtractorOutput, make_record
from .tagspace import Sentence, Triple

# "The America President Trump will visit the Apple founded by Steven Paul Jobs"
WORKED_SENTENCE = Sentence(
    "worked",
    "The America President Trump will visit the Apple founded by Steven Paul Jobs".split(),
    "DT NNP NNP NNP MD VB DT NNP VBN IN NNP NNP NNP".split(),
)
WORKED_TRIPLES = (
    Triple((0, 1), (2,), (3,)),
    Triple((3,), (4, 5), (6, 7)),
    Triple((6, 7), (8, 9), (10, 11, 12)),
)
WORKED_PHRASES = (
    ("The America", "President", "Trump"),
    ("Trump", "will visit", "the Apple"),
    ("the Apple", "founded by", "Steven Paul Jobs"),
)

CURRENT_SENTENCE = Sentence(
    "current",
    "He thought the current would take him out , then he could bring help to rescue me".split(),
    "PRP VBD DT NN MD VB PRP RP , RB PRP MD VB NN TO VB PRP".split(),
)
# (the current, would take out, him): "him" sits between "take" and "out".
CURRENT_TRIPLE = Triple((2, 3), (4, 5, 7), (6,))

NAMES = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"]
NOUNS = ["company", "city", "museum", "team", "river", "book", "school", "bank"]
# (past / participle, base form)
VERBS = [("visited", "visit"), ("founded", "found"), ("joined", "join"),
         ("praised", "praise"), ("built", "build"), ("sold", "sell")]

_POS = {",": ",", ".": ".", "the": "DT", "will": "MD", "soon": "RB", "was": "VBD",
        "by": "IN", "and": "CC", "who": "WP"}


def _templates(rng):
    def pick(seq, k=1):
        idx = rng.choice(len(seq), size=k, replace=False)
        return [seq[i] for i in idx]

    n1, n2 = pick(NAMES, 2)
    o1, o2 = pick(NOUNS, 2)
    (v1, b1), (v2, _) = pick(VERBS, 2)
    return [
        # (tokens with POS, triples as (arg1, rel, arg2) index tuples)
        ([(n1, "NNP"), (v1, "VBD"), ("the", "DT"), (o1, "NN"), (".", ".")],
         [((0,), (1,), (2, 3))]),
        ([(n1, "NNP"), ("will", "MD"), (b1, "VB"), ("the", "DT"), (o1, "NN"), (".", ".")],
         [((0,), (1, 2), (3, 4))]),
        ([(n1, "NNP"), ("will", "MD"), ("soon", "RB"), (b1, "VB"), ("the", "DT"), (o1, "NN"), (".", ".")],
         [((0,), (1, 3), (4, 5))]),
        ([("the", "DT"), (o1, "NN"), ("was", "VBD"), (v1, "VBN"), ("by", "IN"), (n1, "NNP"), (".", ".")],
         [((0, 1), (2, 3, 4), (5,))]),
        ([(n1, "NNP"), (v1, "VBD"), ("the", "DT"), (o1, "NN"), ("and", "CC"), (n2, "NNP"),
          (v2, "VBD"), ("the", "DT"), (o2, "NN"), (".", ".")],
         [((0,), (1,), (2, 3)), ((5,), (6,), (7, 8))]),
        ([(n1, "NNP"), (",", ","), ("who", "WP"), (v1, "VBD"), ("the", "DT"), (o1, "NN"), (",", ","),
          (v2, "VBD"), ("the", "DT"), (o2, "NN"), (".", ".")],
         [((0,), (3,), (4, 5)), ((0,), (7,), (8, 9))]),
        ([(n1, "NNP"), (v1, "VBD"), (n2, "NNP"), ("and", "CC"), (v2, "VBD"), ("the", "DT"),
          (o1, "NN"), (".", ".")],
         [((0,), (1,), (2,)), ((0,), (4,), (5, 6))]),
    ]


def templated_corpus(n_sentences: int = 64, seed: int = 0) -> list[tuple[Sentence, list[Triple]]]:
    """Sentences drawn from seven templates (about 40 word types, at most 11 tokens)."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_sentences):
        options = _templates(rng)
        toks, triples = options[int(rng.integers(len(options)))]
        sentence = Sentence(f"s{k:04d}", [t for t, _ in toks], [p for _, p in toks])
        out.append((sentence, [Triple(*t) for t in triples]))
    return out


def templated_records(n_sentences: int = 64, seed: int = 0) -> list[CorpusRecord]:
    return [make_record(s, t, source="templated") for s, ts in templated_corpus(n_sentences, seed) for t in ts]


def worked_records() -> list[CorpusRecord]:
    return [make_record(WORKED_SENTENCE, t, source="worked") for t in WORKED_TRIPLES]


def extractor_fixture(
    corpus: list[tuple[Sentence, list[Triple]]],
    seed: int = 0,
    extractors: tuple[str, ...] = ("ollie", "clausie", "openie4"),
) -> tuple[list[ExtractorOutput], dict[str, set]]:
    """Extractor outputs over ``corpus`` with a known agreement count per triple.

    Each gold triple is emitted by a random number (1..3) of extractors with
    varied casing and trailing punctuation; some emissions get a low
    confidence and must be ignored. Returns the outputs and, per agreement
    level k, the set of (sentence_id, normalized phrases) agreed by >= k
    extractors after confidence filtering.
    """
    rng = np.random.default_rng(seed)
    outputs, support = [], {}
    for sentence, triples in corpus:
        for t in triples:
            a1, rel, a2 = t.phrases(sentence)
            voters = [e for e in extractors if rng.random() < 0.7]
            valid = 0
            for e in voters:
                low = e != "clausie" and rng.random() < 0.15
                conf = None if e == "clausie" else (0.3 if low else round(0.6 + 0.4 * rng.random(), 3))
                rel_text = rel.upper() if rng.random() < 0.3 else rel
                a2_text = a2 + (" ." if rng.random() < 0.3 else "")
                outputs.append(ExtractorOutput(e, sentence.id, (a1, rel_text + "  ", a2_text), conf))
                valid += not low
            key = (sentence.id, (a1.lower(), rel.lower(), a2.lower()))
            support[key] = valid
    order = rng.permutation(len(outputs))
    outputs = [outputs[i] for i in order]
    agreed = {k: {key for key, v in support.items() if v >= k} for k in range(1, len(extractors) + 1)}
    return outputs, agreed
