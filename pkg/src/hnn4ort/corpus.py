"""Bootstrapped training corpus: agree-of-three intersection over extractor
outputs, span alignment, tagging, splitting, vocabularies and word vectors.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, InputError
from .tagspace import (
    REL_LABELS,
    Sentence,
    SpanSet,
    TagSchemeError,
    Triple,
    decode_role,
    relation_tags,
    validate_order,
)

log = logging.getLogger(__name__)

UNK, PAD = "<unk>", "<pad>"
UNK_ID, PAD_ID = 0, 1

_TERMINAL_PUNCT = re.compile(r"[\s.,;:!?]+$")


@dataclass(frozen=True)
class ExtractorOutput:
    extractor: str
    sentence_id: str
    triple: tuple[str, str, str]
    confidence: float | None = None

    def __post_init__(self):
        if any(not p.strip() for p in self.triple):
            raise InputError(f"empty phrase in {self.triple!r}")


@dataclass(frozen=True)
class CorpusRecord:
    sentence: Sentence
    pair: tuple[SpanSet, SpanSet]
    gold_tags: tuple[str, ...]
    source: str = ""

    def __post_init__(self):
        if len(self.gold_tags) != len(self.sentence):
            raise InputError("gold_tags length differs from sentence length")
        if set(self.pair[0]) & set(self.pair[1]):
            raise InputError(f"argument spans overlap: {self.pair}")
        if any(t not in REL_LABELS for t in self.gold_tags):
            raise InputError(f"gold_tags outside relation alphabet: {self.gold_tags}")

    @property
    def sentence_id(self) -> str:
        return self.sentence.id

    @property
    def relation(self) -> SpanSet | None:
        return decode_role(self.gold_tags, "R")[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "sentence_id": self.sentence.id,
                "tokens": list(self.sentence.tokens),
                "pos": list(self.sentence.pos),
                "arg1_positions": list(self.pair[0]),
                "arg2_positions": list(self.pair[1]),
                "tags": list(self.gold_tags),
                "source": self.source,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "CorpusRecord":
        d = json.loads(line)
        sentence = Sentence(d["sentence_id"], d["tokens"], d["pos"])
        return cls(
            sentence,
            (tuple(d["arg1_positions"]), tuple(d["arg2_positions"])),
            tuple(d["tags"]),
            d.get("source", ""),
        )


def make_record(sentence: Sentence, triple: Triple, source: str = "") -> CorpusRecord:
    return CorpusRecord(sentence, (triple.arg1, triple.arg2), relation_tags(sentence, triple), source)


# ---------------------------------------------------------------------------
# Intersection and alignment
# ---------------------------------------------------------------------------


def normalize_phrase(text: str) -> str:
    text = " ".join(text.lower().split())
    return _TERMINAL_PUNCT.sub("", text)


def normalize_triple(triple: Sequence[str]) -> tuple[str, str, str]:
    a, r, b = (normalize_phrase(p) for p in triple)
    return a, r, b


def intersect(
    outputs: Iterable[ExtractorOutput], required: int = 3, min_conf: float = 0.5
) -> dict[str, list[tuple[str, str, str]]]:
    """Triples produced by at least ``required`` distinct extractors.

    Outputs with a confidence not above ``min_conf`` are dropped first;
    outputs without a confidence are kept. Result lists are sorted so the
    answer does not depend on input order.
    """
    if required < 2:
        raise InputError(f"required must be >= 2, got {required}")
    votes: dict[tuple[str, tuple[str, str, str]], set[str]] = defaultdict(set)
    for out in outputs:
        if out.confidence is not None and not out.confidence > min_conf:
            continue
        key = normalize_triple(out.triple)
        if not all(key):
            log.warning("skipping %s triple that normalizes to empty: %r", out.extractor, out.triple)
            continue
        votes[(out.sentence_id, key)].add(out.extractor)
    agreed: dict[str, list[tuple[str, str, str]]] = defaultdict(list)
    for (sid, triple), names in votes.items():
        if len(names) >= required:
            agreed[sid].append(triple)
    return {sid: sorted(ts) for sid, ts in sorted(agreed.items())}


def _match_contiguous(words, tokens, start):
    n = len(words)
    for s in range(start, len(tokens) - n + 1):
        if all(tokens[s + k] == w for k, w in enumerate(words)):
            return tuple(range(s, s + n))
    return None


def _match_greedy(words, tokens, start):
    out, i = [], start
    for w in words:
        while i < len(tokens) and tokens[i] != w:
            i += 1
        if i == len(tokens):
            return None
        out.append(i)
        i += 1
    return tuple(out)


def _align(words3, tokens, contiguous_args):
    spans, start = [], 0
    for role, words in zip(("arg1", "rel", "arg2"), words3):
        if role != "rel" and contiguous_args:
            span = _match_contiguous(words, tokens, start)
        else:
            span = _match_greedy(words, tokens, start)
        if span is None:
            return None
        spans.append(span)
        start = span[-1] + 1
    return Triple(*spans)


def align_triple(sentence: Sentence, triple: Sequence[str]) -> Triple | None:
    """Map phrase strings onto token positions; None when unalignable.

    Phrases are matched left to right, each after the previous one ends,
    case-insensitively. Arguments prefer their leftmost contiguous
    occurrence; if that leaves no room for the rest, every phrase falls
    back to leftmost greedy subsequence matching, which finds an
    alignment whenever one exists.
    """
    tokens = [t.lower() for t in sentence.tokens]
    words3 = [normalize_phrase(p).split() for p in triple]
    if any(not w for w in words3):
        return None
    aligned = _align(words3, tokens, contiguous_args=True) or _align(
        words3, tokens, contiguous_args=False
    )
    if aligned is None or validate_order(sentence, aligned):
        return None
    return aligned


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class CorpusStats:
    sentences: int = 0
    sentences_with_records: int = 0
    agreed_triples: int = 0
    records: int = 0
    rejects: Counter = field(default_factory=Counter)
    overlapping_records: int = 0

    @property
    def overlap_proportion(self) -> float:
        return self.overlapping_records / self.records if self.records else 0.0

    def as_dict(self) -> dict:
        d = {
            "sentences": self.sentences,
            "sentences_with_records": self.sentences_with_records,
            "agreed_triples": self.agreed_triples,
            "records": self.records,
            "overlapping_records": self.overlapping_records,
            "overlap_proportion": round(self.overlap_proportion, 6),
        }
        for reason in sorted(self.rejects):
            d[f"rejected_{reason}"] = self.rejects[reason]
        return d


def _records_for_sentence(args):
    sentence, triples = args
    records, rejects, seen = [], Counter(), set()
    for phrases in triples:
        aligned = align_triple(sentence, phrases)
        if aligned is None:
            rejects["unalignable"] += 1
            continue
        if aligned in seen:
            rejects["duplicate"] += 1
            continue
        seen.add(aligned)
        try:
            records.append(make_record(sentence, aligned, source="agreed"))
        except TagSchemeError:
            rejects["order_violation"] += 1
    return records, rejects


def build_records(
    sentences: Sequence[Sentence],
    agreed: dict[str, list[tuple[str, str, str]]],
    workers: int = 1,
) -> tuple[list[CorpusRecord], CorpusStats]:
    """One record per (sentence, aligned triple), in sentence-id order."""
    stats = CorpusStats(sentences=len(sentences))
    by_id = {s.id: s for s in sentences}
    for sid in agreed:
        if sid not in by_id:
            stats.rejects["unknown_sentence"] += len(agreed[sid])
    jobs = [(by_id[sid], agreed[sid]) for sid in sorted(agreed) if sid in by_id]
    stats.agreed_triples = sum(len(ts) for ts in agreed.values())
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_records_for_sentence, jobs, chunksize=64))
    else:
        results = [_records_for_sentence(j) for j in jobs]
    records = []
    for recs, rejects in results:
        records.extend(recs)
        stats.rejects.update(rejects)
        if recs:
            stats.sentences_with_records += 1
        if len(recs) >= 2:
            stats.overlapping_records += len(recs)
    stats.records = len(records)
    return records, stats


def split(
    records: Sequence[CorpusRecord], val_fraction: float = 0.172, seed: int = 13
) -> tuple[list[CorpusRecord], list[CorpusRecord]]:
    """Sentence-level shuffled split; every sentence lands on exactly one side."""
    if not 0.0 < val_fraction < 1.0:
        raise InputError(f"val_fraction must be in (0, 1), got {val_fraction}")
    ids = sorted({r.sentence_id for r in records})
    if len(ids) < 2:
        raise InputError(f"need at least 2 sentences to split, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_val = min(max(int(round(val_fraction * len(ids))), 1), len(ids) - 1)
    val_ids = {ids[i] for i in order[:n_val]}
    train = [r for r in records if r.sentence_id not in val_ids]
    val = [r for r in records if r.sentence_id in val_ids]
    return train, val


# ---------------------------------------------------------------------------
# Vocabulary and embeddings
# ---------------------------------------------------------------------------


class Vocab:
    """Token to index map with UNK at 0 and PAD at 1."""

    def __init__(self, tokens: Iterable[str] = (), lowercase: bool = True):
        self.lowercase = lowercase
        self.itos: list[str] = [UNK, PAD]
        self.stoi: dict[str, int] = {UNK: UNK_ID, PAD: PAD_ID}
        for tok in tokens:
            self.add(tok)

    def _key(self, token: str) -> str:
        return token.lower() if self.lowercase else token

    def add(self, token: str) -> int:
        key = self._key(token)
        if key not in self.stoi:
            self.stoi[key] = len(self.itos)
            self.itos.append(key)
        return self.stoi[key]

    def index(self, token: str) -> int:
        return self.stoi.get(self._key(token), UNK_ID)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return self._key(token) in self.stoi

    def to_dict(self) -> dict:
        return {"lowercase": self.lowercase, "itos": self.itos}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        v = cls(lowercase=d["lowercase"])
        for tok in d["itos"][2:]:
            v.add(tok)
        return v


def build_vocabs(records: Iterable[CorpusRecord]) -> tuple[Vocab, Vocab]:
    """Word and POS vocabularies in first-seen order."""
    words, pos = Vocab(), Vocab(lowercase=False)
    for r in records:
        for t in r.sentence.tokens:
            words.add(t)
        for p in r.sentence.pos:
            pos.add(p)
    return words, pos


def load_word_vectors(
    path: str | Path | None, vocab: Vocab, dim: int, seed: int = 13, scale: float = 0.05
) -> tuple[np.ndarray, int]:
    """Embedding table aligned to ``vocab`` and the number of rows taken from file.

    Text format, one ``token v1 v2 ...`` per line; a leading ``count dim``
    header line is skipped. Rows absent from the file are drawn uniformly
    from ``[-scale, scale]``.
    """
    table = np.random.default_rng(seed).uniform(-scale, scale, size=(len(vocab), dim))
    if path is None:
        return table, 0
    hits = 0
    seen_dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            token, comps = parts[0], [p for p in parts[1:] if p]
            if seen_dim is None:
                seen_dim = len(comps)
                if seen_dim != dim:
                    raise FormatError(f"{path}:{lineno}: vectors have dim {seen_dim}, expected {dim}")
            elif len(comps) != seen_dim:
                raise FormatError(
                    f"{path}:{lineno}: {len(comps)} components, earlier lines had {seen_dim}"
                )
            try:
                vec = np.array([float(c) for c in comps])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric vector component") from None
            if token in vocab and vocab.index(token) not in (UNK_ID, PAD_ID):
                table[vocab.index(token)] = vec
                hits += 1
    return table, hits


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def read_extractor_outputs(path: str | Path) -> list[ExtractorOutput]:
    """Tab-separated: sentence_id, extractor, confidence, arg1, rel, arg2.

    Malformed lines are logged and skipped; an empty confidence field means
    the extractor gives none.
    """
    outputs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 6:
                    raise ValueError(f"expected 6 fields, got {len(parts)}")
                sid, name, conf, a1, rel, a2 = parts
                confidence = float(conf) if conf.strip() else None
                outputs.append(ExtractorOutput(name, sid, (a1, rel, a2), confidence))
            except (ValueError, InputError) as exc:
                log.warning("%s:%d: skipping malformed extractor record (%s)", path, lineno, exc)
    return outputs


def parse_sentence_line(line: str) -> Sentence:
    sid, _, rest = line.rstrip("\n").partition("\t")
    tokens, pos = [], []
    for item in rest.split(" "):
        if not item:
            continue
        surface, sep, tag = item.rpartition("_")
        if not sep or not surface:
            raise FormatError(f"token {item!r} is not surface_POS")
        tokens.append(surface)
        pos.append(tag)
    return Sentence(sid, tokens, pos)


def format_sentence_line(sentence: Sentence) -> str:
    body = " ".join(f"{t}_{p}" for t, p in zip(sentence.tokens, sentence.pos))
    return f"{sentence.id}\t{body}"


def read_sentences(path: str | Path) -> list[Sentence]:
    """``sentence_id<TAB>tok_POS tok_POS ...`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                out.append(parse_sentence_line(line))
            except (FormatError, InputError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def read_corpus(path: str | Path) -> list[CorpusRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(CorpusRecord.from_json(line))
            except (ValueError, KeyError, InputError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_corpus(path: str | Path, records: Iterable[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
