"""Overlap-aware BIOES tagging: one tag sequence per triple.

A sentence with n triples yields n independent sequences. Roles are
``E1`` (Argument1), ``R`` (Relation) and ``E2`` (Argument2); each span is
tagged B/I/E or S, everything else O. Relation spans may have gaps, so
well-formedness is checked on each role's labels with O tokens removed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .errors import InputError

ROLES = ("E1", "R", "E2")
OUTSIDE = "O"
TAG_LABELS = tuple(f"{r}-{p}" for r in ROLES for p in "BIES") + (OUTSIDE,)

# Model output alphabet: arguments are given, only the relation is tagged.
REL_LABELS = ("R-B", "R-I", "R-E", "R-S", OUTSIDE)
REL_INDEX = {label: i for i, label in enumerate(REL_LABELS)}

# Argument input alphabet fed to the model as a 10-way one-hot.
ARG_SYMBOLS = ("E1-B", "E1-I", "E1-E", "E1-S", "E2-B", "E2-I", "E2-E", "E2-S", OUTSIDE, "PAD")
ARG_INDEX = {s: i for i, s in enumerate(ARG_SYMBOLS)}
ARG_PAD = ARG_INDEX["PAD"]

OK = "ok"
MISSED = "missed"
SCHEME_VIOLATION = "scheme_violation"
MISSING_ARGUMENT = "missing_argument"

_WELL_FORMED = re.compile(r"^(S|BI*E)$")

SpanSet = tuple[int, ...]


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[str, ...]
    pos: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "pos", tuple(self.pos))
        if not self.tokens:
            raise InputError(f"sentence {self.id!r} has no tokens")
        if len(self.tokens) != len(self.pos):
            raise InputError(
                f"sentence {self.id!r}: {len(self.tokens)} tokens but {len(self.pos)} POS tags"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    def phrase(self, span: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in span)


@dataclass(frozen=True)
class Triple:
    """Token-index span sets for (Argument1, Relation, Argument2).

    Spans are stored as given; ordering is checked by ``validate_order``.
    """

    arg1: SpanSet
    rel: SpanSet
    arg2: SpanSet

    def __post_init__(self):
        for role in ("arg1", "rel", "arg2"):
            span = tuple(int(i) for i in getattr(self, role))
            if any(i < 0 for i in span):
                raise InputError(f"{role}: negative token index in {span}")
            if len(set(span)) != len(span):
                raise InputError(f"{role}: repeated token index in {span}")
            object.__setattr__(self, role, span)
        if not self.arg1 or not self.arg2:
            raise InputError("both arguments need at least one token")
        a1, r, a2 = set(self.arg1), set(self.rel), set(self.arg2)
        if a1 & r or a1 & a2 or r & a2:
            raise InputError(f"spans overlap: {self.arg1} / {self.rel} / {self.arg2}")

    def phrases(self, sentence: Sentence) -> tuple[str, str, str]:
        return sentence.phrase(self.arg1), sentence.phrase(self.rel), sentence.phrase(self.arg2)


@dataclass(frozen=True)
class DecodeResult:
    triple: Triple | None
    reason: str


class TagSchemeError(InputError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def _check_range(sentence: Sentence, triple: Triple) -> None:
    n = len(sentence)
    for role in ("arg1", "rel", "arg2"):
        bad = [i for i in getattr(triple, role) if i >= n]
        if bad:
            raise InputError(f"{role}: indices {bad} out of range for {n} tokens")


def validate_order(
    sentence: Sentence, triple: Triple, rel_words: Sequence[str] | None = None
) -> list[str]:
    """Word-order violations of ``triple`` in ``sentence``; empty means ok.

    ``rel_words`` are the relation words as an extractor wrote them; when
    given, each must be the sentence token at its position (no modified or
    added words).
    """
    _check_range(sentence, triple)
    tok = sentence.tokens
    problems = []
    if not triple.rel:
        return ["missing_relation: relation span is empty"]
    if max(triple.arg1) >= min(triple.rel):
        i, j = max(triple.arg1), min(triple.rel)
        problems.append(
            f"arg1_after_relation: Argument1 token {tok[i]!r} ({i}) does not precede "
            f"Relation token {tok[j]!r} ({j})"
        )
    if min(triple.arg2) <= max(triple.rel):
        i, j = min(triple.arg2), max(triple.rel)
        problems.append(
            f"arg2_before_relation: Argument2 token {tok[i]!r} ({i}) precedes "
            f"Relation token {tok[j]!r} ({j})"
        )
    if any(a >= b for a, b in zip(triple.rel, triple.rel[1:])):
        problems.append(f"relation_order: relation positions {triple.rel} are not increasing")
    if rel_words is not None:
        if len(rel_words) != len(triple.rel):
            problems.append("relation_words: word count differs from relation span")
        else:
            for w, i in zip(rel_words, triple.rel):
                if w.lower() != tok[i].lower():
                    problems.append(f"relation_words: {w!r} is not the sentence token {tok[i]!r}")
    return problems


def _span_labels(role: str, span: SpanSet) -> dict[int, str]:
    if len(span) == 1:
        return {span[0]: f"{role}-S"}
    labels = {i: f"{role}-I" for i in span}
    labels[span[0]] = f"{role}-B"
    labels[span[-1]] = f"{role}-E"
    return labels


def encode_tags(sentence: Sentence, triple: Triple) -> tuple[str, ...]:
    problems = validate_order(sentence, triple)
    if problems:
        raise TagSchemeError(problems)
    tags = [OUTSIDE] * len(sentence)
    for role, span in zip(ROLES, (triple.arg1, triple.rel, triple.arg2)):
        for i, label in _span_labels(role, span).items():
            tags[i] = label
    return tuple(tags)


def decode_role(tags: Sequence[str], role: str) -> tuple[SpanSet | None, str]:
    """Positions carrying ``role`` labels, or None with a reason code."""
    positions, letters = [], []
    for i, label in enumerate(tags):
        if label == OUTSIDE:
            continue
        r, _, p = label.rpartition("-")
        if r not in ROLES or p not in ("B", "I", "E", "S"):
            return None, SCHEME_VIOLATION
        if r == role:
            positions.append(i)
            letters.append(p)
    if not positions:
        return None, MISSED if role == "R" else MISSING_ARGUMENT
    if not _WELL_FORMED.match("".join(letters)):
        return None, SCHEME_VIOLATION
    return tuple(positions), OK


def decode_tags(sentence: Sentence, tags: Sequence[str]) -> DecodeResult:
    if len(tags) != len(sentence):
        raise InputError(f"{len(tags)} tags for {len(sentence)} tokens")
    rel, reason = decode_role(tags, "R")
    if rel is None:
        return DecodeResult(None, reason)
    arg1, r1 = decode_role(tags, "E1")
    arg2, r2 = decode_role(tags, "E2")
    for r in (r1, r2):
        if r != OK:
            return DecodeResult(None, r)
    return DecodeResult(Triple(arg1, rel, arg2), OK)


def relation_tags(sentence: Sentence, triple: Triple) -> tuple[str, ...]:
    """``encode_tags`` restricted to the model's relation-only alphabet."""
    return tuple(t if t.startswith("R-") else OUTSIDE for t in encode_tags(sentence, triple))


def argument_onehot(
    sentence: Sentence, pair: tuple[SpanSet, SpanSet], length: int | None = None
) -> list[int]:
    """Per-token indices into ``ARG_SYMBOLS``; positions past the sentence get PAD."""
    arg1, arg2 = (tuple(int(i) for i in s) for s in pair)
    n = len(sentence)
    if not arg1 or not arg2:
        raise InputError("argument spans must be non-empty")
    if set(arg1) & set(arg2):
        raise InputError(f"argument spans overlap: {arg1} / {arg2}")
    for span in (arg1, arg2):
        if any(i < 0 or i >= n for i in span):
            raise InputError(f"argument span {span} out of range for {n} tokens")
        if any(a >= b for a, b in zip(span, span[1:])):
            raise InputError(f"argument span {span} is not increasing")
    length = n if length is None else length
    if length < n:
        raise InputError(f"length {length} shorter than sentence ({n})")
    out = [ARG_INDEX[OUTSIDE]] * n + [ARG_PAD] * (length - n)
    for role, span in (("E1", arg1), ("E2", arg2)):
        for i, label in _span_labels(role, span).items():
            out[i] = ARG_INDEX[label]
    return out
