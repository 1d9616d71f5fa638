"""Relation-level scoring of extractions against gold triples.

Only the relation phrase is judged; arguments identify which candidate
pair an extraction answers.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import partial
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import normalize_phrase
from .errors import ConfigError, FormatError, InputError
from .tagspace import MISSED, OK, SCHEME_VIOLATION

CRITERIA = ("exact_span", "exact_string", "head_overlap")

# Closed-class words skipped when picking the head of a relation phrase.
FUNCTION_WORDS = frozenset(
    "a an the of in on at by for to from with as into about than over under "
    "will would shall should can could may might must do does did "
    "be is am are was were been being has have had not up out off".split()
)


@dataclass(frozen=True)
class Extraction:
    sentence_id: str
    arg1: str
    rel: str
    arg2: str
    confidence: float = 1.0
    status: str = OK
    arg1_span: tuple[int, ...] | None = None
    rel_span: tuple[int, ...] | None = None
    arg2_span: tuple[int, ...] | None = None

    def __post_init__(self):
        if not (math.isfinite(self.confidence) and self.confidence > 0):
            raise InputError(f"confidence must be finite and positive, got {self.confidence}")

    @property
    def accepted(self) -> bool:
        return self.status == OK

    def pair_key(self):
        if self.arg1_span is not None and self.arg2_span is not None:
            return (self.sentence_id, self.arg1_span, self.arg2_span)
        return (self.sentence_id, normalize_phrase(self.arg1), normalize_phrase(self.arg2))


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, n_pred: int, n_gold: int) -> "MetricsReport":
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gold if n_gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f1, tp, n_pred - tp, n_gold - tp)


@dataclass(frozen=True)
class PRCurve:
    thresholds: tuple[float, ...]
    recall: tuple[float, ...]
    precision: tuple[float, ...]
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall, self.precision))


@dataclass(frozen=True)
class ErrorBreakdown:
    missed: int = 0
    scheme_violation: int = 0
    wrong_start: int = 0
    wrong_end: int = 0

    @property
    def total(self) -> int:
        return self.missed + self.scheme_violation + self.wrong_start + self.wrong_end

    def proportions(self) -> dict[str, float]:
        n = self.total
        return {k: (v / n if n else 0.0) for k, v in asdict(self).items()}


def _head(words: Sequence[str]) -> int:
    """Index of the last content word, or of the last word if all are function words."""
    for i in range(len(words) - 1, -1, -1):
        if words[i] not in FUNCTION_WORDS:
            return i
    return len(words) - 1


def match_relation(pred: Extraction, gold: Extraction, criterion: str = "exact_span") -> bool:
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
    if pred.sentence_id != gold.sentence_id:
        return False
    if criterion == "exact_span":
        if pred.rel_span is None or gold.rel_span is None:
            raise InputError("exact_span matching needs relation positions on both sides")
        return pred.rel_span == gold.rel_span
    pw, gw = normalize_phrase(pred.rel).split(), normalize_phrase(gold.rel).split()
    if criterion == "exact_string":
        return pw == gw
    if not pw or not gw:
        return False
    hp, hg = _head(pw), _head(gw)
    if (
        pred.rel_span is not None
        and gold.rel_span is not None
        and len(pred.rel_span) == len(pw)
        and len(gold.rel_span) == len(gw)
    ):
        return pred.rel_span[hp] == gold.rel_span[hg]
    return pw[hp] == gw[hg]


def _by_sentence(items: Iterable[Extraction]) -> dict[str, list[Extraction]]:
    out: dict[str, list[Extraction]] = defaultdict(list)
    for x in items:
        out[x.sentence_id].append(x)
    return out


def _ranked(preds: Iterable[Extraction]) -> list[Extraction]:
    """Accepted predictions by descending confidence, input order on ties."""
    return sorted((p for p in preds if p.accepted), key=lambda p: -p.confidence)


def _greedy(preds: Sequence[Extraction], golds: Sequence[Extraction], criterion: str):
    """One-to-one greedy matching; returns per-pred gold index or None."""
    used = [False] * len(golds)
    hits = []
    for p in preds:
        hit = None
        for j, g in enumerate(golds):
            if not used[j] and match_relation(p, g, criterion):
                used[j] = True
                hit = j
                break
        hits.append(hit)
    return hits


def _sentence_tp(args, criterion):
    preds, golds = args
    return sum(h is not None for h in _greedy(preds, golds, criterion))


def prf(
    preds: Iterable[Extraction],
    golds: Iterable[Extraction],
    criterion: str = "exact_span",
    workers: int = 1,
) -> MetricsReport:
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
    ranked = _ranked(preds)
    golds = list(golds)
    pred_by, gold_by = _by_sentence(ranked), _by_sentence(golds)
    jobs = [(pred_by[s], gold_by.get(s, [])) for s in sorted(pred_by)]
    fn = partial(_sentence_tp, criterion=criterion)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            tp = sum(pool.map(fn, jobs, chunksize=64))
    else:
        tp = sum(map(fn, jobs))
    return MetricsReport.from_counts(tp, len(ranked), len(golds))


def pr_curve(
    preds: Iterable[Extraction], golds: Iterable[Extraction], criterion: str = "exact_span"
) -> PRCurve:
    """Precision/recall at every distinct confidence threshold, high to low.

    Predictions sharing a confidence enter together. The area is the
    trapezoid rule over recall, starting from recall 0 at the curve's
    highest precision.
    """
    ranked = _ranked(preds)
    golds = list(golds)
    if not ranked:
        return PRCurve((), (), (), 0.0)
    gold_by = _by_sentence(golds)
    used = {s: [False] * len(g) for s, g in gold_by.items()}
    thresholds, recall, precision = [], [], []
    tp = 0
    n_gold = len(golds)
    for k, p in enumerate(ranked):
        for j, g in enumerate(gold_by.get(p.sentence_id, ())):
            if not used[p.sentence_id][j] and match_relation(p, g, criterion):
                used[p.sentence_id][j] = True
                tp += 1
                break
        if k + 1 < len(ranked) and ranked[k + 1].confidence == p.confidence:
            continue
        thresholds.append(p.confidence)
        recall.append(tp / n_gold if n_gold else 0.0)
        precision.append(tp / (k + 1))
    r_prev, p_prev = 0.0, max(precision)
    auc = 0.0
    for r, p in zip(recall, precision):
        auc += (r - r_prev) * (p + p_prev) / 2.0
        r_prev, p_prev = r, p
    return PRCurve(tuple(thresholds), tuple(recall), tuple(precision), auc)


def categorize_errors(
    preds: Iterable[Extraction], golds: Iterable[Extraction], criterion: str = "exact_span"
) -> ErrorBreakdown:
    """Assign each uncredited gold item to one of four error classes.

    Credit follows the same greedy matching as ``prf``. An uncredited gold
    item is *missed* if no prediction answers its argument pair or the
    decoder found no relation, a *scheme violation* if the decoded tags were
    ill-formed, otherwise *wrong start* when the first relation token
    differs and *wrong end* for any remaining difference.
    """
    preds, golds = list(preds), list(golds)
    ranked = _ranked(preds)
    pred_by, gold_by = _by_sentence(ranked), _by_sentence(golds)
    credited = set()
    for sid, gs in gold_by.items():
        for h in _greedy(pred_by.get(sid, []), gs, criterion):
            if h is not None:
                credited.add((sid, h))
    answer = {}
    for p in preds:
        answer.setdefault(p.pair_key(), p)
    counts = Counter()
    for sid, gs in gold_by.items():
        for j, g in enumerate(gs):
            if (sid, j) in credited:
                continue
            p = answer.get(g.pair_key())
            if p is None or p.status == MISSED:
                counts["missed"] += 1
            elif p.status == SCHEME_VIOLATION:
                counts["scheme_violation"] += 1
            elif _start(p) != _start(g):
                counts["wrong_start"] += 1
            else:
                counts["wrong_end"] += 1
    return ErrorBreakdown(**counts)


def _start(x: Extraction):
    if x.rel_span:
        return x.rel_span[0]
    words = normalize_phrase(x.rel).split()
    return words[0] if words else None


def overlap_subset(records: Sequence, min_triples: int = 2) -> tuple[list, float]:
    """Items whose sentence hosts at least ``min_triples`` gold triples, and their share."""
    counts = Counter(r.sentence_id for r in records)
    subset = [r for r in records if counts[r.sentence_id] >= min_triples]
    return subset, (len(subset) / len(records) if records else 0.0)


# ---------------------------------------------------------------------------
# File formats and reports
# ---------------------------------------------------------------------------


def _fmt_span(span) -> str:
    return "" if span is None else ",".join(str(i) for i in span)


def _parse_span(text: str):
    text = text.strip()
    return tuple(int(i) for i in text.split(",")) if text else None


def format_extraction(x: Extraction) -> str:
    """sentence_id, confidence, arg1, rel, arg2, status, arg1/rel/arg2 positions."""
    fields = [
        x.sentence_id,
        repr(float(x.confidence)),
        x.arg1,
        x.rel,
        x.arg2,
        x.status,
        _fmt_span(x.arg1_span),
        _fmt_span(x.rel_span),
        _fmt_span(x.arg2_span),
    ]
    return "\t".join(fields)


def parse_extraction(line: str) -> Extraction:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 5:
        raise FormatError(f"expected at least 5 tab-separated fields, got {len(parts)}")
    parts += [""] * (9 - len(parts))
    sid, conf, a1, rel, a2, status, s1, sr, s2 = parts[:9]
    try:
        confidence = float(conf) if conf.strip() else 1.0
        spans = [_parse_span(s) for s in (s1, sr, s2)]
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return Extraction(sid, a1, rel, a2, confidence, status or OK, *spans)


def read_extractions(path: str | Path) -> list[Extraction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                out.append(parse_extraction(line))
            except (FormatError, InputError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_extractions(path: str | Path, items: Iterable[Extraction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x in items:
            fh.write(format_extraction(x) + "\n")


def format_table(report: MetricsReport) -> str:
    rows = [("precision", f"{report.precision:.4f}"), ("recall", f"{report.recall:.4f}"),
            ("f1", f"{report.f1:.4f}"), ("tp", str(report.tp)), ("fp", str(report.fp)),
            ("fn", str(report.fn))]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v:>8}" for k, v in rows)


def format_kv(prefix: str, values: dict) -> str:
    return "\n".join(f"{prefix}.{k}={v!r}" if isinstance(v, float) else f"{prefix}.{k}={v}"
                     for k, v in values.items())


def write_pr_curve(path: str | Path, curve: PRCurve) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold\trecall\tprecision\n")
        for t, r, p in zip(curve.thresholds, curve.recall, curve.precision):
            fh.write(f"{t!r}\t{r!r}\t{p!r}\n")
